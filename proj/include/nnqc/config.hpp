#pragma once

#include <cstdint>
#include <string>

#include "nnqc/degrade.hpp"
#include "nnqc/fingerprint.hpp"
#include "nnqc/ldm.hpp"
#include "nnqc/manifold.hpp"
#include "nnqc/phantom.hpp"
#include "nnqc/toe.hpp"

namespace nnqc::config {

// One YAML document drives a whole run. Fixed-contract fields (latent
// channel count, frozen encoders) and dataset-derived fields (num_labels)
// are deliberately not part of the schema; the pipeline fills the latter
// from the fingerprint.
struct RunConfig {
  int schema_version = 1;
  std::string dataset_name = "phantom";
  std::string dataset_dir = "data/phantom";
  std::string out_dir = "out";
  std::uint64_t seed = 7;
  double eval_fraction = 0.2;  // subject-level evaluate split

  fingerprint::FingerprintOptions fp_options;
  manifold::VaeConfig vae;
  toe::ToeConfig toe;
  ldm::LdmConfig ldm;
  degrade::DegradeParams degrade;
  phantom::PhantomSpec phantom;

  void validate() const;

  /// Parses a single YAML document. Unknown keys anywhere in the document
  /// are a ConfigError; a missing section keeps its defaults. The
  /// document must carry `schema_version: 1`.
  static RunConfig from_yaml(const std::string& text);
  static RunConfig load(const std::string& path);

  /// Canonical rendering: fixed key order, shortest round-trip floats.
  /// Two configs with equal fields produce identical text.
  std::string to_yaml() const;

  /// sha256 of to_yaml(); embedded in every artifact this run produces.
  std::string digest() const;
};

}  // namespace nnqc::config
