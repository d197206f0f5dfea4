#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nnqc/config.hpp"
#include "nnqc/degrade.hpp"
#include "nnqc/fingerprint.hpp"
#include "nnqc/ldm.hpp"
#include "nnqc/manifold.hpp"
#include "nnqc/metrics.hpp"
#include "nnqc/toe.hpp"

namespace nnqc::pipeline {

// Artifact layout under <out_dir>/<dataset_name>/ (one model per dataset).
struct Paths {
  std::string root;

  static Paths derive(const config::RunConfig& cfg);
  std::string fingerprint() const { return root + "/fingerprint.json"; }
  std::string split() const { return root + "/split.json"; }
  std::string corpus_dir() const { return root + "/corpus"; }
  std::string vae_dir() const { return root + "/vae"; }
  std::string ldm_dir() const { return root + "/ldm"; }
  std::string reports_dir() const { return root + "/reports"; }
};

// Sidecar JSON describing one training stage's outputs. The content
// digest covers everything except `created_at`, so reruns with identical
// inputs produce identical digests.
struct CheckpointManifest {
  std::string stage;  // "vae" | "ldm"
  std::string dataset_name;
  std::uint64_t seed = 0;
  int epochs = 0;
  std::string fingerprint_hash;
  std::string config_digest;
  std::map<std::string, std::string> weight_digests;  // file name -> sha256
  double holdout_dice = 0.0;    // vae: reconstruction Dice, last epoch
  std::string stage1_digest;    // ldm: content digest of the vae manifest
  std::string encoder_id;       // ldm: frozen vision-expert identity
  double latent_scale = 1.0;    // ldm: z0 normalization factor
  std::string schedule_family;  // ldm: noise schedule family
  std::string created_at;       // RFC 3339; excluded from content_digest

  std::string content_digest() const;
  void save(const std::string& path) const;
  static CheckpointManifest load(const std::string& path);
};

// Subject-level train/eval split, fixed at fingerprint time so that every
// later stage sees the same partition.
struct SubjectSplit {
  std::vector<std::string> train;
  std::vector<std::string> eval;
  std::uint64_t seed = 0;

  void save(const std::string& path) const;
  static SubjectSplit load(const std::string& path);
};

/// Deterministic subject-level split: shuffle ids by seed, reserve
/// ceil(eval_fraction * n) for evaluation (at least 1, never all).
SubjectSplit split_subjects(const std::vector<std::string>& ids,
                            double eval_fraction, std::uint64_t seed);

/// pGT slices stacked back onto the subject's native grid (the 3D
/// aggregation step before subject-level metrics).
MaskGrid3D aggregate_subject(const std::vector<MaskGrid2D>& slices,
                             const fingerprint::RestoreMeta& meta);

// Everything cmd_qc/cmd_evaluate need to draw samples, loaded and
// digest-verified from the two stage directories.
struct LoadedModel {
  fingerprint::DatasetFingerprint fp;
  manifold::SegVae vae{nullptr};
  ldm::DiffusionUnet unet{nullptr};
  toe::PositionalExpert e1{nullptr};
  toe::RandomCnnEncoder e2{nullptr};
  toe::Fusion fusion{nullptr};
  ldm::NoiseSchedule sched;
  double latent_scale = 1.0;
  CheckpointManifest vae_manifest;
  CheckpointManifest ldm_manifest;

  ldm::SampleContext sample_context() const;
};

/// Loads fingerprint + both stages; verifies weight digests against the
/// manifests and the manifests' fingerprint hash against the on-disk
/// fingerprint (the latter check is skipped with force=true).
LoadedModel load_model(const config::RunConfig& cfg, bool force = false);

// ---------------------------------------------------------------------------
// Commands (the CLI is a thin wrapper over these)

/// Writes <dataset_dir> phantom volumes for the configured spec.
void cmd_phantom_gen(const config::RunConfig& cfg);

/// Extracts and saves the dataset fingerprint and the subject split.
void cmd_fingerprint(const config::RunConfig& cfg);

/// Stage 1: trains the mask VAE-GAN on clean training-split GT slices.
/// Requires the fingerprint; saves weights + manifest under vae/.
void cmd_train_vae(const config::RunConfig& cfg);

/// Stage 2: builds (or reuses) the degradation corpus over the training
/// split, then trains the conditional denoiser. Requires the fingerprint
/// and the stage-1 checkpoint; saves weights + manifest under ldm/.
void cmd_train_ldm(const config::RunConfig& cfg);

struct QcOptions {
  std::string image_path;
  std::string mask_path;
  std::string gt_path;  // optional; empty means "no GT available"
  std::string metric = "all";  // "dsc" | "hd95" | "all"
  int steps = 0;               // 0: use config sample_steps
  std::uint64_t seed = 0;      // 0: use config seed
  std::string out_prefix;      // report base path; empty: reports dir
  bool force = false;
  bool save_pgt = false;       // also write the pGT volume next to reports
};

/// Scores one subject's mask against a freshly sampled pseudo-GT.
metrics::QCReport cmd_qc(const config::RunConfig& cfg, const QcOptions& opt);

struct EvaluateOptions {
  std::string metric = "all";
  int steps = 0;
  std::uint64_t seed = 0;
  std::string out_prefix;
  bool force = false;
};

/// Degrades eval-split GTs across all five bands and compares pseudo
/// scores with real scores (r, MAE, per-band breakdown).
metrics::QCReport cmd_evaluate(const config::RunConfig& cfg,
                               const EvaluateOptions& opt);

/// Ranks three synthetic "models" (gt copies / light band / heavy band)
/// by pseudo score and by real score; reports Kendall tau.
metrics::QCReport cmd_rank(const config::RunConfig& cfg,
                           const EvaluateOptions& opt);

}  // namespace nnqc::pipeline
