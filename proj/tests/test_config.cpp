#include <cstdio>
#include <fstream>
#include <string>

#include "nnqc/config.hpp"
#include "nnqc/errors.hpp"

#include "doctest_compat.hpp"  // after torch headers; see the header comment

using namespace nnqc;
using config::RunConfig;

TEST_CASE("config: yaml round trip preserves every field") {
  RunConfig a;
  a.dataset_name = "brains";
  a.dataset_dir = "/tmp/brains";
  a.out_dir = "/tmp/out";
  a.seed = 99;
  a.eval_fraction = 0.3;
  a.fp_options.target_size = {64, 48};
  a.fp_options.orientation = "LPS";
  a.fp_options.crop_margin = 1.5;
  a.vae.compression_factor = 8;
  a.vae.base_width = 24;
  a.vae.lambda_adv = 0.125;
  a.vae.epochs = 7;
  a.toe.d_e = 48;
  a.toe.n_heads = 8;
  a.toe.encoder_id = "random_cnn_v2";
  a.ldm.t_train = 500;
  a.ldm.schedule = "scaled_linear";
  a.ldm.channel_mults = {1, 2, 4};
  a.ldm.empty_mask_prob = 0.25;
  a.degrade.max_retries = 13;
  a.phantom.n_subjects = 11;
  a.phantom.noise_sigma = 12.5;

  const RunConfig b = RunConfig::from_yaml(a.to_yaml());
  CHECK(b.to_yaml() == a.to_yaml());
  CHECK(b.digest() == a.digest());
  CHECK(b.dataset_name == "brains");
  CHECK(b.seed == 99);
  CHECK(b.eval_fraction == doctest::Approx(0.3));
  CHECK(b.fp_options.target_size == std::array<int, 2>{64, 48});
  CHECK(b.fp_options.orientation == "LPS");
  CHECK(b.vae.compression_factor == 8);
  CHECK(b.vae.lambda_adv == doctest::Approx(0.125));
  CHECK(b.toe.encoder_id == "random_cnn_v2");
  CHECK(b.ldm.schedule == "scaled_linear");
  CHECK(b.ldm.channel_mults == std::vector<int>{1, 2, 4});
  CHECK(b.degrade.max_retries == 13);
  CHECK(b.phantom.n_subjects == 11);
}

TEST_CASE("config: digest is stable and field-sensitive") {
  RunConfig a;
  RunConfig b;
  CHECK(a.digest() == b.digest());
  CHECK(a.digest().size() == 64);
  b.seed = 8;
  CHECK(a.digest() != b.digest());
  b = RunConfig{};
  b.ldm.sample_steps = 21;
  CHECK(a.digest() != b.digest());
}

TEST_CASE("config: missing sections keep defaults") {
  const RunConfig cfg = RunConfig::from_yaml("schema_version: 1\n");
  const RunConfig defaults;
  CHECK(cfg.to_yaml() == defaults.to_yaml());
}

TEST_CASE("config: schema_version is required and checked") {
  CHECK_THROWS_AS(RunConfig::from_yaml("seed: 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_yaml("schema_version: 2\n"), ConfigError);
}

TEST_CASE("config: unknown keys are rejected at every level") {
  CHECK_THROWS_AS(RunConfig::from_yaml("schema_version: 1\nsede: 3\n"),
                  ConfigError);
  CHECK_THROWS_AS(
      RunConfig::from_yaml("schema_version: 1\nvae:\n  num_labels: 4\n"),
      ConfigError);  // dataset-derived, not configurable
  CHECK_THROWS_AS(
      RunConfig::from_yaml("schema_version: 1\nldm:\n  steps: 10\n"),
      ConfigError);
  CHECK_THROWS_AS(
      RunConfig::from_yaml("schema_version: 1\nfingerprint:\n  size: 8\n"),
      ConfigError);
  CHECK_THROWS_AS(RunConfig::from_yaml("schema_version: 1\nnot_a_map"),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::from_yaml("schema_version: [1, 2]\n"),
                  ConfigError);
}

TEST_CASE("config: the run seed drives the phantom generator") {
  const RunConfig cfg =
      RunConfig::from_yaml("schema_version: 1\nseed: 42\n"
                           "phantom:\n  n_subjects: 3\n");
  CHECK(cfg.seed == 42);
  CHECK(cfg.phantom.seed == 42);
}

TEST_CASE("config: validate catches inconsistent settings") {
  RunConfig cfg;
  cfg.eval_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig{};
  cfg.fp_options.target_size = {30, 30};  // not divisible by f = 4
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig{};
  cfg.dataset_name.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig{};
  cfg.ldm.t_train = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  CHECK_NOTHROW(RunConfig{}.validate());
}

TEST_CASE("config: load reads a file and reports IO failures") {
  const std::string path = "test_config_tmp.yaml";
  {
    std::ofstream out(path);
    out << "schema_version: 1\nseed: 17\nvae:\n  epochs: 3\n";
  }
  const RunConfig cfg = RunConfig::load(path);
  CHECK(cfg.seed == 17);
  CHECK(cfg.vae.epochs == 3);
  std::remove(path.c_str());

  CHECK_THROWS_AS(RunConfig::load("does_not_exist.yaml"), IoError);
}
