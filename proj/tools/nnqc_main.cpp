// nnqc command-line front end. Subcommands map 1:1 onto the pipeline
// commands; this file only parses arguments, applies flag overrides to the
// run config and translates typed exceptions into exit codes.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "nnqc/config.hpp"
#include "nnqc/errors.hpp"
#include "nnqc/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

// Every subcommand takes --config; --seed overrides the config's seed.
void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run config YAML")
      ->required();
  cmd->add_option("--seed", args.seed, "override the config seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
}

nnqc::config::RunConfig load_config(const CommonArgs& args) {
  nnqc::config::RunConfig cfg =
      nnqc::config::RunConfig::load(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  // Determinism over throughput: thread count changes reduction order and
  // therefore bit-exact reproducibility of training runs.
  torch::set_num_threads(1);
  at::set_num_interop_threads(1);

  CLI::App app{"segmentation QC via pseudo-ground-truth restoration"};
  app.require_subcommand(1);

  CommonArgs common;
  nnqc::pipeline::QcOptions qc_opt;
  nnqc::pipeline::EvaluateOptions eval_opt;

  CLI::App* phantom = app.add_subcommand(
      "phantom-gen", "write a synthetic phantom dataset");
  add_common(phantom, common);

  CLI::App* fingerprint = app.add_subcommand(
      "fingerprint", "extract dataset statistics and the subject split");
  add_common(fingerprint, common);

  CLI::App* train_vae = app.add_subcommand(
      "train-vae", "stage 1: train the mask autoencoder");
  add_common(train_vae, common);

  CLI::App* train_ldm = app.add_subcommand(
      "train-ldm", "stage 2: train the conditional denoiser");
  add_common(train_ldm, common);

  CLI::App* qc = app.add_subcommand(
      "qc", "score one mask against a sampled pseudo-GT");
  add_common(qc, common);
  qc->add_option("--image", qc_opt.image_path, "image volume (.nii/.nii.gz)")
      ->required();
  qc->add_option("--mask", qc_opt.mask_path, "mask volume to score")
      ->required();
  qc->add_option("--gt", qc_opt.gt_path,
                 "reference mask for real-score columns (optional)");
  qc->add_option("--metric", qc_opt.metric, "dsc, hd95 or all");
  qc->add_option("--steps", qc_opt.steps, "DDIM steps (0: config value)");
  qc->add_option("--out", qc_opt.out_prefix, "report path prefix");
  qc->add_flag("--force", qc_opt.force,
               "skip the fingerprint-hash compatibility check");
  qc->add_flag("--save-pgt", qc_opt.save_pgt,
               "also write the sampled pseudo-GT volume");

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "pseudo-vs-real agreement over the eval split");
  add_common(evaluate, common);
  evaluate->add_option("--metric", eval_opt.metric, "dsc, hd95 or all");
  evaluate->add_option("--steps", eval_opt.steps,
                       "DDIM steps (0: config value)");
  evaluate->add_option("--out", eval_opt.out_prefix, "report path prefix");
  evaluate->add_flag("--force", eval_opt.force,
                     "skip the fingerprint-hash compatibility check");

  CLI::App* rank = app.add_subcommand(
      "rank", "rank synthetic models without ground truth");
  add_common(rank, common);
  rank->add_option("--metric", eval_opt.metric, "dsc, hd95 or all");
  rank->add_option("--steps", eval_opt.steps, "DDIM steps (0: config value)");
  rank->add_option("--out", eval_opt.out_prefix, "report path prefix");
  rank->add_flag("--force", eval_opt.force,
                 "skip the fingerprint-hash compatibility check");

  CLI11_PARSE(app, argc, argv);

  try {
    const nnqc::config::RunConfig cfg = load_config(common);
    if (common.seed_set) {
      qc_opt.seed = common.seed;
      eval_opt.seed = common.seed;
    }
    if (phantom->parsed()) nnqc::pipeline::cmd_phantom_gen(cfg);
    if (fingerprint->parsed()) nnqc::pipeline::cmd_fingerprint(cfg);
    if (train_vae->parsed()) nnqc::pipeline::cmd_train_vae(cfg);
    if (train_ldm->parsed()) nnqc::pipeline::cmd_train_ldm(cfg);
    if (qc->parsed()) nnqc::pipeline::cmd_qc(cfg, qc_opt);
    if (evaluate->parsed()) nnqc::pipeline::cmd_evaluate(cfg, eval_opt);
    if (rank->parsed()) nnqc::pipeline::cmd_rank(cfg, eval_opt);
    return nnqc::kOk;
  } catch (const nnqc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return nnqc::kConfigError;
  } catch (const nnqc::PrerequisiteError& e) {
    std::cerr << "missing prerequisite: " << e.what() << "\n";
    return nnqc::kMissingPrerequisite;
  } catch (const nnqc::TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return nnqc::kTrainingDivergence;
  } catch (const nnqc::BandUnreachable& e) {
    std::cerr << "quality band unreachable: " << e.what() << "\n";
    return nnqc::kBandUnreachable;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return nnqc::kFailure;
  }
}
