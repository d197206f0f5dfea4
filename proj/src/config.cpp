#include "nnqc/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "nnqc/digest.hpp"
#include "nnqc/errors.hpp"

namespace nnqc::config {

namespace {

// Shortest text that round-trips the double exactly; keeps the canonical
// YAML (and therefore the config digest) independent of locale and of
// iostream formatting defaults.
std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw ConfigError("config: unformattable number");
  return std::string(buf, ptr);
}

void check_keys(const YAML::Node& node, const std::string& where,
                const std::set<std::string>& allowed) {
  if (!node.IsDefined() || node.IsNull()) return;
  if (!node.IsMap())
    throw ConfigError("config: '" + where + "' must be a mapping");
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    if (!allowed.count(key))
      throw ConfigError("config: unknown key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out) {
  if (const YAML::Node v = node[key]; v.IsDefined() && !v.IsNull()) {
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
  }
}

void read_size(const YAML::Node& node, const char* key,
               std::array<int, 2>& out) {
  if (const YAML::Node v = node[key]; v.IsDefined() && !v.IsNull()) {
    if (!v.IsSequence() || v.size() != 2)
      throw ConfigError(std::string("config: '") + key +
                        "' must be a [h, w] pair");
    out = {v[0].as<int>(), v[1].as<int>()};
  }
}

}  // namespace

void RunConfig::validate() const {
  if (schema_version != 1)
    throw ConfigError("config: unsupported schema_version");
  if (dataset_name.empty() || dataset_dir.empty() || out_dir.empty())
    throw ConfigError("config: dataset_name, dataset_dir, out_dir required");
  if (eval_fraction <= 0.0 || eval_fraction >= 1.0)
    throw ConfigError("config: eval_fraction must be in (0, 1)");
  if (fp_options.target_size[0] < 8 || fp_options.target_size[1] < 8)
    throw ConfigError("config: fingerprint target_size too small");
  if (fp_options.crop_margin < 1.0)
    throw ConfigError("config: crop_margin must be >= 1");
  vae.validate();
  toe.validate();
  ldm.validate();
  if (degrade.max_retries < 1)
    throw ConfigError("config: degrade.max_retries must be >= 1");
  phantom.validate();
  if (fp_options.target_size[0] % vae.compression_factor != 0 ||
      fp_options.target_size[1] % vae.compression_factor != 0)
    throw ConfigError(
        "config: target_size must be divisible by vae.compression_factor");
}

RunConfig RunConfig::from_yaml(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: YAML parse error: ") + e.what());
  }
  check_keys(root, "", {"schema_version", "dataset_name", "dataset_dir",
                        "out_dir", "seed", "eval_fraction", "fingerprint",
                        "vae", "toe", "ldm", "degrade", "phantom"});

  RunConfig c;
  if (!root["schema_version"].IsDefined())
    throw ConfigError("config: schema_version is required");
  read(root, "schema_version", c.schema_version);
  read(root, "dataset_name", c.dataset_name);
  read(root, "dataset_dir", c.dataset_dir);
  read(root, "out_dir", c.out_dir);
  read(root, "seed", c.seed);
  read(root, "eval_fraction", c.eval_fraction);

  const YAML::Node fp = root["fingerprint"];
  check_keys(fp, "fingerprint", {"target_size", "orientation", "crop_margin"});
  if (fp.IsDefined() && !fp.IsNull()) {
    read_size(fp, "target_size", c.fp_options.target_size);
    read(fp, "orientation", c.fp_options.orientation);
    read(fp, "crop_margin", c.fp_options.crop_margin);
  }

  const YAML::Node vae = root["vae"];
  check_keys(vae, "vae",
             {"compression_factor", "base_width", "disc_base_width",
              "disc_layers", "lambda_kld", "lambda_perc", "lambda_adv",
              "lambda_dice", "epochs", "batch_size", "lr", "disc_lr",
              "holdout_fraction", "divergence_patience"});
  if (vae.IsDefined() && !vae.IsNull()) {
    read(vae, "compression_factor", c.vae.compression_factor);
    read(vae, "base_width", c.vae.base_width);
    read(vae, "disc_base_width", c.vae.disc_base_width);
    read(vae, "disc_layers", c.vae.disc_layers);
    read(vae, "lambda_kld", c.vae.lambda_kld);
    read(vae, "lambda_perc", c.vae.lambda_perc);
    read(vae, "lambda_adv", c.vae.lambda_adv);
    read(vae, "lambda_dice", c.vae.lambda_dice);
    read(vae, "epochs", c.vae.epochs);
    read(vae, "batch_size", c.vae.batch_size);
    read(vae, "lr", c.vae.lr);
    read(vae, "disc_lr", c.vae.disc_lr);
    read(vae, "holdout_fraction", c.vae.holdout_fraction);
    read(vae, "divergence_patience", c.vae.divergence_patience);
  }

  const YAML::Node toe = root["toe"];
  check_keys(toe, "toe",
             {"d_e", "d_c", "n_heads", "mlp_hidden", "n_fourier",
              "encoder_id"});
  if (toe.IsDefined() && !toe.IsNull()) {
    read(toe, "d_e", c.toe.d_e);
    read(toe, "d_c", c.toe.d_c);
    read(toe, "n_heads", c.toe.n_heads);
    read(toe, "mlp_hidden", c.toe.mlp_hidden);
    read(toe, "n_fourier", c.toe.n_fourier);
    read(toe, "encoder_id", c.toe.encoder_id);
  }

  const YAML::Node ldm = root["ldm"];
  check_keys(ldm, "ldm",
             {"t_train", "schedule", "beta_start", "beta_end", "base_width",
              "channel_mults", "time_dim", "epochs", "batch_size", "lr",
              "empty_mask_prob", "sample_steps", "divergence_patience"});
  if (ldm.IsDefined() && !ldm.IsNull()) {
    read(ldm, "t_train", c.ldm.t_train);
    read(ldm, "schedule", c.ldm.schedule);
    read(ldm, "beta_start", c.ldm.beta_start);
    read(ldm, "beta_end", c.ldm.beta_end);
    read(ldm, "base_width", c.ldm.base_width);
    read(ldm, "channel_mults", c.ldm.channel_mults);
    read(ldm, "time_dim", c.ldm.time_dim);
    read(ldm, "epochs", c.ldm.epochs);
    read(ldm, "batch_size", c.ldm.batch_size);
    read(ldm, "lr", c.ldm.lr);
    read(ldm, "empty_mask_prob", c.ldm.empty_mask_prob);
    read(ldm, "sample_steps", c.ldm.sample_steps);
    read(ldm, "divergence_patience", c.ldm.divergence_patience);
  }

  const YAML::Node deg = root["degrade"];
  check_keys(deg, "degrade", {"max_retries", "escalate", "backoff"});
  if (deg.IsDefined() && !deg.IsNull()) {
    read(deg, "max_retries", c.degrade.max_retries);
    read(deg, "escalate", c.degrade.escalate);
    read(deg, "backoff", c.degrade.backoff);
  }

  const YAML::Node ph = root["phantom"];
  check_keys(ph, "phantom",
             {"n_subjects", "grid", "min_slices", "max_slices", "n_classes",
              "noise_sigma"});
  if (ph.IsDefined() && !ph.IsNull()) {
    read(ph, "n_subjects", c.phantom.n_subjects);
    read(ph, "grid", c.phantom.grid);
    read(ph, "min_slices", c.phantom.min_slices);
    read(ph, "max_slices", c.phantom.max_slices);
    read(ph, "n_classes", c.phantom.n_classes);
    read(ph, "noise_sigma", c.phantom.noise_sigma);
  }
  c.phantom.seed = c.seed;  // one seed per run; artifacts record it

  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_yaml(buf.str());
}

std::string RunConfig::to_yaml() const {
  std::ostringstream o;
  o << "schema_version: " << schema_version << "\n";
  o << "dataset_name: " << dataset_name << "\n";
  o << "dataset_dir: " << dataset_dir << "\n";
  o << "out_dir: " << out_dir << "\n";
  o << "seed: " << seed << "\n";
  o << "eval_fraction: " << fmt(eval_fraction) << "\n";
  o << "fingerprint:\n";
  o << "  target_size: [" << fp_options.target_size[0] << ", "
    << fp_options.target_size[1] << "]\n";
  o << "  orientation: " << fp_options.orientation << "\n";
  o << "  crop_margin: " << fmt(fp_options.crop_margin) << "\n";
  o << "vae:\n";
  o << "  compression_factor: " << vae.compression_factor << "\n";
  o << "  base_width: " << vae.base_width << "\n";
  o << "  disc_base_width: " << vae.disc_base_width << "\n";
  o << "  disc_layers: " << vae.disc_layers << "\n";
  o << "  lambda_kld: " << fmt(vae.lambda_kld) << "\n";
  o << "  lambda_perc: " << fmt(vae.lambda_perc) << "\n";
  o << "  lambda_adv: " << fmt(vae.lambda_adv) << "\n";
  o << "  lambda_dice: " << fmt(vae.lambda_dice) << "\n";
  o << "  epochs: " << vae.epochs << "\n";
  o << "  batch_size: " << vae.batch_size << "\n";
  o << "  lr: " << fmt(vae.lr) << "\n";
  o << "  disc_lr: " << fmt(vae.disc_lr) << "\n";
  o << "  holdout_fraction: " << fmt(vae.holdout_fraction) << "\n";
  o << "  divergence_patience: " << vae.divergence_patience << "\n";
  o << "toe:\n";
  o << "  d_e: " << toe.d_e << "\n";
  o << "  d_c: " << toe.d_c << "\n";
  o << "  n_heads: " << toe.n_heads << "\n";
  o << "  mlp_hidden: " << toe.mlp_hidden << "\n";
  o << "  n_fourier: " << toe.n_fourier << "\n";
  o << "  encoder_id: " << toe.encoder_id << "\n";
  o << "ldm:\n";
  o << "  t_train: " << ldm.t_train << "\n";
  o << "  schedule: " << ldm.schedule << "\n";
  o << "  beta_start: " << fmt(ldm.beta_start) << "\n";
  o << "  beta_end: " << fmt(ldm.beta_end) << "\n";
  o << "  base_width: " << ldm.base_width << "\n";
  o << "  channel_mults: [";
  for (std::size_t i = 0; i < ldm.channel_mults.size(); ++i)
    o << (i ? ", " : "") << ldm.channel_mults[i];
  o << "]\n";
  o << "  time_dim: " << ldm.time_dim << "\n";
  o << "  epochs: " << ldm.epochs << "\n";
  o << "  batch_size: " << ldm.batch_size << "\n";
  o << "  lr: " << fmt(ldm.lr) << "\n";
  o << "  empty_mask_prob: " << fmt(ldm.empty_mask_prob) << "\n";
  o << "  sample_steps: " << ldm.sample_steps << "\n";
  o << "  divergence_patience: " << ldm.divergence_patience << "\n";
  o << "degrade:\n";
  o << "  max_retries: " << degrade.max_retries << "\n";
  o << "  escalate: " << fmt(degrade.escalate) << "\n";
  o << "  backoff: " << fmt(degrade.backoff) << "\n";
  o << "phantom:\n";
  o << "  n_subjects: " << phantom.n_subjects << "\n";
  o << "  grid: " << phantom.grid << "\n";
  o << "  min_slices: " << phantom.min_slices << "\n";
  o << "  max_slices: " << phantom.max_slices << "\n";
  o << "  n_classes: " << phantom.n_classes << "\n";
  o << "  noise_sigma: " << fmt(phantom.noise_sigma) << "\n";
  return o.str();
}

std::string RunConfig::digest() const { return sha256_hex(to_yaml()); }

}  // namespace nnqc::config
