#include "nnqc/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "nnqc/errors.hpp"
#include "nnqc/metrics.hpp"
#include "nnqc/rng.hpp"
#include "nnqc/torchutil.hpp"

namespace nnqc::manifold {

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int norm_groups(int channels) {
  for (int g : {8, 4, 2})
    if (channels % g == 0) return g;
  return 1;
}

// GroupNorm + SiLU + 3x3 conv, appended piecewise (Sequential cannot nest).
void append_conv_block(torch::nn::Sequential& seq, int in, int out,
                       int stride) {
  seq->push_back(
      torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(in), in)));
  seq->push_back(torch::nn::SiLU());
  seq->push_back(torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)));
}

/// probs (B, L+1, H, W) -> single-channel rendering sum_c (c/L) * p_c.
torch::Tensor render_probs(const torch::Tensor& probs) {
  const int64_t channels = probs.size(1);
  const double l = std::max<int64_t>(channels - 1, 1);
  torch::Tensor weights =
      torch::arange(channels, torch::kFloat32).div(l).view({1, channels, 1, 1});
  return (probs * weights).sum(1, /*keepdim=*/true);
}

}  // namespace

void VaeConfig::validate() const {
  if (num_labels < 1) throw ConfigError("vae: num_labels must be >= 1");
  if (latent_channels != 2)
    throw ConfigError("vae: latent space has exactly 2 channels");
  if (compression_factor < 2 || !is_power_of_two(compression_factor))
    throw ConfigError("vae: compression_factor must be a power of two >= 2");
  if (lambda_kld < 0 || lambda_perc < 0 || lambda_adv < 0 || lambda_dice < 0)
    throw ConfigError("vae: loss weights must be non-negative");
  if (base_width < 4) throw ConfigError("vae: base_width too small");
  if (epochs < 1 || batch_size < 1)
    throw ConfigError("vae: epochs and batch_size must be >= 1");
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
    throw ConfigError("vae: holdout_fraction must be in [0, 1)");
}

// ---------------------------------------------------------------------------
// SegVae

SegVaeImpl::SegVaeImpl(const VaeConfig& cfg_) : cfg(cfg_) {
  cfg.validate();
  const int in_ch = cfg.num_labels + 1;
  const int n_down = static_cast<int>(std::lround(std::log2(cfg.compression_factor)));

  torch::nn::Sequential enc;
  int width = cfg.base_width;
  enc->push_back(torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in_ch, width, 3).padding(1)));
  for (int i = 0; i < n_down; ++i) {
    const int next = width * 2;
    append_conv_block(enc, width, next, /*stride=*/2);
    append_conv_block(enc, next, next, /*stride=*/1);
    width = next;
  }
  encoder = register_module("encoder", enc);
  to_posterior = register_module(
      "to_posterior",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(
          width, 2 * cfg.latent_channels, 1)));

  torch::nn::Sequential dec;
  dec->push_back(torch::nn::Conv2d(
      torch::nn::Conv2dOptions(cfg.latent_channels, width, 3).padding(1)));
  for (int i = 0; i < n_down; ++i) {
    const int next = width / 2;
    append_conv_block(dec, width, width, /*stride=*/1);
    dec->push_back(torch::nn::ConvTranspose2d(
        torch::nn::ConvTranspose2dOptions(width, next, 4)
            .stride(2)
            .padding(1)));
    width = next;
  }
  dec->push_back(torch::nn::GroupNorm(
      torch::nn::GroupNormOptions(norm_groups(width), width)));
  dec->push_back(torch::nn::SiLU());
  dec->push_back(torch::nn::Conv2d(
      torch::nn::Conv2dOptions(width, in_ch, 3).padding(1)));
  decoder = register_module("decoder", dec);
}

std::pair<torch::Tensor, torch::Tensor> SegVaeImpl::encode(
    const torch::Tensor& onehot) {
  if (onehot.dim() != 4 || onehot.size(1) != cfg.num_labels + 1)
    throw ShapeError("SegVae::encode: expected (B, " +
                     std::to_string(cfg.num_labels + 1) + ", H, W)");
  torch::Tensor h = encoder->forward(onehot);
  torch::Tensor post = to_posterior->forward(h);
  auto chunks = post.chunk(2, /*dim=*/1);
  return {chunks[0], chunks[1]};
}

torch::Tensor SegVaeImpl::reparameterize(const torch::Tensor& mu,
                                         const torch::Tensor& logvar,
                                         torch::Generator& gen) {
  torch::Tensor eps = torch::randn(mu.sizes(), gen, mu.options());
  return mu + (logvar * 0.5).exp() * eps;
}

torch::Tensor SegVaeImpl::decode(const torch::Tensor& z) {
  if (z.dim() != 4 || z.size(1) != cfg.latent_channels)
    throw ShapeError("SegVae::decode: expected (B, 2, h, w) latent");
  return decoder->forward(z);
}

// ---------------------------------------------------------------------------
// PatchDiscriminator

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const VaeConfig& cfg) {
  torch::nn::Sequential seq;
  int in = cfg.num_labels + 1;
  int width = cfg.disc_base_width;
  for (int i = 0; i < cfg.disc_layers; ++i) {
    seq->push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(in, width, 4).stride(2).padding(1)));
    if (i > 0)
      seq->push_back(torch::nn::GroupNorm(
          torch::nn::GroupNormOptions(norm_groups(width), width)));
    seq->push_back(torch::nn::LeakyReLU(
        torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    in = width;
    width = std::min(width * 2, 8 * cfg.disc_base_width);
  }
  seq->push_back(torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, width, 4).stride(1).padding(1)));
  seq->push_back(torch::nn::LeakyReLU(
      torch::nn::LeakyReLUOptions().negative_slope(0.2)));
  seq->push_back(torch::nn::Conv2d(
      torch::nn::Conv2dOptions(width, 1, 4).stride(1).padding(1)));
  net = register_module("net", seq);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& probs) {
  return net->forward(probs);
}

// ---------------------------------------------------------------------------
// PerceptualNet

PerceptualNetImpl::PerceptualNetImpl(const std::string& identity_)
    : identity(identity_) {
  torch::nn::ModuleList list;
  torchutil::with_fixed_seed(mix64(hash_str(identity), 0x9e77), [&] {
    int in = 1;
    for (int width : {16, 32, 64}) {
      torch::nn::Sequential stage(
          torch::nn::Conv2d(
              torch::nn::Conv2dOptions(in, width, 3).stride(2).padding(1)),
          torch::nn::SiLU());
      list->push_back(stage);
      in = width;
    }
  });
  stages = register_module("stages", list);
  for (auto& p : parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> PerceptualNetImpl::features(
    const torch::Tensor& rendered) {
  std::vector<torch::Tensor> out;
  torch::Tensor h = rendered;
  for (const auto& stage : *stages) {
    h = stage->as<torch::nn::Sequential>()->forward(h);
    out.push_back(h);
  }
  return out;
}

torch::Tensor PerceptualNetImpl::distance(const torch::Tensor& probs_a,
                                          const torch::Tensor& probs_b) {
  const auto fa = features(render_probs(probs_a));
  const auto fb = features(render_probs(probs_b));
  torch::Tensor d = torch::zeros({}, probs_a.options());
  for (std::size_t i = 0; i < fa.size(); ++i)
    d = d + torch::mse_loss(fa[i], fb[i]);
  return d / static_cast<double>(fa.size());
}

// ---------------------------------------------------------------------------
// Losses

torch::Tensor kld_loss(const torch::Tensor& mu, const torch::Tensor& logvar) {
  torch::Tensor per_sample =
      0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar)
                .flatten(/*start_dim=*/1)
                .sum(/*dim=*/1);
  return per_sample.mean();
}

torch::Tensor generalized_dice_loss(const torch::Tensor& logits,
                                    const torch::Tensor& target_onehot) {
  if (!logits.sizes().equals(target_onehot.sizes()))
    throw ShapeError("generalized_dice_loss: shape mismatch");
  constexpr double kEps = 1e-7;
  torch::Tensor probs = torch::softmax(logits, /*dim=*/1);
  torch::Tensor inter = (probs * target_onehot).sum({0, 2, 3});
  torch::Tensor denom = probs.sum({0, 2, 3}) + target_onehot.sum({0, 2, 3});
  torch::Tensor dice = (2.0 * inter + kEps) / (denom + kEps);
  return 1.0 - dice.mean();
}

VaeLossParts vae_loss(const torch::Tensor& target_onehot,
                      const torch::Tensor& logits, const torch::Tensor& mu,
                      const torch::Tensor& logvar,
                      const torch::Tensor& disc_scores_fake,
                      PerceptualNet& perc_net, const VaeConfig& cfg) {
  if (!logits.sizes().equals(target_onehot.sizes()))
    throw ShapeError("vae_loss: logits/target shape mismatch");

  VaeLossParts parts;
  parts.kld = kld_loss(mu, logvar);
  parts.dice = generalized_dice_loss(logits, target_onehot);
  torch::Tensor probs = torch::softmax(logits, /*dim=*/1);
  parts.perc = perc_net->distance(probs, target_onehot);
  if (cfg.lambda_adv > 0.0) {
    if (!disc_scores_fake.defined())
      throw ConfigError("vae_loss: lambda_adv > 0 needs discriminator scores");
    parts.adv = (disc_scores_fake - 1.0).pow(2).mean();
  } else {
    parts.adv = torch::zeros({}, logits.options());
  }
  parts.total = cfg.lambda_kld * parts.kld + cfg.lambda_perc * parts.perc +
                cfg.lambda_adv * parts.adv + cfg.lambda_dice * parts.dice;

  for (const torch::Tensor* t :
       {&parts.total, &parts.kld, &parts.perc, &parts.adv, &parts.dice})
    if (!torch::isfinite(*t).all().item<bool>())
      throw TrainingDivergence("vae_loss: non-finite loss component");
  return parts;
}

// ---------------------------------------------------------------------------
// Training

namespace {

/// Deterministic subject-level split: shuffles distinct ids by seed and
/// reserves ceil(fraction * n) of them (at least one when n > 1).
std::set<std::string> pick_holdout(const std::vector<GtSlice>& slices,
                                   double fraction, std::uint64_t seed) {
  std::set<std::string> ids;
  for (const auto& s : slices) ids.insert(s.subject_id);
  std::vector<std::string> order(ids.begin(), ids.end());
  RandomStream rs(mix64(seed, 0x5b1d));
  rs.shuffle(order);
  std::size_t n_hold =
      static_cast<std::size_t>(std::ceil(fraction * order.size()));
  if (order.size() > 1 && fraction > 0.0 && n_hold == 0) n_hold = 1;
  if (n_hold >= order.size() && !order.empty()) n_hold = order.size() - 1;
  return {order.end() - n_hold, order.end()};
}

double holdout_recon_dice(SegVae& vae, const std::vector<torch::Tensor>& hold,
                          const std::vector<const MaskGrid2D*>& hold_masks) {
  if (hold.empty()) return 0.0;
  torch::NoGradGuard ng;
  double sum = 0.0;
  for (std::size_t i = 0; i < hold.size(); ++i) {
    auto [mu, logvar] = vae->encode(hold[i]);
    const MaskGrid2D recon = torchutil::logits_to_mask(vae->decode(mu));
    sum += metrics::dsc(recon, *hold_masks[i]);
  }
  return sum / static_cast<double>(hold.size());
}

}  // namespace

VaeTrainResult train_vae_gan(const std::vector<GtSlice>& gt_slices,
                             const VaeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (gt_slices.empty())
    throw ConfigError("train_vae_gan: empty training corpus");

  const std::set<std::string> holdout =
      pick_holdout(gt_slices, cfg.holdout_fraction, seed);

  torch::manual_seed(mix64(seed, 0x7ae5));
  VaeTrainResult result;
  result.vae = SegVae(cfg);
  result.disc = PatchDiscriminator(cfg);
  result.holdout_subjects.assign(holdout.begin(), holdout.end());
  PerceptualNet perc;

  std::vector<torch::Tensor> train_x, hold_x;
  std::vector<const MaskGrid2D*> hold_masks;
  for (const auto& s : gt_slices) {
    torch::Tensor onehot = torchutil::mask_to_onehot(s.mask, cfg.num_labels);
    if (holdout.count(s.subject_id)) {
      hold_x.push_back(std::move(onehot));
      hold_masks.push_back(&s.mask);
    } else {
      train_x.push_back(std::move(onehot));
    }
  }
  if (train_x.empty())
    throw ConfigError("train_vae_gan: holdout split left no training slices");

  torch::optim::Adam opt_g(result.vae->parameters(),
                           torch::optim::AdamOptions(cfg.lr));
  torch::optim::Adam opt_d(result.disc->parameters(),
                           torch::optim::AdamOptions(cfg.disc_lr));
  torch::Generator gen = torchutil::make_generator(mix64(seed, 0x11));

  std::vector<std::size_t> order(train_x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  int consecutive_bad = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RandomStream shuffler(mix64(seed, 0x200 + epoch));
    shuffler.shuffle(order);

    VaeEpochStats stats;
    stats.epoch = epoch;
    int steps = 0;
    for (std::size_t b = 0; b < order.size();
         b += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<torch::Tensor> batch;
      for (std::size_t i = b;
           i < std::min(order.size(),
                        b + static_cast<std::size_t>(cfg.batch_size));
           ++i)
        batch.push_back(train_x[order[i]]);
      torch::Tensor x = torch::cat(batch, 0);

      auto [mu, logvar] = result.vae->encode(x);
      torch::Tensor z = result.vae->reparameterize(mu, logvar, gen);
      torch::Tensor logits = result.vae->decode(z);
      torch::Tensor probs = torch::softmax(logits, 1);

      if (cfg.lambda_adv > 0.0) {
        opt_d.zero_grad();
        torch::Tensor d_real = result.disc->forward(x);
        torch::Tensor d_fake = result.disc->forward(probs.detach());
        torch::Tensor d_loss = 0.5 * ((d_real - 1.0).pow(2).mean() +
                                      d_fake.pow(2).mean());
        d_loss.backward();
        opt_d.step();
        stats.disc_loss += d_loss.item<double>();
      }

      torch::Tensor d_fake_for_g;
      if (cfg.lambda_adv > 0.0) d_fake_for_g = result.disc->forward(probs);

      try {
        VaeLossParts parts =
            vae_loss(x, logits, mu, logvar, d_fake_for_g, perc, cfg);
        opt_g.zero_grad();
        parts.total.backward();
        opt_g.step();
        consecutive_bad = 0;
        stats.loss_total += parts.total.item<double>();
        stats.loss_kld += parts.kld.item<double>();
        stats.loss_perc += parts.perc.item<double>();
        stats.loss_adv += parts.adv.item<double>();
        stats.loss_dice += parts.dice.item<double>();
      } catch (const TrainingDivergence&) {
        if (++consecutive_bad >= cfg.divergence_patience) throw;
        continue;  // skip the update, give the run a chance to recover
      }
      ++steps;
    }
    if (steps > 0) {
      stats.loss_total /= steps;
      stats.loss_kld /= steps;
      stats.loss_perc /= steps;
      stats.loss_adv /= steps;
      stats.loss_dice /= steps;
      stats.disc_loss /= steps;
    }
    stats.holdout_dice = holdout_recon_dice(result.vae, hold_x, hold_masks);
    result.log.push_back(stats);
  }
  return result;
}

}  // namespace nnqc::manifold
