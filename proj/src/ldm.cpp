#include "nnqc/ldm.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "nnqc/errors.hpp"
#include "nnqc/rng.hpp"
#include "nnqc/torchutil.hpp"

namespace nnqc::ldm {

// ---------------------------------------------------------------------------
// Noise schedule

NoiseSchedule NoiseSchedule::make(const std::string& family, int t_train,
                                  double beta_start, double beta_end) {
  if (t_train < 1) throw ConfigError("schedule: t_train must be >= 1");
  if (beta_start <= 0.0 || beta_end >= 1.0 || beta_end < beta_start)
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");

  NoiseSchedule s;
  s.family = family;
  s.t_train = t_train;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.alpha_bar.resize(t_train + 1);
  s.alpha_bar[0] = 1.0;
  for (int t = 1; t <= t_train; ++t) {
    const double frac = t_train == 1 ? 0.0 : (t - 1) / double(t_train - 1);
    double beta;
    if (family == "linear") {
      beta = beta_start + (beta_end - beta_start) * frac;
    } else if (family == "scaled_linear") {
      const double b = std::sqrt(beta_start) +
                       (std::sqrt(beta_end) - std::sqrt(beta_start)) * frac;
      beta = b * b;
    } else {
      throw ConfigError("schedule: unknown family '" + family + "'");
    }
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
  }
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  if (t_train < 1 || alpha_bar.size() != static_cast<std::size_t>(t_train) + 1)
    throw ConfigError("schedule: alpha_bar must have t_train + 1 entries");
  if (alpha_bar[0] != 1.0)
    throw ConfigError("schedule: alpha_bar[0] must be 1");
  for (int t = 1; t <= t_train; ++t)
    if (!(alpha_bar[t] > 0.0) || alpha_bar[t] >= alpha_bar[t - 1])
      throw ConfigError("schedule: alpha_bar must decrease strictly in (0,1]");
}

std::vector<int> NoiseSchedule::timesteps(int steps) const {
  if (steps < 1 || steps > t_train)
    throw ConfigError("schedule: steps must be in [1, t_train]");
  std::vector<int> taus(steps);
  for (int k = 1; k <= steps; ++k)
    taus[k - 1] = std::max(
        1, static_cast<int>(std::lround(double(k) * t_train / steps)));
  return taus;
}

torch::Tensor forward_noise(const torch::Tensor& z0, int t,
                            const torch::Tensor& eps,
                            const NoiseSchedule& sched) {
  if (t < 0 || t > sched.t_train)
    throw ConfigError("forward_noise: t outside [0, t_train]");
  if (!z0.sizes().equals(eps.sizes()))
    throw ShapeError("forward_noise: z0/eps shape mismatch");
  const double a = sched.alpha_bar[t];
  return std::sqrt(a) * z0 + std::sqrt(1.0 - a) * eps;
}

void LdmConfig::validate() const {
  if (t_train < 1) throw ConfigError("ldm: t_train must be >= 1");
  if (base_width < 4) throw ConfigError("ldm: base_width too small");
  if (channel_mults.empty()) throw ConfigError("ldm: channel_mults empty");
  if (time_dim < 2 || time_dim % 2 != 0)
    throw ConfigError("ldm: time_dim must be even and >= 2");
  if (epochs < 1 || batch_size < 1)
    throw ConfigError("ldm: epochs and batch_size must be >= 1");
  if (empty_mask_prob < 0.0 || empty_mask_prob > 1.0)
    throw ConfigError("ldm: empty_mask_prob must be in [0, 1]");
  if (sample_steps < 1) throw ConfigError("ldm: sample_steps must be >= 1");
}

// ---------------------------------------------------------------------------
// UNet building blocks

namespace {

int norm_groups(int channels) {
  for (int g : {8, 4, 2})
    if (channels % g == 0) return g;
  return 1;
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int dim) {
  const int half = dim / 2;
  torch::Tensor freqs = torch::exp(
      torch::arange(half, torch::kFloat32) *
      (-std::log(10000.0) / std::max(half - 1, 1)));
  torch::Tensor args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({args.sin(), args.cos()}, 1);
}

struct ResBlockImpl : torch::nn::Module {
  ResBlockImpl(int in, int out, int temb_dim) {
    norm1 = register_module(
        "norm1", torch::nn::GroupNorm(
                     torch::nn::GroupNormOptions(norm_groups(in), in)));
    conv1 = register_module(
        "conv1",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
    temb_proj = register_module("temb_proj", torch::nn::Linear(temb_dim, out));
    norm2 = register_module(
        "norm2", torch::nn::GroupNorm(
                     torch::nn::GroupNormOptions(norm_groups(out), out)));
    conv2 = register_module(
        "conv2",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
    if (in != out)
      skip = register_module(
          "skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
  }

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb) {
    torch::Tensor h = conv1(torch::silu(norm1(x)));
    h = h + temb_proj(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2(torch::silu(norm2(h)));
    return h + (skip ? skip(x) : x);
  }

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear temb_proj{nullptr};
};
TORCH_MODULE(ResBlock);

// Single-head cross-attention from spatial positions (queries) to the
// condition tokens (keys/values), with a residual connection.
struct CrossAttnImpl : torch::nn::Module {
  CrossAttnImpl(int channels, int d_c) : channels_(channels) {
    norm = register_module(
        "norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(
                    norm_groups(channels), channels)));
    to_q = register_module("to_q", torch::nn::Linear(channels, channels));
    to_k = register_module("to_k", torch::nn::Linear(d_c, channels));
    to_v = register_module("to_v", torch::nn::Linear(d_c, channels));
    proj = register_module("proj", torch::nn::Linear(channels, channels));
  }

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond) {
    const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    torch::Tensor tokens =
        norm(x).flatten(2).transpose(1, 2);  // (B, HW, C)
    torch::Tensor q = to_q(tokens);
    torch::Tensor k = to_k(cond);
    torch::Tensor v = to_v(cond);
    torch::Tensor attn = torch::softmax(
        torch::matmul(q, k.transpose(-2, -1)) /
            std::sqrt(static_cast<double>(channels_)),
        -1);
    torch::Tensor out = proj(torch::matmul(attn, v));
    return x + out.transpose(1, 2).reshape({b, c, h, w});
  }

  int channels_;
  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr},
      proj{nullptr};
};
TORCH_MODULE(CrossAttn);

}  // namespace

// ---------------------------------------------------------------------------
// DiffusionUnet

DiffusionUnetImpl::DiffusionUnetImpl(const LdmConfig& cfg_, int d_c_)
    : cfg(cfg_), d_c(d_c_) {
  cfg.validate();
  if (d_c < 1) throw ConfigError("unet: condition width must be >= 1");

  time_mlp = register_module(
      "time_mlp",
      torch::nn::Sequential(torch::nn::Linear(cfg.time_dim, cfg.time_dim),
                            torch::nn::SiLU(),
                            torch::nn::Linear(cfg.time_dim, cfg.time_dim)));

  std::vector<int> widths;
  for (int m : cfg.channel_mults) widths.push_back(cfg.base_width * m);
  const int levels = static_cast<int>(widths.size());

  stem = register_module(
      "stem",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(3, widths[0], 3).padding(1)));

  down_res = register_module("down_res", torch::nn::ModuleList());
  down_attn = register_module("down_attn", torch::nn::ModuleList());
  downsamples = register_module("downsamples", torch::nn::ModuleList());
  int cur = widths[0];
  for (int i = 0; i < levels; ++i) {
    down_res->push_back(ResBlock(cur, widths[i], cfg.time_dim));
    down_attn->push_back(CrossAttn(widths[i], d_c));
    cur = widths[i];
    if (i + 1 < levels)
      downsamples->push_back(torch::nn::Conv2d(
          torch::nn::Conv2dOptions(cur, cur, 3).stride(2).padding(1)));
  }

  mid = register_module("mid", torch::nn::ModuleList());
  mid->push_back(ResBlock(cur, cur, cfg.time_dim));
  mid->push_back(CrossAttn(cur, d_c));
  mid->push_back(ResBlock(cur, cur, cfg.time_dim));

  up_res = register_module("up_res", torch::nn::ModuleList());
  up_attn = register_module("up_attn", torch::nn::ModuleList());
  upsamples = register_module("upsamples", torch::nn::ModuleList());
  for (int i = levels - 1; i >= 0; --i) {
    up_res->push_back(ResBlock(cur + widths[i], widths[i], cfg.time_dim));
    up_attn->push_back(CrossAttn(widths[i], d_c));
    cur = widths[i];
    if (i > 0) {
      upsamples->push_back(torch::nn::ConvTranspose2d(
          torch::nn::ConvTranspose2dOptions(cur, widths[i - 1], 4)
              .stride(2)
              .padding(1)));
      cur = widths[i - 1];
    }
  }

  head = register_module(
      "head",
      torch::nn::Sequential(
          torch::nn::GroupNorm(torch::nn::GroupNormOptions(
              norm_groups(cur), cur)),
          torch::nn::SiLU(),
          torch::nn::Conv2d(torch::nn::Conv2dOptions(cur, 2, 3).padding(1))));
}

torch::Tensor DiffusionUnetImpl::forward(const torch::Tensor& x,
                                         const torch::Tensor& t,
                                         const torch::Tensor& cond) {
  if (x.dim() != 4 || x.size(1) != 3)
    throw ShapeError("unet: expected (B, 3, h, w) input");
  if (cond.dim() != 3 || cond.size(2) != d_c)
    throw ShapeError("unet: condition must be (B, tokens, d_c)");

  torch::Tensor temb =
      time_mlp->forward(sinusoidal_embedding(t, cfg.time_dim));

  torch::Tensor h = stem(x);
  std::vector<torch::Tensor> skips;
  const int levels = static_cast<int>(down_res->size());
  for (int i = 0; i < levels; ++i) {
    h = down_res[i]->as<ResBlockImpl>()->forward(h, temb);
    h = down_attn[i]->as<CrossAttnImpl>()->forward(h, cond);
    skips.push_back(h);
    if (i + 1 < levels)
      h = downsamples[i]->as<torch::nn::Conv2dImpl>()->forward(h);
  }

  h = mid[0]->as<ResBlockImpl>()->forward(h, temb);
  h = mid[1]->as<CrossAttnImpl>()->forward(h, cond);
  h = mid[2]->as<ResBlockImpl>()->forward(h, temb);

  for (int j = 0; j < levels; ++j) {
    const int level = levels - 1 - j;
    h = torch::cat({h, skips[level]}, 1);
    h = up_res[j]->as<ResBlockImpl>()->forward(h, temb);
    h = up_attn[j]->as<CrossAttnImpl>()->forward(h, cond);
    if (level > 0)
      h = upsamples[j]->as<torch::nn::ConvTranspose2dImpl>()->forward(h);
  }
  return head->forward(h);
}

torch::Tensor ldm_loss(const torch::Tensor& eps_pred,
                       const torch::Tensor& eps) {
  if (!eps_pred.sizes().equals(eps.sizes()))
    throw ShapeError("ldm_loss: shape mismatch");
  torch::Tensor loss = torch::mse_loss(eps_pred, eps);
  if (!torch::isfinite(loss).item<bool>())
    throw TrainingDivergence("ldm_loss: non-finite loss");
  return loss;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct CachedPair {
  torch::Tensor z0;      // (1, 2, h, w), already latent-scaled
  torch::Tensor s_d;     // (1, 1, h, w)
  torch::Tensor o2;      // (1, tokens, d_e)
  double ratio = 0.5;
  std::uint64_t group = 0;  // (subject, slice) identity
};

torch::Tensor downsample_mask(const MaskGrid2D& mask, int num_labels, int f) {
  torch::Tensor dense = torchutil::mask_to_scalar(mask, num_labels);
  return torch::avg_pool2d(dense, {f, f}).clamp(0.0, 1.0);
}

}  // namespace

LdmTrainResult train_ldm(const manifold::SegVae& vae,
                         const degrade::Corpus& corpus,
                         const toe::RandomCnnEncoder& e2,
                         const toe::ToeConfig& toe_cfg,
                         const NoiseSchedule& sched, const LdmConfig& cfg,
                         std::uint64_t seed) {
  cfg.validate();
  sched.validate();
  toe_cfg.validate();
  if (corpus.pairs.empty()) throw ConfigError("train_ldm: empty corpus");
  const int f = vae->cfg.compression_factor;
  const int num_labels = vae->cfg.num_labels;
  if (corpus.height % f != 0 || corpus.width % f != 0)
    throw ShapeError("train_ldm: slice size not divisible by f");

  torch::manual_seed(mix64(seed, 0x1d31));
  LdmTrainResult result;
  result.unet = DiffusionUnet(cfg, toe_cfg.d_c);
  result.e1 = toe::PositionalExpert(toe_cfg);
  result.fusion = toe::Fusion(toe_cfg);

  // Cache the frozen-side tensors once; nothing here joins the autograd
  // graph, so the VAE and the vision expert cannot receive updates.
  std::vector<CachedPair> cache(corpus.pairs.size());
  {
    torch::NoGradGuard ng;
    auto& vae_mut = const_cast<manifold::SegVae&>(vae);
    auto& e2_mut = const_cast<toe::RandomCnnEncoder&>(e2);
    for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
      const degrade::DegradedPair& p = corpus.pairs[i];
      auto [mu, logvar] =
          vae_mut->encode(torchutil::mask_to_onehot(p.gt, num_labels));
      cache[i].z0 = mu;
      cache[i].s_d = downsample_mask(p.degraded, num_labels, f);
      cache[i].o2 = e2_mut->forward(torchutil::image_to_tensor(p.image));
      cache[i].ratio = p.slice_ratio;
      cache[i].group = mix64(hash_str(p.subject_id),
                             static_cast<std::uint64_t>(p.slice_index));
    }
  }

  // Unit-variance latents stabilize the noise-prediction objective; the
  // scale is part of the checkpoint and undone before decoding.
  {
    std::vector<torch::Tensor> all;
    for (const auto& c : cache) all.push_back(c.z0);
    const double sd = torch::cat(all, 0).std().item<double>();
    result.latent_scale = sd > 1e-8 ? 1.0 / sd : 1.0;
    for (auto& c : cache) c.z0 = c.z0 * result.latent_scale;
  }

  std::map<std::uint64_t, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < cache.size(); ++i)
    by_group[cache[i].group].push_back(i);

  std::vector<torch::Tensor> params;
  for (const auto& p : result.unet->parameters()) params.push_back(p);
  for (const auto& p : result.e1->parameters()) params.push_back(p);
  for (const auto& p : result.fusion->parameters()) params.push_back(p);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.lr));

  torch::Tensor ab = torch::tensor(sched.alpha_bar, torch::kFloat64);
  torch::Generator gen = torchutil::make_generator(mix64(seed, 0x22));
  int consecutive_bad = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // One uniformly chosen band per (subject, slice) per epoch.
    std::vector<std::size_t> chosen;
    for (const auto& [group, idxs] : by_group) {
      RandomStream pick(mix64(mix64(seed, 0x400 + epoch), group));
      chosen.push_back(
          idxs[pick.uniform_int(0, static_cast<int>(idxs.size()) - 1)]);
    }
    RandomStream rs(mix64(seed, 0x500 + epoch));
    rs.shuffle(chosen);

    LdmEpochStats stats;
    stats.epoch = epoch;
    int steps = 0;
    for (std::size_t b = 0; b < chosen.size();
         b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi =
          std::min(chosen.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<torch::Tensor> z0s, sds, o2s;
      std::vector<double> ratios;
      std::vector<std::int64_t> ts;
      for (std::size_t i = b; i < hi; ++i) {
        const CachedPair& c = cache[chosen[i]];
        z0s.push_back(c.z0);
        sds.push_back(rs.uniform() < cfg.empty_mask_prob
                          ? torch::zeros_like(c.s_d)
                          : c.s_d);
        o2s.push_back(c.o2);
        ratios.push_back(c.ratio);
        ts.push_back(rs.uniform_int(1, sched.t_train));
      }
      torch::Tensor z0 = torch::cat(z0s, 0);
      torch::Tensor s_d = torch::cat(sds, 0);
      torch::Tensor o2 = torch::cat(o2s, 0);
      torch::Tensor t = torch::tensor(ts, torch::kInt64);
      torch::Tensor ratio_t =
          torch::tensor(ratios, torch::kFloat32).unsqueeze(1);

      torch::Tensor eps = torch::randn(z0.sizes(), gen, z0.options());
      torch::Tensor scale =
          ab.index_select(0, t).to(torch::kFloat32).view({-1, 1, 1, 1});
      torch::Tensor z_t = scale.sqrt() * z0 + (1.0 - scale).sqrt() * eps;

      torch::Tensor cond =
          result.fusion->forward(result.e1->forward(ratio_t), o2);
      torch::Tensor pred =
          result.unet->forward(torch::cat({z_t, s_d}, 1), t, cond);
      try {
        torch::Tensor loss = ldm_loss(pred, eps);
        opt.zero_grad();
        loss.backward();
        opt.step();
        consecutive_bad = 0;
        stats.loss += loss.item<double>();
        ++steps;
      } catch (const TrainingDivergence&) {
        if (++consecutive_bad >= cfg.divergence_patience) throw;
      }
    }
    if (steps > 0) stats.loss /= steps;
    result.log.push_back(stats);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sampling

MaskGrid2D sample_pgt(const MaskGrid2D& S, const ImageGrid2D& I,
                      double slice_ratio, int steps, std::uint64_t seed,
                      const SampleContext& ctx, SampleTrace* trace) {
  if (!ctx.vae || !ctx.unet || !ctx.e1 || !ctx.e2 || !ctx.fusion ||
      !ctx.sched)
    throw ConfigError("sample_pgt: incomplete sample context");
  if (steps < 1) throw ConfigError("sample_pgt: steps must be >= 1");
  if (S.h != I.h || S.w != I.w)
    throw ShapeError("sample_pgt: mask/image shape mismatch");
  if (slice_ratio < 0.0 || slice_ratio > 1.0)
    throw ConfigError("sample_pgt: slice_ratio outside [0, 1]");

  torch::NoGradGuard ng;
  const NoiseSchedule& sched = *ctx.sched;
  const int f = (*ctx.vae)->cfg.compression_factor;
  if (S.h % f != 0 || S.w % f != 0)
    throw ShapeError("sample_pgt: slice size not divisible by f");

  torch::Tensor s_d = downsample_mask(S, ctx.num_labels, f);
  torch::Tensor o1 = const_cast<toe::PositionalExpert&>(*ctx.e1)->forward(
      torch::tensor({{static_cast<float>(slice_ratio)}}));
  torch::Tensor o2 = const_cast<toe::RandomCnnEncoder&>(*ctx.e2)->forward(
      torchutil::image_to_tensor(I));
  torch::Tensor cond =
      const_cast<toe::Fusion&>(*ctx.fusion)->forward(o1, o2);

  torch::Generator gen = torchutil::make_generator(mix64(seed, 0xdd1));
  torch::Tensor z =
      torch::randn({1, 2, S.h / f, S.w / f}, gen, torch::kFloat32);

  const std::vector<int> taus = sched.timesteps(steps);
  for (int k = static_cast<int>(taus.size()) - 1; k >= 0; --k) {
    const int t = taus[k];
    const int t_prev = k > 0 ? taus[k - 1] : 0;
    torch::Tensor x = torch::cat({z, s_d}, 1);
    if (trace) trace->mask_channels.push_back(x.select(1, 2).clone());
    torch::Tensor eps = const_cast<DiffusionUnet&>(*ctx.unet)
                            ->forward(x, torch::tensor({t}, torch::kInt64),
                                      cond);
    const double a_t = sched.alpha_bar[t];
    const double a_prev = sched.alpha_bar[t_prev];
    torch::Tensor z0_pred =
        (z - std::sqrt(1.0 - a_t) * eps) / std::sqrt(a_t);
    z = std::sqrt(a_prev) * z0_pred + std::sqrt(1.0 - a_prev) * eps;
  }

  torch::Tensor z0 = z / ctx.latent_scale;
  torch::Tensor logits =
      const_cast<manifold::SegVae&>(*ctx.vae)->decode(z0);
  return torchutil::logits_to_mask(logits);
}

}  // namespace nnqc::ldm
