#include "nnqc/toe.hpp"

#include <cmath>
#include <vector>

#include "nnqc/errors.hpp"
#include "nnqc/rng.hpp"
#include "nnqc/torchutil.hpp"

namespace nnqc::toe {

void ToeConfig::validate() const {
  if (d_e < 1 || d_c < 1) throw ConfigError("toe: d_e and d_c must be >= 1");
  if (n_heads < 1 || d_c % n_heads != 0)
    throw ConfigError("toe: n_heads must divide d_c");
  if (mlp_hidden < 1) throw ConfigError("toe: mlp_hidden must be >= 1");
  if (n_fourier < 0) throw ConfigError("toe: n_fourier must be >= 0");
  if (!encoder_frozen)
    throw ConfigError("toe: the vision expert is frozen by contract");
}

// ---------------------------------------------------------------------------
// E1

PositionalExpertImpl::PositionalExpertImpl(const ToeConfig& cfg_) : cfg(cfg_) {
  cfg.validate();
  const int in_dim = 1 + 2 * cfg.n_fourier;
  mlp = register_module(
      "mlp", torch::nn::Sequential(
                 torch::nn::Linear(in_dim, cfg.mlp_hidden), torch::nn::SiLU(),
                 torch::nn::Linear(cfg.mlp_hidden, cfg.mlp_hidden),
                 torch::nn::SiLU(), torch::nn::Linear(cfg.mlp_hidden, cfg.d_e)));
}

torch::Tensor PositionalExpertImpl::forward(const torch::Tensor& ratios) {
  if (ratios.dim() != 2 || ratios.size(1) != 1)
    throw ShapeError("positional expert: expected ratios of shape (B, 1)");
  if ((ratios.lt(0.0).any() | ratios.gt(1.0).any()).item<bool>())
    throw ConfigError("positional expert: slice ratio outside [0, 1]");

  std::vector<torch::Tensor> feats{ratios};
  for (int i = 0; i < cfg.n_fourier; ++i) {
    const double freq = std::pow(2.0, i) * M_PI;
    feats.push_back((ratios * freq).sin());
    feats.push_back((ratios * freq).cos());
  }
  torch::Tensor x = torch::cat(feats, /*dim=*/1);
  return mlp->forward(x).unsqueeze(1);  // one token
}

// ---------------------------------------------------------------------------
// E2

RandomCnnEncoderImpl::RandomCnnEncoderImpl(const ToeConfig& cfg_) : cfg(cfg_) {
  cfg.validate();
  torch::nn::Sequential net;
  torchutil::with_fixed_seed(mix64(hash_str(cfg.encoder_id), 0xe2), [&] {
    int in = 1;
    for (int width : {32, 64, cfg.d_e}) {
      net->push_back(torch::nn::Conv2d(
          torch::nn::Conv2dOptions(in, width, 3).stride(2).padding(1)));
      net->push_back(torch::nn::SiLU());
      in = width;
    }
  });
  backbone = register_module("backbone", net);
  for (auto& p : parameters()) p.set_requires_grad(false);
}

torch::Tensor RandomCnnEncoderImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 1)
    throw ShapeError("vision expert: expected images of shape (B, 1, H, W)");
  torch::NoGradGuard ng;  // frozen: never part of a training graph
  torch::Tensor h = backbone->forward(images);
  // Fixed 8x8 token grid regardless of input size keeps attention cost
  // and token count stable across fingerprint target sizes.
  h = torch::adaptive_avg_pool2d(h, {8, 8});
  return h.flatten(2).transpose(1, 2).contiguous();  // (B, 64, d_e)
}

// ---------------------------------------------------------------------------
// Fusion

FusionImpl::FusionImpl(const ToeConfig& cfg_) : cfg(cfg_) {
  cfg.validate();
  f_q = register_module("f_q", torch::nn::Linear(cfg.d_e, cfg.d_c));
  f_k = register_module("f_k", torch::nn::Linear(cfg.d_e, cfg.d_c));
  f_v = register_module("f_v", torch::nn::Linear(cfg.d_e, cfg.d_c));
}

std::pair<torch::Tensor, torch::Tensor> FusionImpl::forward_with_weights(
    const torch::Tensor& o1, const torch::Tensor& o2) {
  if (o1.dim() != 3 || o2.dim() != 3 || o1.size(2) != cfg.d_e ||
      o2.size(2) != cfg.d_e || o1.size(0) != o2.size(0))
    throw ShapeError("fuse: opinions must be (B, tokens, d_e) with equal B");
  const int64_t b = o1.size(0), m = o1.size(1), n = o2.size(1);
  const int64_t heads = cfg.n_heads, d_k = cfg.d_c / heads;

  auto split = [&](const torch::Tensor& t, int64_t tokens) {
    return t.view({b, tokens, heads, d_k}).permute({0, 2, 1, 3});
  };
  torch::Tensor q = split(f_q->forward(o1), m);
  torch::Tensor k = split(f_k->forward(o2), n);
  torch::Tensor v = split(f_v->forward(o2), n);

  torch::Tensor scores =
      torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(d_k));
  torch::Tensor attn = torch::softmax(scores, /*dim=*/-1);
  // (B, heads, m, d_k) -> heads concatenated; no output projection, so a
  // singleton K/V collapses to F_V(o2) exactly.
  torch::Tensor out = torch::matmul(attn, v)
                          .permute({0, 2, 1, 3})
                          .contiguous()
                          .view({b, m, cfg.d_c});
  return {out, attn};
}

torch::Tensor FusionImpl::forward(const torch::Tensor& o1,
                                  const torch::Tensor& o2) {
  return forward_with_weights(o1, o2).first;
}

}  // namespace nnqc::toe
