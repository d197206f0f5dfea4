#pragma once

#include <string>
#include <utility>

#include <torch/torch.h>

#include "nnqc/grid.hpp"

namespace nnqc::toe {

struct ToeConfig {
  int d_e = 256;    // expert embedding width
  int d_c = 256;    // condition width (UNet cross-attention side)
  int n_heads = 4;  // must divide d_c
  int mlp_hidden = 128;
  int n_fourier = 8;  // sin/cos frequency pairs for the slice ratio
  std::string encoder_id = "random_cnn_v1";
  bool encoder_frozen = true;  // fixed contract; validate() rejects false

  void validate() const;
};

// E1: embeds the axial slice ratio. Fourier features feed a small MLP so
// nearby ratios share structure while remaining separable after training.
// Trained jointly with the diffusion model (module ldm owns its updates).
struct PositionalExpertImpl : torch::nn::Module {
  explicit PositionalExpertImpl(const ToeConfig& cfg);

  /// ratios (B, 1) in [0, 1] -> opinion tokens (B, 1, d_e).
  /// Throws ConfigError when any ratio is outside [0, 1].
  torch::Tensor forward(const torch::Tensor& ratios);

  ToeConfig cfg;
  torch::nn::Sequential mlp{nullptr};
};
TORCH_MODULE(PositionalExpert);

// E2: frozen fixed-identity conv encoder producing patch tokens from the
// preprocessed image slice. Stands in for a large pretrained vision
// encoder; its weights are a pure function of `encoder_id` and are never
// updated (the ldm trainer asserts the digest is unchanged).
struct RandomCnnEncoderImpl : torch::nn::Module {
  explicit RandomCnnEncoderImpl(const ToeConfig& cfg);

  /// images (B, 1, H, W) in [0, 1] -> opinion tokens (B, 64, d_e).
  torch::Tensor forward(const torch::Tensor& images);

  ToeConfig cfg;
  torch::nn::Sequential backbone{nullptr};
};
TORCH_MODULE(RandomCnnEncoder);

// Multi-head cross-attention fusing the two opinions: Q from o1, K/V from
// o2, no output projection. With a single K/V token the softmax weight is
// exactly 1 and the output equals F_V(o2) bit-for-bit.
struct FusionImpl : torch::nn::Module {
  explicit FusionImpl(const ToeConfig& cfg);

  /// o1 (B, m, d_e), o2 (B, n, d_e) -> condition (B, m, d_c).
  torch::Tensor forward(const torch::Tensor& o1, const torch::Tensor& o2);

  /// Same, also returning the attention weights (B, n_heads, m, n).
  std::pair<torch::Tensor, torch::Tensor> forward_with_weights(
      const torch::Tensor& o1, const torch::Tensor& o2);

  ToeConfig cfg;
  torch::nn::Linear f_q{nullptr}, f_k{nullptr}, f_v{nullptr};
};
TORCH_MODULE(Fusion);

}  // namespace nnqc::toe
