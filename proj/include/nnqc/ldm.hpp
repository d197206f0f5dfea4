#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "nnqc/degrade.hpp"
#include "nnqc/grid.hpp"
#include "nnqc/manifold.hpp"
#include "nnqc/toe.hpp"

namespace nnqc::ldm {

// Cumulative signal fractions for the DDPM forward process. alpha_bar has
// t_train + 1 entries with alpha_bar[0] = 1 (no noise) decreasing towards
// ~0 at t_train.
struct NoiseSchedule {
  std::string family = "linear";  // "linear" | "scaled_linear"
  int t_train = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<double> alpha_bar;

  static NoiseSchedule make(const std::string& family, int t_train = 1000,
                            double beta_start = 1e-4, double beta_end = 0.02);
  void validate() const;

  /// DDIM subsequence tau_1..tau_steps (ascending, tau_steps = t_train).
  /// Throws ConfigError unless 1 <= steps <= t_train.
  std::vector<int> timesteps(int steps) const;
};

/// z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps.
torch::Tensor forward_noise(const torch::Tensor& z0, int t,
                            const torch::Tensor& eps,
                            const NoiseSchedule& sched);

struct LdmConfig {
  int t_train = 1000;
  std::string schedule = "linear";
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int base_width = 32;
  std::vector<int> channel_mults{1, 2};
  int time_dim = 128;  // sinusoidal embedding width (even)
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-4;
  double empty_mask_prob = 0.05;  // fraction of steps with a zeroed mask channel
  int sample_steps = 20;
  int divergence_patience = 3;

  void validate() const;
};

// Conditional denoiser over LatentWithMask inputs: 3 channels in (2 latent
// + 1 mask evidence), 2 noise-prediction channels out. Every resolution
// level cross-attends to the fused condition tokens.
struct DiffusionUnetImpl : torch::nn::Module {
  DiffusionUnetImpl(const LdmConfig& cfg, int d_c);

  /// x (B, 3, h, w); t (B,) int64 in [0, t_train]; cond (B, tokens, d_c).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t,
                        const torch::Tensor& cond);

  LdmConfig cfg;
  int d_c = 0;
  torch::nn::Sequential time_mlp{nullptr};
  torch::nn::Conv2d stem{nullptr};
  torch::nn::ModuleList down_res{nullptr}, down_attn{nullptr},
      downsamples{nullptr};
  torch::nn::ModuleList mid{nullptr};
  torch::nn::ModuleList up_res{nullptr}, up_attn{nullptr}, upsamples{nullptr};
  torch::nn::Sequential head{nullptr};
};
TORCH_MODULE(DiffusionUnet);

/// Mean squared error between predicted and true noise over the latent
/// channels. Throws TrainingDivergence when non-finite.
torch::Tensor ldm_loss(const torch::Tensor& eps_pred, const torch::Tensor& eps);

struct LdmEpochStats {
  int epoch = 0;
  double loss = 0.0;
};

struct LdmTrainResult {
  DiffusionUnet unet{nullptr};
  toe::PositionalExpert e1{nullptr};
  toe::Fusion fusion{nullptr};
  double latent_scale = 1.0;
  std::vector<LdmEpochStats> log;
};

/// Stage-2 training on a degradation corpus. The VAE (posterior-mean
/// encoder for z0 targets) and the vision expert are used read-only under
/// no-grad; the UNet, E1 and the fusion projections receive updates.
/// Each epoch sees one uniformly chosen band per (subject, slice).
LdmTrainResult train_ldm(const manifold::SegVae& vae,
                         const degrade::Corpus& corpus,
                         const toe::RandomCnnEncoder& e2,
                         const toe::ToeConfig& toe_cfg,
                         const NoiseSchedule& sched, const LdmConfig& cfg,
                         std::uint64_t seed);

// Read-only bundle of everything sampling needs.
struct SampleContext {
  const manifold::SegVae* vae = nullptr;
  const DiffusionUnet* unet = nullptr;
  const toe::PositionalExpert* e1 = nullptr;
  const toe::RandomCnnEncoder* e2 = nullptr;
  const toe::Fusion* fusion = nullptr;
  const NoiseSchedule* sched = nullptr;
  double latent_scale = 1.0;
  int num_labels = 1;
};

// Mask-evidence channel as the UNet saw it at each reverse step (tests
// assert it never changes along the trajectory).
struct SampleTrace {
  std::vector<torch::Tensor> mask_channels;
};

/// Deterministic DDIM (eta = 0) restoration of a pseudo-GT label slice
/// from a (possibly empty) mask and its image. Initial noise is a pure
/// function of `seed`.
MaskGrid2D sample_pgt(const MaskGrid2D& S, const ImageGrid2D& I,
                      double slice_ratio, int steps, std::uint64_t seed,
                      const SampleContext& ctx, SampleTrace* trace = nullptr);

}  // namespace nnqc::ldm
