#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "nnqc/grid.hpp"

namespace nnqc::manifold {

// Stage-1 hyperparameters. The latent channel count is part of the model
// identity and fixed at 2; everything else is tunable.
struct VaeConfig {
  int num_labels = 1;          // foreground classes; one-hot adds background
  int compression_factor = 4;  // spatial downsampling f (power of two)
  int latent_channels = 2;     // fixed; validate() rejects other values
  int base_width = 32;         // encoder width, doubled per downsampling
  int disc_base_width = 32;    // patch discriminator width
  int disc_layers = 3;         // stride-2 conv layers (70x70 receptive field)
  double lambda_kld = 1e-6;
  double lambda_perc = 1.0;
  double lambda_adv = 0.01;
  double lambda_dice = 1.0;
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  double disc_lr = 1e-4;
  double holdout_fraction = 0.1;  // subject-level reconstruction holdout
  int divergence_patience = 3;    // consecutive non-finite steps tolerated

  void validate() const;
};

// Convolutional VAE over one-hot mask slices: (B, L+1, H, W) down to a
// 2-channel latent at H/f x W/f and back to class logits.
struct SegVaeImpl : torch::nn::Module {
  explicit SegVaeImpl(const VaeConfig& cfg);

  /// Posterior parameters (mu, logvar), each (B, 2, H/f, W/f).
  std::pair<torch::Tensor, torch::Tensor> encode(const torch::Tensor& onehot);

  /// z = mu + exp(logvar/2) * eps with eps drawn from `gen`.
  torch::Tensor reparameterize(const torch::Tensor& mu,
                               const torch::Tensor& logvar,
                               torch::Generator& gen);

  /// Class logits (B, L+1, H*f... input spatial dims restored).
  torch::Tensor decode(const torch::Tensor& z);

  VaeConfig cfg;
  torch::nn::Sequential encoder{nullptr};
  torch::nn::Conv2d to_posterior{nullptr};  // -> 2*latent_channels
  torch::nn::Sequential decoder{nullptr};
};
TORCH_MODULE(SegVae);

// PatchGAN discriminator on class-probability maps; least-squares labels.
struct PatchDiscriminatorImpl : torch::nn::Module {
  explicit PatchDiscriminatorImpl(const VaeConfig& cfg);
  torch::Tensor forward(const torch::Tensor& probs);  // (B, patches...) scores
  torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// Frozen feature extractor for the perceptual term. Masks are rendered as
// a single intensity channel (label/L) and passed through a fixed-seed
// random conv stack; features are compared at every stage.
struct PerceptualNetImpl : torch::nn::Module {
  explicit PerceptualNetImpl(const std::string& identity = "random_cnn_v1");
  std::vector<torch::Tensor> features(const torch::Tensor& rendered);
  torch::Tensor distance(const torch::Tensor& probs_a,
                         const torch::Tensor& probs_b);

  std::string identity;
  torch::nn::ModuleList stages{nullptr};
};
TORCH_MODULE(PerceptualNet);

struct VaeLossParts {
  torch::Tensor total;
  torch::Tensor kld;
  torch::Tensor perc;
  torch::Tensor adv;
  torch::Tensor dice;
};

/// Closed-form Gaussian KL to N(0, I), summed over latent elements and
/// averaged over the batch.
torch::Tensor kld_loss(const torch::Tensor& mu, const torch::Tensor& logvar);

/// 1 - mean per-class soft Dice between softmax(logits) and the one-hot
/// target (all channels, batch pooled). In [0, 1]; 0 iff probs == target.
torch::Tensor generalized_dice_loss(const torch::Tensor& logits,
                                    const torch::Tensor& target_onehot);

/// Eq-style weighted sum of KLD + perceptual + adversarial + Dice parts.
/// `disc_scores_fake` may be an undefined tensor when cfg.lambda_adv == 0.
/// Throws TrainingDivergence when any component is non-finite.
VaeLossParts vae_loss(const torch::Tensor& target_onehot,
                      const torch::Tensor& logits, const torch::Tensor& mu,
                      const torch::Tensor& logvar,
                      const torch::Tensor& disc_scores_fake,
                      PerceptualNet& perc_net, const VaeConfig& cfg);

struct GtSlice {
  std::string subject_id;
  MaskGrid2D mask;
};

struct VaeEpochStats {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_kld = 0.0;
  double loss_perc = 0.0;
  double loss_adv = 0.0;
  double loss_dice = 0.0;
  double disc_loss = 0.0;
  double holdout_dice = 0.0;
};

struct VaeTrainResult {
  SegVae vae{nullptr};
  PatchDiscriminator disc{nullptr};
  std::vector<VaeEpochStats> log;
  std::vector<std::string> holdout_subjects;
};

/// Alternating generator/discriminator training on clean GT slices. The
/// holdout split is subject-level; reconstruction Dice on it is reported
/// per epoch. lambda_adv == 0 skips discriminator updates entirely.
VaeTrainResult train_vae_gan(const std::vector<GtSlice>& gt_slices,
                             const VaeConfig& cfg, std::uint64_t seed);

}  // namespace nnqc::manifold
