#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "nnqc/grid.hpp"

namespace nnqc::torchutil {

/// Copies an image slice into a (1, 1, H, W) float32 CPU tensor.
torch::Tensor image_to_tensor(const ImageGrid2D& img);

/// One-hot over background + `num_labels` foreground classes:
/// (1, num_labels+1, H, W) float32. Throws ShapeError when the mask holds
/// a label above num_labels.
torch::Tensor mask_to_onehot(const MaskGrid2D& mask, int num_labels);

/// Labels rescaled to [0,1] by label/num_labels: (1, 1, H, W) float32.
torch::Tensor mask_to_scalar(const MaskGrid2D& mask, int num_labels);

/// Channel argmax of (C, H, W) or (1, C, H, W) logits as a label grid.
MaskGrid2D logits_to_mask(const torch::Tensor& logits);

/// sha256 over all named parameters and buffers, sorted by name (name,
/// shape and raw float bytes). Changes iff some stored value changes.
std::string module_digest(const torch::nn::Module& m);

void save_module(const torch::nn::Module& m, const std::string& path);
void load_module(torch::nn::Module& m, const std::string& path);

/// CPU generator seeded deterministically (independent of the global RNG).
torch::Generator make_generator(std::uint64_t seed);

/// Runs `fn` with the global CPU RNG temporarily seeded to `seed`, then
/// restores the previous RNG state. Lets fixed-identity modules
/// (frozen random encoders) initialize reproducibly without disturbing
/// the caller's stream.
void with_fixed_seed(std::uint64_t seed, const std::function<void()>& fn);

}  // namespace nnqc::torchutil
