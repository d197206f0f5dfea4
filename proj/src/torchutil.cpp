#include "nnqc/torchutil.hpp"

#include <algorithm>
#include <map>
#include <vector>

#include "nnqc/digest.hpp"
#include "nnqc/errors.hpp"
#include "nnqc/rng.hpp"

namespace nnqc::torchutil {

torch::Tensor image_to_tensor(const ImageGrid2D& img) {
  torch::Tensor t = torch::empty({1, 1, img.h, img.w}, torch::kFloat32);
  std::copy(img.data.begin(), img.data.end(), t.data_ptr<float>());
  return t;
}

torch::Tensor mask_to_onehot(const MaskGrid2D& mask, int num_labels) {
  if (num_labels < 1) throw ShapeError("mask_to_onehot: num_labels < 1");
  torch::Tensor t =
      torch::zeros({1, num_labels + 1, mask.h, mask.w}, torch::kFloat32);
  auto acc = t.accessor<float, 4>();
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      const int v = mask.at(y, x);
      if (v < 0 || v > num_labels)
        throw ShapeError("mask_to_onehot: label " + std::to_string(v) +
                         " outside [0, " + std::to_string(num_labels) + "]");
      acc[0][v][y][x] = 1.0f;
    }
  return t;
}

torch::Tensor mask_to_scalar(const MaskGrid2D& mask, int num_labels) {
  if (num_labels < 1) throw ShapeError("mask_to_scalar: num_labels < 1");
  torch::Tensor t = torch::empty({1, 1, mask.h, mask.w}, torch::kFloat32);
  float* p = t.data_ptr<float>();
  for (int v : mask.data)
    *p++ = static_cast<float>(v) / static_cast<float>(num_labels);
  return t;
}

MaskGrid2D logits_to_mask(const torch::Tensor& logits) {
  torch::Tensor t = logits;
  if (t.dim() == 4) {
    if (t.size(0) != 1)
      throw ShapeError("logits_to_mask: batch dimension must be 1");
    t = t.squeeze(0);
  }
  if (t.dim() != 3) throw ShapeError("logits_to_mask: expected (C,H,W)");
  torch::Tensor idx = t.argmax(0).to(torch::kInt32).contiguous();
  MaskGrid2D out(static_cast<int>(idx.size(0)), static_cast<int>(idx.size(1)));
  const int* p = idx.data_ptr<int>();
  std::copy(p, p + out.data.size(), out.data.begin());
  return out;
}

std::string module_digest(const torch::nn::Module& m) {
  std::map<std::string, torch::Tensor> named;
  for (const auto& p : m.named_parameters(/*recurse=*/true))
    named["p/" + p.key()] = p.value();
  for (const auto& b : m.named_buffers(/*recurse=*/true))
    named["b/" + b.key()] = b.value();

  Sha256 h;
  for (const auto& [name, tensor] : named) {
    h.update(name);
    torch::Tensor t = tensor.detach().to(torch::kCPU).contiguous();
    for (int64_t d : t.sizes()) {
      const auto d64 = static_cast<std::int64_t>(d);
      h.update(&d64, sizeof(d64));
    }
    if (t.scalar_type() != torch::kFloat32) t = t.to(torch::kFloat32);
    h.update(t.data_ptr<float>(), t.numel() * sizeof(float));
  }
  return h.hex();
}

void save_module(const torch::nn::Module& m, const std::string& path) {
  torch::serialize::OutputArchive archive;
  m.save(archive);
  archive.save_to(path);
}

void load_module(torch::nn::Module& m, const std::string& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path);
  } catch (const c10::Error& e) {
    throw IoError("load_module: cannot read " + path + ": " + e.msg());
  }
  m.load(archive);
}

torch::Generator make_generator(std::uint64_t seed) {
  torch::Generator gen = at::detail::createCPUGenerator();
  gen.set_current_seed(mix64(seed));
  return gen;
}

void with_fixed_seed(std::uint64_t seed, const std::function<void()>& fn) {
  auto gen = at::detail::getDefaultCPUGenerator();
  torch::Tensor saved;
  {
    std::lock_guard<std::mutex> lock(gen.mutex());
    saved = gen.get_state();
  }
  torch::manual_seed(seed);
  try {
    fn();
  } catch (...) {
    std::lock_guard<std::mutex> lock(gen.mutex());
    gen.set_state(saved);
    throw;
  }
  std::lock_guard<std::mutex> lock(gen.mutex());
  gen.set_state(saved);
}

}  // namespace nnqc::torchutil
