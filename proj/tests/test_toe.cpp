#include <cmath>
#include <vector>

#include "nnqc/errors.hpp"
#include "nnqc/toe.hpp"
#include "nnqc/torchutil.hpp"

#include "doctest_compat.hpp"  // after torch headers; see the header comment

using namespace nnqc;
using namespace nnqc::toe;

namespace {

ToeConfig tiny_config() {
  ToeConfig cfg;
  cfg.d_e = 16;
  cfg.d_c = 16;
  cfg.n_heads = 4;
  cfg.mlp_hidden = 8;
  cfg.n_fourier = 4;
  return cfg;
}

// Reference attention: nested loops, double accumulation, per-row softmax.
torch::Tensor brute_force_fusion(Fusion& fusion, const torch::Tensor& o1,
                                 const torch::Tensor& o2, int n_heads) {
  torch::Tensor q = fusion->f_q(o1);  // (B, m, d_c)
  torch::Tensor k = fusion->f_k(o2);  // (B, n, d_c)
  torch::Tensor v = fusion->f_v(o2);
  const int b_n = q.size(0), m = q.size(1), n = k.size(1);
  const int d_c = q.size(2), d_k = d_c / n_heads;
  torch::Tensor out = torch::zeros({b_n, m, d_c});
  auto qa = q.accessor<float, 3>();
  auto ka = k.accessor<float, 3>();
  auto va = v.accessor<float, 3>();
  auto oa = out.accessor<float, 3>();
  for (int b = 0; b < b_n; ++b)
    for (int h = 0; h < n_heads; ++h)
      for (int i = 0; i < m; ++i) {
        std::vector<double> scores(n, 0.0);
        for (int j = 0; j < n; ++j) {
          double dot = 0.0;
          for (int d = 0; d < d_k; ++d)
            dot += double(qa[b][i][h * d_k + d]) * ka[b][j][h * d_k + d];
          scores[j] = dot / std::sqrt(double(d_k));
        }
        const double mx = *std::max_element(scores.begin(), scores.end());
        double z = 0.0;
        for (double& s : scores) {
          s = std::exp(s - mx);
          z += s;
        }
        for (int d = 0; d < d_k; ++d) {
          double acc = 0.0;
          for (int j = 0; j < n; ++j)
            acc += scores[j] / z * va[b][j][h * d_k + d];
          oa[b][i][h * d_k + d] = static_cast<float>(acc);
        }
      }
  return out;
}

}  // namespace

TEST_CASE("ToeConfig validation") {
  ToeConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());

  ToeConfig bad = cfg;
  bad.n_heads = 3;  // does not divide d_c = 16
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.encoder_frozen = false;  // fixed-encoder contract
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.d_e = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("PositionalExpert: one token per ratio, domain-checked") {
  torch::manual_seed(2);
  PositionalExpert e1(tiny_config());
  torch::Tensor ratios = torch::tensor({{0.0f}, {0.5f}, {1.0f}});
  torch::Tensor tokens = e1->forward(ratios);
  REQUIRE(tokens.sizes() == torch::IntArrayRef({3, 1, 16}));

  // Distinct positions produce distinct opinions even before training.
  CHECK(!torch::allclose(tokens[0], tokens[1]));
  CHECK(!torch::allclose(tokens[1], tokens[2]));

  CHECK_THROWS_AS(e1->forward(torch::tensor({{-0.01f}})), ConfigError);
  CHECK_THROWS_AS(e1->forward(torch::tensor({{1.01f}})), ConfigError);
  CHECK_THROWS_AS(e1->forward(torch::tensor({0.5f})), ShapeError);

  // Endpoints of the domain are valid.
  CHECK_NOTHROW(e1->forward(torch::tensor({{0.0f}})));
  CHECK_NOTHROW(e1->forward(torch::tensor({{1.0f}})));
}

TEST_CASE("RandomCnnEncoder: frozen, identity-keyed patch tokens") {
  ToeConfig cfg = tiny_config();
  RandomCnnEncoder a(cfg);
  RandomCnnEncoder b(cfg);
  CHECK(torchutil::module_digest(*a) == torchutil::module_digest(*b));

  ToeConfig other = cfg;
  other.encoder_id = "random_cnn_v2";
  RandomCnnEncoder c(other);
  CHECK(torchutil::module_digest(*c) != torchutil::module_digest(*a));

  for (const auto& p : a->parameters()) CHECK(!p.requires_grad());

  torch::Tensor img = torch::rand({2, 1, 64, 64});
  torch::Tensor tokens = a->forward(img);
  REQUIRE(tokens.sizes() == torch::IntArrayRef({2, 64, 16}));
  CHECK(!tokens.requires_grad());  // opinions never carry gradient

  // Same tokens for the same image regardless of ambient RNG state.
  torch::manual_seed(77);
  torch::Tensor again = a->forward(img);
  CHECK(torch::equal(tokens, again));

  // Token count is fixed by the pooling grid, not the input size.
  CHECK(a->forward(torch::rand({1, 1, 32, 32})).sizes() ==
        torch::IntArrayRef({1, 64, 16}));
}

TEST_CASE("Fusion against brute-force attention") {
  ToeConfig cfg = tiny_config();
  torch::manual_seed(4);
  Fusion fusion(cfg);
  torch::Generator gen = torchutil::make_generator(42);
  torch::Tensor o1 = torch::randn({2, 3, cfg.d_e}, gen);
  torch::Tensor o2 = torch::randn({2, 5, cfg.d_e}, gen);

  auto [out, attn] = fusion->forward_with_weights(o1, o2);
  REQUIRE(out.sizes() == torch::IntArrayRef({2, 3, cfg.d_c}));
  REQUIRE(attn.sizes() == torch::IntArrayRef({2, cfg.n_heads, 3, 5}));

  torch::Tensor oracle = brute_force_fusion(fusion, o1, o2, cfg.n_heads);
  CHECK((out - oracle).abs().max().item<double>() < 1e-6);

  // Attention rows are probability distributions.
  CHECK(attn.min().item<double>() >= 0.0);
  CHECK((attn.sum(-1) - 1.0).abs().max().item<double>() < 1e-6);

  // forward() is forward_with_weights() minus the weights.
  CHECK(torch::equal(fusion->forward(o1, o2), out));
}

TEST_CASE("Fusion with a single K/V token reduces to F_V exactly") {
  ToeConfig cfg = tiny_config();
  torch::manual_seed(6);
  Fusion fusion(cfg);
  torch::Generator gen = torchutil::make_generator(43);
  torch::Tensor o1 = torch::randn({3, 4, cfg.d_e}, gen);
  torch::Tensor o2 = torch::randn({3, 1, cfg.d_e}, gen);

  auto [out, attn] = fusion->forward_with_weights(o1, o2);
  // softmax over one logit is exactly 1, so every query returns F_V(o2).
  CHECK(torch::equal(attn, torch::ones_like(attn)));
  torch::Tensor fv = fusion->f_v(o2);  // (3, 1, d_c)
  for (int i = 0; i < 4; ++i)
    CHECK(torch::equal(out.select(1, i), fv.select(1, 0)));
}

TEST_CASE("Fusion output stays inside the V convex hull per head") {
  ToeConfig cfg = tiny_config();
  torch::manual_seed(8);
  Fusion fusion(cfg);
  torch::Generator gen = torchutil::make_generator(44);
  torch::Tensor o1 = torch::randn({1, 6, cfg.d_e}, gen);
  torch::Tensor o2 = torch::randn({1, 7, cfg.d_e}, gen);

  torch::Tensor out = fusion->forward(o1, o2);       // (1, 6, d_c)
  torch::Tensor v = fusion->f_v(o2);                 // (1, 7, d_c)
  // Convex combinations cannot leave the per-dimension token range.
  torch::Tensor lo = std::get<0>(v.min(1, /*keepdim=*/true));
  torch::Tensor hi = std::get<0>(v.max(1, /*keepdim=*/true));
  CHECK((out >= lo - 1e-6).all().item<bool>());
  CHECK((out <= hi + 1e-6).all().item<bool>());
}

TEST_CASE("Fusion shape validation") {
  ToeConfig cfg = tiny_config();
  torch::manual_seed(10);
  Fusion fusion(cfg);
  CHECK_THROWS_AS(
      fusion->forward(torch::zeros({1, 2, 8}), torch::zeros({1, 2, 16})),
      ShapeError);
  CHECK_THROWS_AS(
      fusion->forward(torch::zeros({1, 2, 16}), torch::zeros({2, 2, 16})),
      ShapeError);
}
