#include "nnqc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "nnqc/errors.hpp"
#include "nnqc/stats.hpp"

using json = nlohmann::json;

namespace nnqc::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ClassCounts {
  std::size_t a = 0, b = 0, inter = 0;
};

// Per-label voxel counts and overlap, keyed by label value. Background
// (<= 0) is ignored.
std::map<int, ClassCounts> class_counts(const int* a, const int* b,
                                        std::size_t n) {
  std::map<int, ClassCounts> counts;
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] > 0) ++counts[a[i]].a;
    if (b[i] > 0) ++counts[b[i]].b;
    if (a[i] > 0 && a[i] == b[i]) ++counts[a[i]].inter;
  }
  return counts;
}

double dsc_impl(const int* a, const int* b, std::size_t n) {
  const auto counts = class_counts(a, b, n);
  if (counts.empty()) return 1.0;  // both masks all background
  double sum = 0.0;
  for (const auto& [label, c] : counts) {
    if (c.a == 0 || c.b == 0) continue;  // contributes 0
    sum += 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.a + c.b);
  }
  return sum / static_cast<double>(counts.size());
}

// ---------------------------------------------------------------------------
// Exact Euclidean distance transform (squared), separable lower-envelope
// scan per axis; supports anisotropic spacing via real sample coordinates.

void edt_1d(std::vector<double>& f, double spacing, std::vector<int>& v,
            std::vector<double>& z, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double xq = q * spacing;
    double s;
    for (;;) {
      const double xv = v[k] * spacing;
      if (f[v[k]] == kInf) {
        s = -kInf;  // previous parabola is vacuous; replace it
      } else {
        s = (f[q] + xq * xq - f[v[k]] - xv * xv) / (2.0 * (xq - xv));
      }
      if (s > z[k]) break;
      if (--k < 0) break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    const double xq = q * spacing;
    while (z[k + 1] < xq) ++k;
    const double dx = xq - v[k] * spacing;
    d[q] = f[v[k]] == kInf ? kInf : dx * dx + f[v[k]];
  }
  f = d;
}

// Squared EDT of `seed` (true cells are sources) on a 2D grid.
std::vector<double> edt2_sq(const std::vector<char>& seed, int h, int w,
                            double sx, double sy) {
  std::vector<double> g(seed.size());
  for (std::size_t i = 0; i < seed.size(); ++i) g[i] = seed[i] ? 0.0 : kInf;

  const int m = std::max(h, w);
  std::vector<int> v(m);
  std::vector<double> z(m + 1), d(m), f(m);

  for (int y = 0; y < h; ++y) {  // along x
    f.assign(g.begin() + static_cast<std::size_t>(y) * w,
             g.begin() + static_cast<std::size_t>(y + 1) * w);
    edt_1d(f, sx, v, z, d);
    std::copy(f.begin(), f.end(), g.begin() + static_cast<std::size_t>(y) * w);
  }
  for (int x = 0; x < w; ++x) {  // along y
    f.resize(h);
    for (int y = 0; y < h; ++y) f[y] = g[static_cast<std::size_t>(y) * w + x];
    edt_1d(f, sy, v, z, d);
    for (int y = 0; y < h; ++y) g[static_cast<std::size_t>(y) * w + x] = f[y];
  }
  return g;
}

// Squared EDT on a 3D grid (x fastest, NIfTI layout).
std::vector<double> edt3_sq(const std::vector<char>& seed, int nx, int ny,
                            int nz, const Spacing& sp) {
  std::vector<double> g(seed.size());
  for (std::size_t i = 0; i < seed.size(); ++i) g[i] = seed[i] ? 0.0 : kInf;

  const int m = std::max({nx, ny, nz});
  std::vector<int> v(m);
  std::vector<double> z(m + 1), d(m), f(m);
  const auto idx = [nx, ny](int x, int y, int zz) {
    return (static_cast<std::size_t>(zz) * ny + y) * nx + x;
  };

  for (int zz = 0; zz < nz; ++zz)
    for (int y = 0; y < ny; ++y) {
      f.resize(nx);
      for (int x = 0; x < nx; ++x) f[x] = g[idx(x, y, zz)];
      edt_1d(f, sp[0], v, z, d);
      for (int x = 0; x < nx; ++x) g[idx(x, y, zz)] = f[x];
    }
  for (int zz = 0; zz < nz; ++zz)
    for (int x = 0; x < nx; ++x) {
      f.resize(ny);
      for (int y = 0; y < ny; ++y) f[y] = g[idx(x, y, zz)];
      edt_1d(f, sp[1], v, z, d);
      for (int y = 0; y < ny; ++y) g[idx(x, y, zz)] = f[y];
    }
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      f.resize(nz);
      for (int zz = 0; zz < nz; ++zz) f[zz] = g[idx(x, y, zz)];
      edt_1d(f, sp[2], v, z, d);
      for (int zz = 0; zz < nz; ++zz) g[idx(x, y, zz)] = f[zz];
    }
  return g;
}

// Boundary of the binary region {mask == label}: member cells with a
// face neighbour outside the region (out-of-bounds counts as outside).
std::vector<char> boundary2(const MaskGrid2D& mask, int label) {
  std::vector<char> out(mask.data.size(), 0);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      if (mask.at(y, x) != label) continue;
      const bool edge = y == 0 || y == mask.h - 1 || x == 0 || x == mask.w - 1;
      if (edge || mask.at(y - 1, x) != label || mask.at(y + 1, x) != label ||
          mask.at(y, x - 1) != label || mask.at(y, x + 1) != label)
        out[static_cast<std::size_t>(y) * mask.w + x] = 1;
    }
  return out;
}

std::vector<char> boundary3(const MaskGrid3D& mask, int label) {
  std::vector<char> out(mask.data.size(), 0);
  const auto idx = [&mask](int x, int y, int z) {
    return (static_cast<std::size_t>(z) * mask.ny + y) * mask.nx + x;
  };
  for (int z = 0; z < mask.nz; ++z)
    for (int y = 0; y < mask.ny; ++y)
      for (int x = 0; x < mask.nx; ++x) {
        if (mask.at(x, y, z) != label) continue;
        const bool edge = x == 0 || x == mask.nx - 1 || y == 0 ||
                          y == mask.ny - 1 || z == 0 || z == mask.nz - 1;
        if (edge || mask.at(x - 1, y, z) != label ||
            mask.at(x + 1, y, z) != label || mask.at(x, y - 1, z) != label ||
            mask.at(x, y + 1, z) != label || mask.at(x, y, z - 1) != label ||
            mask.at(x, y, z + 1) != label)
          out[idx(x, y, z)] = 1;
      }
  return out;
}

bool any_set(const std::vector<char>& v) {
  return std::find(v.begin(), v.end(), char(1)) != v.end();
}

// Pooled symmetric boundary distances -> 95th percentile for one class.
double hd95_class(const std::vector<char>& ba, const std::vector<char>& bb,
                  const std::vector<double>& edt_a_sq,
                  const std::vector<double>& edt_b_sq) {
  std::vector<double> dists;
  for (std::size_t i = 0; i < ba.size(); ++i)
    if (ba[i]) dists.push_back(std::sqrt(edt_b_sq[i]));
  for (std::size_t i = 0; i < bb.size(); ++i)
    if (bb[i]) dists.push_back(std::sqrt(edt_a_sq[i]));
  return percentile(dists, 95.0);
}

std::vector<int> present_labels(const int* a, const int* b, std::size_t n) {
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] > 0) labels.push_back(a[i]);
    if (b[i] > 0) labels.push_back(b[i]);
  }
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

}  // namespace

double dsc(const MaskGrid2D& a, const MaskGrid2D& b) {
  if (a.h != b.h || a.w != b.w) throw ShapeError("dsc: mask shapes differ");
  return dsc_impl(a.data.data(), b.data.data(), a.data.size());
}

double dsc(const MaskGrid3D& a, const MaskGrid3D& b) {
  if (a.nx != b.nx || a.ny != b.ny || a.nz != b.nz)
    throw ShapeError("dsc: mask shapes differ");
  return dsc_impl(a.data.data(), b.data.data(), a.data.size());
}

Hd95Result hd95(const MaskGrid2D& a, const MaskGrid2D& b, double sx,
                double sy) {
  if (a.h != b.h || a.w != b.w) throw ShapeError("hd95: mask shapes differ");
  const double sentinel = std::hypot(a.w * sx, a.h * sy);

  Hd95Result res;
  double sum = 0.0;
  int n_classes = 0;
  for (int label : present_labels(a.data.data(), b.data.data(), a.data.size())) {
    const auto ba = boundary2(a, label);
    const auto bb = boundary2(b, label);
    const bool ea = !any_set(ba), eb = !any_set(bb);
    ++n_classes;
    if (ea || eb) {
      sum += sentinel;
      ++res.undefined_classes;
      continue;
    }
    sum += hd95_class(ba, bb, edt2_sq(ba, a.h, a.w, sx, sy),
                      edt2_sq(bb, a.h, a.w, sx, sy));
  }
  res.value = n_classes > 0 ? sum / n_classes : 0.0;
  return res;
}

Hd95Result hd95(const MaskGrid3D& a, const MaskGrid3D& b,
                const Spacing& spacing) {
  if (a.nx != b.nx || a.ny != b.ny || a.nz != b.nz)
    throw ShapeError("hd95: mask shapes differ");
  const double sentinel =
      std::sqrt(a.nx * spacing[0] * a.nx * spacing[0] +
                a.ny * spacing[1] * a.ny * spacing[1] +
                a.nz * spacing[2] * a.nz * spacing[2]);

  Hd95Result res;
  double sum = 0.0;
  int n_classes = 0;
  for (int label : present_labels(a.data.data(), b.data.data(), a.data.size())) {
    const auto ba = boundary3(a, label);
    const auto bb = boundary3(b, label);
    const bool ea = !any_set(ba), eb = !any_set(bb);
    ++n_classes;
    if (ea || eb) {
      sum += sentinel;
      ++res.undefined_classes;
      continue;
    }
    sum += hd95_class(ba, bb, edt3_sq(ba, a.nx, a.ny, a.nz, spacing),
                      edt3_sq(bb, a.nx, a.ny, a.nz, spacing));
  }
  res.value = n_classes > 0 ? sum / n_classes : 0.0;
  return res;
}

// ---------------------------------------------------------------------------
// Agreement statistics

double pearson_r(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw ShapeError("pearson_r: length mismatch");
  const std::size_t n = xs.size();
  if (n < 2) throw ShapeError("pearson_r: need at least two samples");
  const double mx = mean_of(xs), my = mean_of(ys);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0)
    throw ShapeError("pearson_r: zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

double mae(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw ShapeError("mae: length mismatch");
  if (xs.empty()) throw ShapeError("mae: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) sum += std::abs(xs[i] - ys[i]);
  return sum / static_cast<double>(xs.size());
}

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("kendall_tau: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw ShapeError("kendall_tau: need at least two samples");
  long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0.0 && db == 0.0) continue;  // tied in both: dropped by tau-b
      if (da == 0.0) {
        ++ties_a;
      } else if (db == 0.0) {
        ++ties_b;
      } else if ((da > 0) == (db > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  const double n0 = 0.5 * static_cast<double>(n) * (n - 1);
  const double denom = std::sqrt((n0 - ties_a) * (n0 - ties_b));
  if (denom <= 0.0) return 0.0;  // constant input; no ordering information
  return static_cast<double>(concordant - discordant) / denom;
}

double t_test_pvalue(const std::vector<double>& xs,
                     const std::vector<double>& ys) {
  if (xs.size() < 2 || ys.size() < 2)
    throw ShapeError("t_test_pvalue: need at least two samples per group");
  const double nx = static_cast<double>(xs.size());
  const double ny = static_cast<double>(ys.size());
  const double vx = sample_variance(xs) / nx;
  const double vy = sample_variance(ys) / ny;
  if (vx + vy <= 0.0) return mean_of(xs) == mean_of(ys) ? 1.0 : 0.0;
  const double t = (mean_of(xs) - mean_of(ys)) / std::sqrt(vx + vy);
  // Welch-Satterthwaite degrees of freedom
  const double df = (vx + vy) * (vx + vy) /
                    (vx * vx / (nx - 1) + vy * vy / (ny - 1));
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

ModelRanking rank_models(
    const std::map<std::string, std::vector<double>>& pseudo_scores,
    const std::map<std::string, std::vector<double>>& real_scores) {
  if (pseudo_scores.size() < 2)
    throw ConfigError("rank_models: need at least two models");
  if (pseudo_scores.size() != real_scores.size())
    throw ConfigError("rank_models: model sets differ");

  std::vector<std::string> names;
  std::vector<double> pseudo_means, real_means;
  for (const auto& [name, scores] : pseudo_scores) {
    if (scores.empty())
      throw ConfigError("rank_models: no scores for model " + name);
    const auto it = real_scores.find(name);
    if (it == real_scores.end() || it->second.empty())
      throw ConfigError("rank_models: missing real scores for model " + name);
    names.push_back(name);
    pseudo_means.push_back(mean_of(scores));
    real_means.push_back(mean_of(it->second));
  }

  const auto order_by = [&names](const std::vector<double>& means) {
    std::vector<std::size_t> idx(names.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
      if (means[i] != means[j]) return means[i] > means[j];
      return names[i] < names[j];
    });
    std::vector<std::string> order;
    for (std::size_t i : idx) order.push_back(names[i]);
    return order;
  };

  ModelRanking r;
  r.pseudo_order = order_by(pseudo_means);
  r.real_order = order_by(real_means);
  for (std::size_t i = 0; i < r.pseudo_order.size(); ++i)
    r.pseudo_rank[r.pseudo_order[i]] = static_cast<int>(i) + 1;
  for (std::size_t i = 0; i < r.real_order.size(); ++i)
    r.real_rank[r.real_order[i]] = static_cast<int>(i) + 1;
  r.tau = kendall_tau(pseudo_means, real_means);
  return r;
}

// ---------------------------------------------------------------------------
// QCReport

namespace {

struct MetricPairs {
  std::vector<double> pseudo, real;
};

MetricPairs collect(const std::vector<ScorePair>& pairs,
                    const std::string& metric) {
  MetricPairs out;
  for (const auto& p : pairs)
    if (p.metric == metric && p.real_available) {
      out.pseudo.push_back(p.pseudo_score);
      out.real.push_back(p.real_score);
    }
  return out;
}

std::optional<double> guarded_pearson(const MetricPairs& mp) {
  if (mp.pseudo.size() < 2) return std::nullopt;
  if (sample_variance(mp.pseudo) <= 0.0 || sample_variance(mp.real) <= 0.0)
    return std::nullopt;
  return pearson_r(mp.pseudo, mp.real);
}

json opt_to_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

}  // namespace

void QCReport::summarize() {
  const MetricPairs d = collect(pairs, "dsc");
  const MetricPairs h = collect(pairs, "hd95");
  pearson_dsc = guarded_pearson(d);
  mae_dsc = d.pseudo.empty() ? std::nullopt
                             : std::optional<double>(mae(d.pseudo, d.real));
  pearson_hd95 = guarded_pearson(h);
  mae_hd95 = h.pseudo.empty() ? std::nullopt
                              : std::optional<double>(mae(h.pseudo, h.real));
  kendall = d.pseudo.size() >= 2
                ? std::optional<double>(kendall_tau(d.pseudo, d.real))
                : std::nullopt;
}

void QCReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << "subject_id,metric,tag,pseudo_score,real_score,real_available,"
         "flagged\n";
  out << std::setprecision(10);
  for (const auto& p : pairs) {
    out << p.subject_id << ',' << p.metric << ',' << p.tag << ','
        << p.pseudo_score << ',';
    if (p.real_available) out << p.real_score;
    out << ',' << (p.real_available ? 1 : 0) << ',' << (p.flagged ? 1 : 0)
        << '\n';
  }
}

void QCReport::write_json(const std::string& path) const {
  json j;
  j["schema_version"] = 1;
  j["t_test_variant"] = t_test_variant;
  j["summary"] = {
      {"pearson_dsc", opt_to_json(pearson_dsc)},
      {"mae_dsc", opt_to_json(mae_dsc)},
      {"pearson_hd95", opt_to_json(pearson_hd95)},
      {"mae_hd95", opt_to_json(mae_hd95)},
      {"kendall_tau", opt_to_json(kendall)},
  };
  j["extra"] = extra;
  j["pairs"] = json::array();
  for (const auto& p : pairs) {
    json jp;
    jp["subject_id"] = p.subject_id;
    jp["metric"] = p.metric;
    jp["tag"] = p.tag;
    jp["pseudo_score"] = p.pseudo_score;
    jp["real_score"] = p.real_available ? json(p.real_score) : json(nullptr);
    jp["flagged"] = p.flagged;
    j["pairs"].push_back(std::move(jp));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace nnqc::metrics
