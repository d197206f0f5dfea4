#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nnqc/grid.hpp"
#include "nnqc/volume.hpp"

namespace nnqc::metrics {

/// Mean Dice-Sorensen coefficient over foreground classes. A class absent
/// from both masks is excluded; absent from exactly one contributes 0.
/// Two all-background masks score 1 (identical). Throws ShapeError on
/// shape mismatch.
double dsc(const MaskGrid2D& a, const MaskGrid2D& b);
double dsc(const MaskGrid3D& a, const MaskGrid3D& b);

struct Hd95Result {
  double value = 0.0;
  // classes where exactly one mask was empty; their distance is the
  // configured sentinel (image diagonal in mm)
  int undefined_classes = 0;
  bool defined() const { return undefined_classes == 0; }
};

/// 95th percentile of the pooled symmetric boundary distances (mm),
/// averaged over foreground classes. Both masks empty for a class ->
/// class excluded (0 if no class remains); exactly one empty -> sentinel.
Hd95Result hd95(const MaskGrid2D& a, const MaskGrid2D& b,
                double sx = 1.0, double sy = 1.0);
Hd95Result hd95(const MaskGrid3D& a, const MaskGrid3D& b,
                const Spacing& spacing = {1.0, 1.0, 1.0});

/// Pearson correlation; throws ShapeError for n < 2 or zero variance.
double pearson_r(const std::vector<double>& xs, const std::vector<double>& ys);

double mae(const std::vector<double>& xs, const std::vector<double>& ys);

/// Kendall rank correlation (tau-b; equals tau-a when there are no ties).
double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

/// Welch's unpaired two-sided t-test p-value (the report hook).
double t_test_pvalue(const std::vector<double>& xs,
                     const std::vector<double>& ys);

struct ModelRanking {
  std::vector<std::string> pseudo_order;  // best first
  std::vector<std::string> real_order;
  std::map<std::string, int> pseudo_rank;  // 1-based
  std::map<std::string, int> real_rank;
  double tau = 0.0;
};

/// Ranks models by mean pseudo score and mean real score (higher is
/// better); ties broken by model name. Returns both orders and their tau.
ModelRanking rank_models(
    const std::map<std::string, std::vector<double>>& pseudo_scores,
    const std::map<std::string, std::vector<double>>& real_scores);

// ---------------------------------------------------------------------------
// Report types

struct ScorePair {
  std::string subject_id;
  std::string metric;  // "dsc" | "hd95"
  std::string tag;     // free-form grouping key (band, model, ...)
  double pseudo_score = 0.0;
  double real_score = 0.0;
  bool real_available = false;
  bool flagged = false;  // e.g. hd95 sentinel used
};

struct QCReport {
  std::vector<ScorePair> pairs;
  std::optional<double> pearson_dsc;
  std::optional<double> mae_dsc;
  std::optional<double> pearson_hd95;
  std::optional<double> mae_hd95;
  std::optional<double> kendall;
  std::map<std::string, double> extra;  // per-band breakdowns etc.
  std::string t_test_variant = "welch_unpaired_two_sided";

  /// Fills the correlation/MAE summary fields from `pairs` (per metric,
  /// over entries that carry a real score).
  void summarize();
  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

}  // namespace nnqc::metrics
