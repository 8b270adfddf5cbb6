#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "banet/tensor.hpp"

namespace banet {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Pixel-level scores. A score whose denominator is zero is reported as 1:
/// an empty prediction of an empty target counts as perfect agreement.
struct MetricReport {
  ConfusionCounts counts;
  double di = 0.0;  // Dice
  double ja = 0.0;  // Jaccard
  double ac = 0.0;  // accuracy
  double se = 0.0;  // sensitivity
  double sp = 0.0;  // specificity
};

inline constexpr double kDefaultThreshold = 0.5;

/// Binarises `prob` with prob >= threshold and counts against the binary
/// `gt` over every pixel of the batch.
template <typename T>
ConfusionCounts confusion(const Tensor<T>& prob, const Tensor<T>& gt,
                          double threshold = kDefaultThreshold);

MetricReport metrics(const ConfusionCounts& counts);

struct EvalRow {
  std::string image_id;
  MetricReport report;
};

/// Averages of the per-image rows (counts averaged as reals).
struct MeanReport {
  double tp = 0, tn = 0, fp = 0, fn = 0;
  double di = 0, ja = 0, ac = 0, se = 0, sp = 0;
};

MeanReport mean_report(const std::vector<EvalRow>& rows);

/// Header `image_id,tp,tn,fp,fn,di,ja,ac,se,sp`, rows sorted by id, then a
/// final MEAN row.
void write_metrics_csv(std::ostream& out, std::vector<EvalRow> rows);

}  // namespace banet
