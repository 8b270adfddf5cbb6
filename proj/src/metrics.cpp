#include "banet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace banet {

template <typename T>
ConfusionCounts confusion(const Tensor<T>& prob, const Tensor<T>& gt,
                          double threshold) {
  if (!(prob.shape() == gt.shape())) {
    throw ShapeError("confusion: shape mismatch " + to_string(prob.shape()) +
                     " vs " + to_string(gt.shape()));
  }
  ConfusionCounts c;
  const auto p = prob.data();
  const auto g = gt.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i] != T(0) && g[i] != T(1)) {
      throw ShapeError("confusion: ground truth is not binary at index " +
                       std::to_string(i));
    }
    const bool pred = static_cast<double>(p[i]) >= threshold;
    const bool truth = g[i] == T(1);
    if (pred && truth) {
      ++c.tp;
    } else if (pred) {
      ++c.fp;
    } else if (truth) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

namespace {
double ratio(double num, double den) { return den == 0.0 ? 1.0 : num / den; }
}  // namespace

MetricReport metrics(const ConfusionCounts& c) {
  const double tp = static_cast<double>(c.tp);
  const double tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn);
  MetricReport r;
  r.counts = c;
  r.di = ratio(2.0 * tp, 2.0 * tp + fn + fp);
  r.ja = ratio(tp, tp + fn + fp);
  r.ac = ratio(tp + tn, tp + tn + fp + fn);
  r.se = ratio(tp, tp + fn);
  r.sp = ratio(tn, tn + fp);
  return r;
}

MeanReport mean_report(const std::vector<EvalRow>& rows) {
  MeanReport m;
  if (rows.empty()) return m;
  for (const EvalRow& row : rows) {
    const MetricReport& r = row.report;
    m.tp += static_cast<double>(r.counts.tp);
    m.tn += static_cast<double>(r.counts.tn);
    m.fp += static_cast<double>(r.counts.fp);
    m.fn += static_cast<double>(r.counts.fn);
    m.di += r.di;
    m.ja += r.ja;
    m.ac += r.ac;
    m.se += r.se;
    m.sp += r.sp;
  }
  const double n = static_cast<double>(rows.size());
  for (double* v : {&m.tp, &m.tn, &m.fp, &m.fn, &m.di, &m.ja, &m.ac, &m.se, &m.sp}) {
    *v /= n;
  }
  return m;
}

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

void write_metrics_csv(std::ostream& out, std::vector<EvalRow> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const EvalRow& a, const EvalRow& b) { return a.image_id < b.image_id; });
  out << "image_id,tp,tn,fp,fn,di,ja,ac,se,sp\n";
  for (const EvalRow& row : rows) {
    const MetricReport& r = row.report;
    out << row.image_id << ',' << r.counts.tp << ',' << r.counts.tn << ','
        << r.counts.fp << ',' << r.counts.fn << ',' << fmt(r.di) << ','
        << fmt(r.ja) << ',' << fmt(r.ac) << ',' << fmt(r.se) << ',' << fmt(r.sp)
        << '\n';
  }
  const MeanReport m = mean_report(rows);
  out << "MEAN," << fmt(m.tp) << ',' << fmt(m.tn) << ',' << fmt(m.fp) << ','
      << fmt(m.fn) << ',' << fmt(m.di) << ',' << fmt(m.ja) << ',' << fmt(m.ac)
      << ',' << fmt(m.se) << ',' << fmt(m.sp) << '\n';
}

template ConfusionCounts confusion(const Tensor<float>&, const Tensor<float>&, double);
template ConfusionCounts confusion(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace banet
