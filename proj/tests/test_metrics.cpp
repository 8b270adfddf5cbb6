#include <cmath>
#include <sstream>

#include "banet/metrics.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace banet;
using banet::testing::random_mask;
using T4 = Tensor<double>;

namespace {

T4 row(std::initializer_list<double> v) {
  T4 t({1, 1, 1, static_cast<int>(v.size())});
  std::copy(v.begin(), v.end(), t.mutable_data().begin());
  return t;
}

ConfusionCounts naive(const T4& p, const T4& g) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const bool pr = p.data()[i] >= 0.5;
    const bool gt = g.data()[i] == 1.0;
    if (pr && gt) c.tp++;
    if (pr && !gt) c.fp++;
    if (!pr && gt) c.fn++;
    if (!pr && !gt) c.tn++;
  }
  return c;
}

T4 invert(const T4& t) {
  T4 out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) out.mutable_data()[i] = 1.0 - t.data()[i];
  return out;
}

}  // namespace

TEST_CASE("eight pixel example") {
  const auto c = confusion(row({1, 1, 0, 1, 0, 0, 0, 0}), row({1, 1, 1, 0, 0, 0, 0, 0}));
  CHECK(c == ConfusionCounts{2, 4, 1, 1});
  const MetricReport r = metrics(c);
  CHECK(r.di == doctest::Approx(4.0 / 6.0));
  CHECK(r.ja == doctest::Approx(0.5));
  CHECK(r.ac == doctest::Approx(0.75));
  CHECK(r.se == doctest::Approx(2.0 / 3.0));
  CHECK(r.sp == doctest::Approx(0.8));
}

TEST_CASE("trivial agreements") {
  Rng rng(1);
  const T4 g = random_mask({1, 1, 8, 8}, rng);
  const auto same = confusion(g, g);
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);
  const auto opposite = confusion(invert(g), g);
  CHECK(opposite.tp == 0);
  CHECK(opposite.tn == 0);

  const MetricReport perfect = metrics(same);
  for (double v : {perfect.di, perfect.ja, perfect.ac, perfect.se, perfect.sp}) CHECK(v == 1.0);
  // Empty prediction on an empty mask counts as perfect.
  const MetricReport empty = metrics(ConfusionCounts{0, 16, 0, 0});
  CHECK(empty.di == 1.0);
  CHECK(empty.ja == 1.0);
  CHECK(empty.se == 1.0);
}

TEST_CASE("threshold and errors") {
  const T4 p = row({0.5, 0.49, 0.0, 1.0});
  const T4 g = row({1, 1, 0, 0});
  CHECK(confusion(p, g) == ConfusionCounts{1, 1, 1, 1});
  // Everything counts as foreground at threshold 0.
  CHECK(metrics(confusion(p, g, 0.0)).se == 1.0);
  CHECK_THROWS_AS(confusion(p, row({1, 0.5, 0, 0})), ShapeError);
  CHECK_THROWS_AS(confusion(p, row({1, 0, 0})), ShapeError);
}

TEST_CASE("random pairs against the naive count") {
  Rng rng(2);
  for (int k = 0; k < 1000; ++k) {
    const T4 g = random_mask({1, 1, 16, 16}, rng, rng.uniform(0.05, 0.95));
    const T4 p = banet::testing::random_tensor({1, 1, 16, 16}, rng, 0.0, 1.0);
    const auto c = confusion(p, g);
    REQUIRE(c == naive(p, g));
    CHECK(c.total() == 256);

    const MetricReport r = metrics(c);
    if (c.tp + c.fp + c.fn > 0) CHECK(std::abs(r.di - 2 * r.ja / (1 + r.ja)) <= 1e-12);
    for (double v : {r.di, r.ja, r.ac, r.se, r.sp}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }

    const MetricReport inv = metrics(confusion(invert(p), invert(g)));
    // Pixels exactly at 0.5 flip differently; the random draws never hit it.
    CHECK(inv.counts.tp == c.tn);
    CHECK(inv.counts.fp == c.fn);
    CHECK(inv.se == r.sp);
    CHECK(inv.sp == r.se);
    CHECK(inv.ac == r.ac);
  }
}

TEST_CASE("turning a false positive into a true negative never hurts") {
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    ConfusionCounts c{rng.below(51), rng.below(51), 1 + rng.below(50), rng.below(51)};
    const MetricReport before = metrics(c);
    c.fp--;
    c.tn++;
    const MetricReport after = metrics(c);
    CHECK(after.di >= before.di);
    CHECK(after.ja >= before.ja);
    CHECK(after.ac >= before.ac);
    CHECK(after.sp >= before.sp);
    CHECK(after.se == before.se);
  }
}

TEST_CASE("metrics csv") {
  std::vector<EvalRow> rows;
  Rng rng(4);
  for (const char* id : {"img_0003", "img_0001", "img_0002"}) {
    const T4 g = random_mask({1, 1, 8, 8}, rng);
    const T4 p = random_mask({1, 1, 8, 8}, rng);
    rows.push_back({id, metrics(confusion(p, g))});
  }
  std::ostringstream out;
  write_metrics_csv(out, rows);
  std::istringstream in(out.str());
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "image_id,tp,tn,fp,fn,di,ja,ac,se,sp");
  CHECK(lines[1].starts_with("img_0001,"));
  CHECK(lines[2].starts_with("img_0002,"));
  CHECK(lines[3].starts_with("img_0003,"));
  CHECK(lines[4].starts_with("MEAN,"));

  // MEAN ja is the plain mean of the per-row values as written.
  auto field = [](const std::string& line, int idx) {
    std::istringstream ss(line);
    std::string f;
    for (int i = 0; i <= idx; ++i) std::getline(ss, f, ',');
    return std::stod(f);
  };
  const double mean = (field(lines[1], 6) + field(lines[2], 6) + field(lines[3], 6)) / 3.0;
  CHECK(std::abs(field(lines[4], 6) - mean) <= 1e-9);
  CHECK(mean_report({}).ja == 0.0);
}
