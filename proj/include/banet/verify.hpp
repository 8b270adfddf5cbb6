#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

// Self-checks shared by `banet verify` and the acceptance binary. Each suite
// returns one line per check with the measured quantity and its bound.

namespace banet::verify {

inline constexpr int kGradInstances = 20;
inline constexpr double kOpGradTolerance = 1e-5;
inline constexpr double kModelGradTolerance = 1e-4;
inline constexpr int kMetricPairs = 1000;
inline constexpr double kDiceJaccardTolerance = 1e-12;
inline constexpr int kIdentityInstances = 100;
inline constexpr double kIdentityTolerance = 1e-7;
inline constexpr double kPolyTolerance = 1e-9;
inline constexpr double kMomentumTolerance = 1e-12;

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Suite {
  std::string name;
  std::vector<Check> checks;

  bool passed() const;
  void add(std::string check, bool ok, std::string detail);
};

/// Finite-difference checks of every op and of a tiny end-to-end model.
Suite gradient_suite(std::uint64_t seed, int instances = kGradInstances);
/// Confusion counts against a naive oracle plus metric identities.
Suite metric_suite(std::uint64_t seed);
/// PEE, IA and CFF closed-form identities.
Suite module_suite(std::uint64_t seed);
/// Strides, dilations, widths and output resolutions at 64 and 96 pixels.
Suite architecture_suite();
/// Poly schedule, momentum unroll and checkpoint round trip.
Suite optimizer_suite(std::uint64_t seed);

std::vector<Suite> run_all(std::uint64_t seed);

/// "PASS  suite / check  detail" lines; returns true if all passed.
bool print_report(std::ostream& out, const std::vector<Suite>& suites);

}  // namespace banet::verify
