// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all
// eight pass. Training runs are single-threaded each; independent runs are
// spread over the available cores.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <thread>

#include "banet/config.hpp"
#include "banet/verify.hpp"

using namespace banet;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kVerifySeed = 1;
constexpr double kGradientBudgetSeconds = 300.0;
constexpr double kLossRatioBound = 0.5;
constexpr double kHeldOutJaFloor = 0.70;
constexpr double kSmokeBudgetSeconds = 1800.0;

struct Verdict {
  int id;
  std::string title;
  bool passed;
  std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, std::string title, bool passed, std::string detail) {
  std::printf("%s  criterion %d  %s: %s\n", passed ? "PASS" : "FAIL", id, title.c_str(),
              detail.c_str());
  std::fflush(stdout);
  verdicts.push_back({id, std::move(title), passed, std::move(detail)});
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

void suite_criterion(int id, const std::string& title, const std::function<verify::Suite()>& run,
                     double budget_seconds = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  const verify::Suite suite = run();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  int failed = 0;
  for (const auto& c : suite.checks) {
    std::printf("    %s %s  %s\n", c.passed ? "ok " : "BAD", c.name.c_str(), c.detail.c_str());
    failed += !c.passed;
  }
  std::string detail = std::to_string(suite.checks.size() - failed) + "/" +
                       std::to_string(suite.checks.size()) + " checks, " + fmt("%.1f s", secs);
  bool ok = failed == 0;
  if (budget_seconds > 0.0) {
    ok = ok && secs < budget_seconds;
    detail += fmt(" (budget %.0f s)", budget_seconds);
  }
  report(id, title, ok, detail);
}

// The smoke experiment: 250 synthetic 64x64 images, first 200 train.
RunConfig smoke_config() {
  RunConfig cfg;
  cfg.synth.n_images = 250;
  cfg.synth.image_size = 64;
  cfg.synth.seed = 7;
  cfg.synth.contrast = 0.4;
  cfg.synth.noise_sigma = 0.05;
  cfg.train_count = 200;
  cfg.train.epochs = 30;
  cfg.train.batch_size = 4;
  cfg.train.workers = 1;
  cfg.precision = Precision::f32;
  cfg.validate();
  return cfg;
}

struct SmokeRun {
  std::string label;
  RunConfig cfg;
  fs::path dir;
  TrainResult result;
  MeanReport held_out;
  std::size_t parameters = 0;
  double seconds = 0.0;
  std::string error;
};

SmokeRun smoke_job(std::string label, const RunConfig& cfg, const fs::path& work) {
  SmokeRun r;
  r.dir = work / label;
  r.label = std::move(label);
  r.cfg = cfg;
  return r;
}

void run_smoke(SmokeRun& run, const std::vector<Sample>& train_set,
               const std::vector<Sample>& test_set) {
  try {
    const auto t0 = std::chrono::steady_clock::now();
    fs::remove_all(run.dir);
    fs::create_directories(run.dir);
    std::ofstream(run.dir / "config.txt") << dump_config(run.cfg);
    TrainConfig tc = run.cfg.train;
    tc.out_dir = run.dir;
    Model<float> model = Model<float>::create(run.cfg.model, tc.init_seed, run.cfg.init);
    run.parameters = model.layout.parameter_count();
    run.result = train(model, train_set, tc, [&](const EpochLog& e) {
      std::fprintf(stderr, "[%s] epoch %d total %.4f\n", run.label.c_str(), e.epoch, e.total);
    });
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto rows = evaluate(model, test_set, tc.augmentation.out_size,
                               tc.augmentation.edge_width, run.cfg.eval_threshold);
    std::ofstream csv(run.dir / "metrics_test.csv");
    write_metrics_csv(csv, rows);
    run.held_out = mean_report(rows);
  } catch (const std::exception& e) {
    run.error = e.what();
  }
}

// Runs every job, at most hardware_concurrency at a time.
void run_all(std::vector<SmokeRun>& runs, const std::vector<Sample>& train_set,
             const std::vector<Sample>& test_set) {
  const unsigned cores = std::max(1u, std::thread::hardware_concurrency());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) run_smoke(runs[i], train_set, test_set);
  };
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < std::min<std::size_t>(cores, runs.size()); ++t) pool.emplace_back(worker);
  worker();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> csv_ids(const fs::path& p) {
  std::istringstream in(read_bytes(p));
  std::vector<std::string> ids;
  for (std::string line; std::getline(in, line);) ids.push_back(line.substr(0, line.find(',')));
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_runs");
  fs::create_directories(work);

  suite_criterion(1, "gradient suite", [] { return verify::gradient_suite(kVerifySeed); },
                  kGradientBudgetSeconds);
  suite_criterion(2, "metric oracle", [] { return verify::metric_suite(kVerifySeed); });
  suite_criterion(3, "module identities", [] { return verify::module_suite(kVerifySeed); });
  suite_criterion(4, "architecture contract", [] { return verify::architecture_suite(); });
  suite_criterion(5, "schedule and optimizer", [] { return verify::optimizer_suite(kVerifySeed); });

  const RunConfig base = smoke_config();
  const auto [train_set, test_set] = split_samples(base, load_samples(base));

  auto ablation = [&](const char* label, bool Ablation::*flag) {
    SmokeRun r = smoke_job(label, base, work);
    r.cfg.model.ablation.*flag = false;
    return r;
  };
  std::vector<SmokeRun> runs = {
      smoke_job("full", base, work),
      smoke_job("full_rerun", base, work),
      ablation("wo_pee", &Ablation::pee),
      ablation("wo_mtl", &Ablation::mtl),
      ablation("wo_cff", &Ablation::cff),
      ablation("wo_ia", &Ablation::ia),
  };
  run_all(runs, train_set, test_set);
  const SmokeRun& full = runs[0];
  const SmokeRun& rerun = runs[1];

  // 6
  if (!full.error.empty()) {
    report(6, "smoke training", false, "training failed: " + full.error);
  } else {
    const double first = full.result.log.front().total;
    const double last = full.result.log.back().total;
    const double ratio = last / first;
    const bool ok = full.result.log.size() == 30 && ratio < kLossRatioBound &&
                    full.held_out.ja >= kHeldOutJaFloor && full.seconds < kSmokeBudgetSeconds;
    report(6, "smoke training", ok,
           "loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + " (ratio " +
               fmt("%.3f", ratio) + ", bound 0.5), held-out JA " + fmt("%.4f", full.held_out.ja) +
               " DI " + fmt("%.4f", full.held_out.di) + " (floor 0.70), " +
               fmt("%.0f s", full.seconds) + " on " +
               std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " core(s)");
  }

  // 7
  {
    bool ok = true;
    std::string detail;
    const auto reference_ids = csv_ids(full.dir / "metrics_test.csv");
    for (std::size_t i = 2; i < runs.size(); ++i) {
      const SmokeRun& r = runs[i];
      const bool trained = r.error.empty() && r.result.log.size() == 30;
      const bool comparable = trained && csv_ids(r.dir / "metrics_test.csv") == reference_ids &&
                              reference_ids.size() == test_set.size() + 2;
      ok = ok && comparable;
      detail += r.label + " JA " + (trained ? fmt("%.4f", r.held_out.ja) : "failed: " + r.error) +
                " params " + std::to_string(r.parameters) + "; ";
    }
    const bool ia_same = runs[5].parameters == full.parameters;
    ok = ok && ia_same;
    detail += "full JA " + fmt("%.4f", full.held_out.ja) + " params " +
              std::to_string(full.parameters) + "; w/o IA parameter count " +
              (ia_same ? "identical" : "DIFFERENT");
    report(7, "ablation harness", ok, detail);
  }

  // 8
  {
    bool ok = full.error.empty() && rerun.error.empty();
    std::string detail;
    for (const char* f : {files::kCheckpoint, files::kLog}) {
      const bool same = ok && read_bytes(full.dir / f) == read_bytes(rerun.dir / f) &&
                        !read_bytes(full.dir / f).empty();
      ok = ok && same;
      detail += std::string(f) + (same ? " identical; " : " differs; ");
    }
    report(8, "determinism", ok, detail);
  }

  const bool all = std::ranges::all_of(verdicts, &Verdict::passed);
  return all ? 0 : 1;
}
