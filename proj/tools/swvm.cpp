// swvm: benchmark, stress and linearizability sweeps for the version
// maintenance objects.
//
// Exit codes: 0 clean, 2 invariant breach, 64 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "swvm/harness/bench.hpp"
#include "swvm/harness/lincheck.hpp"
#include "swvm/harness/stress.hpp"

namespace {

constexpr int kClean = 0;
constexpr int kBreach = 2;
constexpr int kUsage = 64;

const std::map<std::string, swvm::Algo> kAlgos{
    {"waitfree", swvm::Algo::waitfree},
    {"lockfree", swvm::Algo::lockfree},
    {"locked-oracle", swvm::Algo::locked_oracle},
};

bool write_report(const nlohmann::ordered_json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return true;
  }
  std::ofstream out(path);
  if (!out) {
    std::cerr << "cannot write " << path << '\n';
    return false;
  }
  out << j.dump(2) << '\n';
  return true;
}

void print_breaches(const std::vector<std::string>& breaches) {
  for (const auto& b : breaches) std::cerr << "BREACH: " << b << '\n';
}

int bench(const swvm::BenchConfig& cfg) {
  if (auto why = cfg.validate(); !why.empty()) {
    std::cerr << "usage: " << why << '\n';
    return kUsage;
  }
  const swvm::BenchResult r = swvm::run_bench(cfg);
  if (!write_report(r.metrics.to_json(), cfg.out)) return kUsage;
  if (!cfg.samples_csv.empty()) {
    std::ofstream csv(cfg.samples_csv);
    csv << "commit,live_versions\n";
    for (std::size_t i = 0; i < r.live_series.size(); ++i) csv << i + 1 << ',' << r.live_series[i] << '\n';
  }
  std::cerr << "bench " << swvm::to_string(cfg.algo) << ": " << r.commits << " commits, " << r.reads << " reads in "
            << r.elapsed_seconds << " s; serializability: " << r.serializability.detail << " ("
            << r.serializability.reads_checked << " reads)";
  if (r.audit) std::cerr << "; audit: " << r.audit->detail;
  std::cerr << '\n';
  print_breaches(r.breaches);
  return r.clean() ? kClean : kBreach;
}

int stress(const swvm::StressConfig& cfg) {
  if (auto why = cfg.validate(); !why.empty()) {
    std::cerr << "usage: " << why << '\n';
    return kUsage;
  }
  const swvm::StressResult r = swvm::run_stress(cfg);
  if (!write_report(r.metrics.to_json(), cfg.out)) return kUsage;
  std::cerr << "stress " << swvm::to_string(cfg.algo) << ": " << r.versions << " versions, " << r.reads << " reads, "
            << r.true_releases << " true releases; audit: " << r.audit->detail << '\n';
  if (r.counters) {
    std::cerr << "max shared accesses: acquire " << r.counters->acquire.accesses_max << ", release "
              << r.counters->release.accesses_max << ", set " << r.counters->set.accesses_max << '\n';
  }
  print_breaches(r.breaches);
  if (!r.release_violations.empty()) {
    std::cerr << "witness timestamps:";
    for (std::size_t i = 0; i < r.release_violations.size() && i < 32; ++i) std::cerr << ' ' << r.release_violations[i];
    std::cerr << '\n';
  }
  return r.clean() ? kClean : kBreach;
}

int lincheck(const swvm::LincheckConfig& cfg) {
  if (auto why = cfg.validate(); !why.empty()) {
    std::cerr << "usage: " << why << '\n';
    return kUsage;
  }
  const swvm::LincheckSummary s = swvm::run_lincheck(cfg);
  std::cout << "lincheck " << swvm::to_string(cfg.algo) << ": " << s.trials << " trials, " << s.passed << " passed, "
            << s.failed << " failed, " << s.refused << " refused; " << s.overlapping << " with overlapping calls; "
            << s.seconds << " s\n";
  if (!s.first_failure.empty()) std::cout << "first failure: " << s.first_failure << '\n';
  for (const auto& f : s.failure_files) std::cout << "history written: " << f << '\n';
  return s.clean() ? kClean : kBreach;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"swvm: version maintenance benchmarks and checkers"};
  app.require_subcommand(1);

  swvm::BenchConfig bc;
  bool bench_no_collect = false;
  auto* b = app.add_subcommand("bench", "range-sum benchmark with one writer and P-1 readers");
  b->add_option("--algo", bc.algo, "waitfree | lockfree | locked-oracle")->transform(CLI::CheckedTransformer(kAlgos));
  b->add_option("--threads", bc.threads, "processes, including the writer")->capture_default_str();
  b->add_option("--seconds", bc.seconds, "run time")->capture_default_str();
  b->add_option("--nu", bc.n_u, "insertions per write transaction")->capture_default_str();
  b->add_option("--nq", bc.n_q, "range sums per read transaction")->capture_default_str();
  b->add_option("--keys", bc.keys, "initial tree size")->capture_default_str();
  b->add_option("--seed", bc.seed, "random seed")->capture_default_str();
  b->add_option("--out", bc.out, "JSON report path (default stdout)");
  b->add_option("--samples-csv", bc.samples_csv, "write live-version samples as CSV");
  b->add_flag("--no-collect", bench_no_collect, "never collect superseded versions");

  swvm::StressConfig sc;
  auto* s = app.add_subcommand("stress", "randomized invariant stress on the bare objects");
  s->add_option("--algo", sc.algo, "waitfree | lockfree | locked-oracle")->transform(CLI::CheckedTransformer(kAlgos));
  s->add_option("--threads", sc.threads, "processes")->capture_default_str();
  s->add_option("--seconds", sc.seconds, "run time")->capture_default_str();
  s->add_option("--keys", sc.keys, "initial tree size")->capture_default_str();
  s->add_option("--seed", sc.seed, "random seed")->capture_default_str();
  s->add_option("--yield", sc.yield_probability, "yield probability at each instrumented step")->capture_default_str();
  s->add_option("--out", sc.out, "JSON report path (default stdout)");

  swvm::LincheckConfig lc;
  auto* l = app.add_subcommand("lincheck", "record short concurrent histories and check linearizability");
  l->add_option("--algo", lc.algo, "waitfree | lockfree | locked-oracle")->transform(CLI::CheckedTransformer(kAlgos));
  l->add_option("--trials", lc.trials, "number of runs")->capture_default_str();
  l->add_option("--ops", lc.ops, "operations per run (at most 14)")->capture_default_str();
  l->add_option("--threads", lc.threads, "2 or 3")->capture_default_str();
  l->add_option("--seed", lc.seed, "random seed")->capture_default_str();
  l->add_option("--yield", lc.yield_probability, "yield probability at each instrumented step")->capture_default_str();
  l->add_option("--fail-dir", lc.fail_dir, "directory for failing histories")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (*b) {
    bc.collect = !bench_no_collect;
    return bench(bc);
  }
  if (*s) return stress(sc);
  return lincheck(lc);
}
