// visifilter: run scenarios, replay metrics, run check suites, host teleop.
//
// Exit codes: 0 success, 1 failed checks or runtime error, 2 invalid input,
// 3 infeasible start, 4 port busy.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "suites.hpp"
#include "visifilter/io.hpp"
#include "visifilter/teleop_server.hpp"

namespace fs = std::filesystem;
using namespace visifilter;

namespace {

enum Exit { kOk = 0, kFailed = 1, kInvalid = 2, kInfeasible = 3, kPortBusy = 4 };

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

// Scenario file, overrides, then the VISIFILTER_SEED fuzzing hook.
Scenario load(const std::string& path, const std::vector<std::string>& overrides) {
  Scenario sc = load_scenario(path, overrides);
  if (const char* env = std::getenv("VISIFILTER_SEED"); env && *env) {
    std::uint64_t seed = 0;
    const std::string s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ScenarioError("VISIFILTER_SEED must be a nonnegative integer, got '" + s + "'");
    }
    override_seeds(sc, seed);
  }
  return sc;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int cmd_run(const std::string& path, const std::string& out_dir, const std::vector<std::string>& overrides) {
  const Scenario sc = load(path, overrides);
  const Trace trace = run(sc);
  fs::create_directories(out_dir);
  {
    std::ofstream csv(fs::path(out_dir) / "trace.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write trace.csv in " + out_dir);
    write_trace_csv(csv, trace);
  }
  const Metrics m = metrics(trace);
  write_text(fs::path(out_dir) / "metrics.json", metrics_to_json(m).dump(2) + "\n");
  write_text(fs::path(out_dir) / "resolved_scenario.json", scenario_to_json(sc).dump(2) + "\n");
  std::cout << sc.name << ": " << m.ticks << " ticks, min visible " << m.min_visible << ", min w " << m.min_w
            << ", breaches " << m.breaches << ", total deviation " << m.total_deviation << "\n"
            << "wrote " << (fs::path(out_dir) / "trace.csv").string() << ", metrics.json, resolved_scenario.json\n";
  return kOk;
}

int cmd_metrics(const std::string& csv_path, const std::string& out_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw ScenarioError("cannot read '" + csv_path + "'");
  const std::string doc = metrics_to_json(metrics(read_trace_csv(in))).dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << doc;
  } else {
    write_text(out_path, doc);
  }
  return kOk;
}

int cmd_check(const std::string& suite) {
  if (!checks::known_suite(suite)) {
    std::cerr << "error: unknown suite '" << suite
              << "' (expected invariance, qp-oracle, equivalence, propagation or all)\n";
    return kInvalid;
  }
  const auto results = checks::run_suite(suite, example3_scenario(checks::kExample3Seed));
  bool ok = true;
  for (const auto& r : results) {
    checks::print(std::cout, r);
    ok = ok && r.pass;
  }
  return ok ? kOk : kFailed;
}

int cmd_serve(const std::string& path, unsigned short port, const std::vector<std::string>& overrides) {
  const Scenario sc = load(path, overrides);
  ServerOptions opt;
  opt.port = port;
  TeleopServer server(sc, opt);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving " << sc.name << " on ws://127.0.0.1:" << server.port() << "/ws (scenario at /scenario)"
            << std::endl;
  server.start();
  while (!g_interrupted.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  std::cout << "stopped after " << server.ticks() << " ticks\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visibility-maintaining safety filter: batch runs, checks and teleoperation"};
  app.require_subcommand(1);

  std::string scenario, out_dir = "out", suite, csv, metrics_out;
  std::vector<std::string> overrides;
  unsigned short port = 8700;

  auto* run_cmd = app.add_subcommand("run", "run a scenario and write trace.csv, metrics.json, resolved_scenario.json");
  run_cmd->add_option("scenario", scenario, "scenario JSON file")->required();
  run_cmd->add_option("--out", out_dir, "output directory")->capture_default_str();
  run_cmd->add_option("--set", overrides, "override a field, e.g. --set filter.W=5.5");

  auto* check_cmd = app.add_subcommand("check", "run an acceptance suite");
  check_cmd->add_option("suite", suite, "invariance | qp-oracle | equivalence | propagation | all")->required();

  auto* serve_cmd = app.add_subcommand("serve", "host the teleoperation service for an external-reference scenario");
  serve_cmd->add_option("scenario", scenario, "scenario JSON file")->required();
  serve_cmd->add_option("--port", port, "TCP port")->capture_default_str();
  serve_cmd->add_option("--set", overrides, "override a field");

  auto* metrics_cmd = app.add_subcommand("metrics", "recompute metrics.json from a trace.csv");
  metrics_cmd->add_option("trace", csv, "trace.csv file")->required();
  metrics_cmd->add_option("--out", metrics_out, "write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*run_cmd) return cmd_run(scenario, out_dir, overrides);
    if (*check_cmd) return cmd_check(suite);
    if (*serve_cmd) return cmd_serve(scenario, port, overrides);
    if (*metrics_cmd) return cmd_metrics(csv, metrics_out);
  } catch (const ScenarioError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const InfeasibleStart& e) {
    std::cerr << "error: infeasible start: " << e.what() << '\n';
    return kInfeasible;
  } catch (const PortBusy& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kPortBusy;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid scenario: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kFailed;
}
