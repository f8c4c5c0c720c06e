// Command-line front end. Exit codes: 0 ok, 1 failing checks under --assert,
// 2 configuration error, 3 any other library error.

#include "seqmc/harness.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <iostream>

namespace {

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("seqmc");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* level = std::getenv("SEQMC_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Sequential Monte Carlo for evolving Gibbs measures"};
  app.require_subcommand(1);
  app.set_version_flag("--version", seqmc::kCodeVersion);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string out_dir;
  bool assert_checks = false;

  static const char* commands[][2] = {
      {"simulate", "one particle run; writes trajectory.jsonl"},
      {"variance", "replicate ensemble and the variance identity"},
      {"bounds", "error estimates, theorem bounds and proof-chain diagnostics"},
      {"constants", "functional-inequality constants on a time grid"},
      {"appendix", "discrete Gauss certification chains"},
      {"examples", "drift conditions and product-dimension checks"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "experiment JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--workers", workers, "worker threads (results do not depend on this)")
        ->check(CLI::Range(1, 1024));
    sub->add_option("--out", out_dir, "output directory (default: out/<name>)");
    sub->add_flag("--assert", assert_checks, "exit 1 when any check fails");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    seqmc::ExperimentConfig cfg;
    if (!config_path.empty()) {
      cfg = seqmc::load_config(config_path);
    } else if (command != "appendix") {
      throw seqmc::ConfigError("--config", 0, "required for '" + command + "'");
    }
    if (seed) cfg.seed = *seed;
    if (out_dir.empty()) out_dir = "out/" + cfg.name;

    spdlog::info("{} '{}' (hash {}) with {} worker(s)", command, cfg.name, seqmc::content_hash(cfg), workers);
    const auto start = std::chrono::steady_clock::now();
    const auto result = seqmc::run(cfg, command, workers, [](const std::string& s) { spdlog::info("{}", s); });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    seqmc::write_outputs(result, out_dir);

    const auto& checks = result.bundle["checks"];
    for (const auto& c : checks)
      spdlog::debug("{} {} lhs={} rhs={}", c["pass"].get<bool>() ? "ok  " : "FAIL", c["id"].get<std::string>(),
                    c["lhs"].dump(), c["rhs"].dump());
    spdlog::info("{} checks, {} failing; runtime {:.2f}s; wrote {}", checks.size(), result.failing.size(), secs,
                 out_dir);
    if (assert_checks && !result.failing.empty()) {
      for (const auto& id : result.failing) std::cout << "FAILED " << id << "\n";
      return 1;
    }
    return 0;
  } catch (const seqmc::Error& e) {
    spdlog::error("{}", e.what());
    return e.kind() == seqmc::ErrorKind::Configuration ? 2 : 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 3;
  }
}
