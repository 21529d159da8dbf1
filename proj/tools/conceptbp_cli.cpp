// conceptbp: train / probe / maximise / sweep over a JSON pipeline config.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "conceptbp/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kPipelineError = 2;
constexpr const char* kOutEnv = "CONCEPTBP_OUT_DIR";

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

std::filesystem::path resolve_out_dir(const Options& opts, const conceptbp::pipeline::Config& config) {
  if (opts.out) return *opts.out;
  if (const char* env = std::getenv(kOutEnv); env && *env) return env;
  if (config.out_dir) return *config.out_dir;
  return "out";
}

void print_status(const std::string& command, const std::filesystem::path& out) {
  std::cout << command << ": artifacts in " << (out / command).string() << "\n";
}

int run(const std::string& command, const Options& opts) {
  using namespace conceptbp;
  pipeline::Config config;
  pipeline::Invocation inv;
  try {
    config = pipeline::load_config(opts.config);
    if (opts.seed) config.seed = *opts.seed;
    inv.config_path = opts.config;
    inv.out_root = resolve_out_dir(opts, config);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (command == "train") {
      auto s = pipeline::run_train(config, inv);
      std::cout << "held-out loss " << s.held_out_loss << "\n";
      if (s.reconstruction_mse) std::cout << "reconstruction MSE per pixel " << *s.reconstruction_mse << "\n";
      if (s.legality_accuracy) std::cout << "legality classifier held-out accuracy " << *s.legality_accuracy << "\n";
      if (s.warning) std::cerr << "warning: " << *s.warning << "\n";
    } else if (command == "probe") {
      auto r = pipeline::run_probe(config, inv);
      if (r.accuracy) std::cout << "held-out accuracy " << *r.accuracy << ", AUC " << r.auc.value_or(NAN) << "\n";
      if (r.r2) std::cout << "held-out R^2 " << *r.r2 << "\n";
    } else if (command == "maximise") {
      auto runs = pipeline::run_maximise(config, inv);
      std::size_t converged = 0;
      for (const auto& r : runs) converged += r.result.status == RunStatus::Converged;
      std::cout << converged << "/" << runs.size() << " runs converged\n";
    } else {
      auto sweep = pipeline::run_sweep(config, inv);
      for (std::size_t i = 0; i < sweep.lambda2s.size(); ++i) {
        std::size_t converged = 0;
        for (const auto& r : sweep.runs[i]) converged += r.result.status == RunStatus::Converged;
        std::cout << "lambda2 " << sweep.lambda2s[i] << ": " << converged << "/" << sweep.runs[i].size()
                  << " runs converged\n";
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPipelineError;
  }
  print_status(command, inv.out_root);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept backpropagation: train models and probes, then maximise concepts in inputs."};
  app.require_subcommand(1);
  Options opts;
  for (const char* name : {"train", "probe", "maximise", "sweep"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config, "pipeline config (JSON)")->required();
    sub->add_option("--seed", opts.seed, "override the config seed");
    sub->add_option("--out", opts.out, std::string("output directory (else $") + kOutEnv + ", config out_dir, ./out)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }
  return run(app.get_subcommands().front()->get_name(), opts);
}
