#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mediaprof/pipeline.hpp"

namespace mp = mediaprof;
namespace pl = mediaprof::pipeline;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kLeakage = 3 };

int run(const std::string& stage, const std::string& config_path, std::optional<std::uint64_t> seed,
        bool force, bool verbose) {
  mp::log::threshold() = verbose ? mp::LogLevel::debug : mp::LogLevel::info;
  try {
    pl::Pipeline p(pl::load_config(config_path, seed));
    if (stage == "run-all") {
      int ran = 0;
      for (const auto& o : p.run_all(force)) ran += o.ran;
      mp::log::info("run-all: " + std::to_string(ran) + " stage(s) ran");
      std::cout << mp::pipeline::read_file(p.out("report/report.txt"));
    } else {
      p.run_stage(stage, force);
      if (stage == "report") std::cout << mp::pipeline::read_file(p.out("report/report.txt"));
    }
    return kOk;
  } catch (const pl::ConfigError& e) {
    std::cerr << "mediaprof: " << e.what() << '\n';
    return kConfig;
  } catch (const pl::LeakageError& e) {
    std::cerr << "mediaprof: " << e.what() << '\n';
    return kLeakage;
  } catch (const std::exception& e) {
    std::cerr << "mediaprof: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Profile media sites from audience-overlap graphs"};
  app.set_version_flag("--version", std::string(pl::kToolVersion));
  std::string config;
  std::string stage;
  std::optional<std::uint64_t> seed;
  bool force = false, verbose = false;
  app.add_option("--config", config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--stage", stage, "Stage to run, alternative to a subcommand");
  app.add_option("--seed", seed, "Override the master seed");
  app.add_flag("--force", force, "Rerun even when manifests match");
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "Generate the synthetic fixture"},
      {"build-graph", "Replay overlap records into the level-k graph"},
      {"impute", "Parse metrics and impute missing values"},
      {"embed", "Train node2vec / GCN / GraphSAGE embeddings"},
      {"train", "Cross-validate one SVM per representation"},
      {"fuse", "Late fusion of channel posteriors"},
      {"evaluate", "Collect per-channel, fusion and baseline reports"},
      {"report", "Render the result table"},
      {"run-all", "Run every stage, skipping those that are up to date"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    sub->callback([&stage, n = name] { stage = n; });
  }
  app.require_subcommand(0, 1);
  CLI11_PARSE(app, argc, argv);

  if (config.empty()) {
    std::cerr << "mediaprof: --config is required\n";
    return kConfig;
  }
  if (stage.empty()) {
    std::cerr << "mediaprof: name a stage (subcommand or --stage)\n" << app.help();
    return kFailure;
  }
  if (std::none_of(commands.begin(), commands.end(), [&](const auto& c) { return c.first == stage; })) {
    std::cerr << "mediaprof: unknown stage '" << stage << "'\n";
    return kFailure;
  }
  return run(stage, config, seed, force, verbose);
}
