// pare: command-line driver for the compression pipeline.
//
//   pare [--config FILE] [--set key.path=value ...] [--force] <command>
//
// Commands: teach, calibrate, prune, train --stage {1,2} [--allow-raw]
// [--resume] [--stop-at N], report. Outputs go to paths.out_dir, or $PARE_OUT when the
// config does not name one.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pare/error.h"
#include "pare/pipeline.h"

namespace {

nlohmann::json load_document(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream f(path);
  if (!f) throw pare::IoError("cannot read config " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw pare::ConfigError("config " + path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured pruning, routing and distillation for a toy video DiT"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  bool force = false;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "JSON configuration file");
  app.add_option("--set", overrides, "Override a config value, e.g. training.steps=50");
  app.add_flag("--force", force, "Overwrite existing outputs");
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

  auto* teach = app.add_subcommand("teach", "Train the toy teacher on synthetic clips");
  auto* calibrate = app.add_subcommand("calibrate", "Score and classify attention heads");
  auto* prune = app.add_subcommand("prune", "Select heads and neurons and extract the student");
  auto* train = app.add_subcommand("train", "Stage I or Stage II distillation");
  int stage = 0;
  bool allow_raw = false, resume = false;
  std::size_t stop_at = 0;
  train->add_option("--stage", stage, "1 (width) or 2 (width + routing)")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  train->add_flag("--allow-raw", allow_raw, "Stage II from the raw pruned student");
  train->add_flag("--resume", resume, "Continue from this stage's checkpoint");
  train->add_option("--stop-at", stop_at, "Stop after this step, keeping a resumable checkpoint");
  auto* report = app.add_subcommand("report", "Routing frequencies, cost ledger and summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    nlohmann::json doc = load_document(config_path);
    for (const auto& o : overrides) pare::apply_override(doc, o);
    const bool has_out = doc.contains("paths") && doc["paths"].is_object() &&
                         doc["paths"].contains("out_dir");
    if (!has_out) {
      if (const char* env = std::getenv("PARE_OUT"); env && *env) doc["paths"]["out_dir"] = env;
    }
    const pare::PipelineConfig config = pare::pipeline_config_from_json(doc);
    pare::RunOptions run{force, resume, allow_raw, stop_at, quiet ? nullptr : &std::cerr};

    nlohmann::json result;
    if (*teach) result = pare::cmd_teach(config, run);
    else if (*calibrate) result = pare::cmd_calibrate(config, run);
    else if (*prune) result = pare::cmd_prune(config, run);
    else if (*train) result = pare::cmd_train(config, stage, run);
    else if (*report) result = pare::cmd_report(config, run);
    std::cout << result.dump(2) << '\n';
    return 0;
  } catch (const pare::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const pare::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 4;
  } catch (const pare::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
