// unpg-kit: train, evaluate and compare desk-scale runs of the unified loss
// with unified negative pair generation.
//
//   unpg-kit train   --config <path> [--out <dir>] [--allow-nonfinite]
//   unpg-kit eval    --ckpt <path> --data <path>
//   unpg-kit analyze <dirA> <dirB> [--sweep-whisker r1,r2,...] [--bins N] [--out <dir>]
//
// Exit status: 0 success, 2 config error, 3 data/io error, 4 nonfinite values.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "unpg/run.hpp"

namespace {

std::vector<double> parse_whisker_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (end != item.c_str() + item.size()) {
      throw unpg::Error(unpg::ErrorCode::ConfigInvalid, "--sweep-whisker: '" + item + "' is not a number");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified negative pair generation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  bool allow_nonfinite = false;
  auto* train = app.add_subcommand("train", "Train on a synthetic dataset and write a run directory");
  train->add_option("--config", config_path, "Run config (JSON)")->required();
  train->add_option("--out", out_dir, "Override output_dir from the config");
  train->add_flag("--allow-nonfinite", allow_nonfinite, "Keep training through NaN/inf instead of aborting");

  std::string ckpt_path;
  std::string data_path;
  auto* eval = app.add_subcommand("eval", "Recompute metrics for a checkpoint; prints JSON");
  eval->add_option("--ckpt", ckpt_path, "checkpoint.json, its directory, or a run directory")->required();
  eval->add_option("--data", data_path, "Dataset spec (JSON with a 'synthetic' section)")->required();

  std::string dir_a;
  std::string dir_b;
  std::optional<std::string> sweep;
  std::size_t bins = unpg::kDefaultOverlapBins;
  std::string analysis_dir = "analysis";
  auto* analyze = app.add_subcommand("analyze", "Compare overlap and WDFS gap of two runs");
  analyze->add_option("dirA", dir_a, "Baseline run directory")->required();
  analyze->add_option("dirB", dir_b, "Compared run directory")->required();
  analyze->add_option("--sweep-whisker", sweep, "Comma-separated whisker sizes to retrain run A with");
  analyze->add_option("--bins", bins, "Histogram bins over [-1, 1]");
  analyze->add_option("--out", analysis_dir, "Directory for analysis.json and CSV outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const auto seed = unpg::seed_from_env();
    if (*train) {
      unpg::RunConfig rc = unpg::load_run_config(config_path, seed);
      if (!out_dir.empty()) rc.output_dir = out_dir;
      const auto rec = unpg::cmd_train(rc, {allow_nonfinite});
      std::cerr << "train: " << rec.status << " after " << rec.steps << " steps -> " << rc.output_dir.string()
                << "\n";
    } else if (*eval) {
      const auto report = unpg::cmd_eval(ckpt_path, data_path, seed);
      std::cout << unpg::to_json(report).dump(2) << "\n";
    } else if (*analyze) {
      unpg::AnalyzeOptions opt;
      opt.bins = bins;
      opt.out_dir = analysis_dir;
      if (sweep) opt.sweep_whisker = parse_whisker_list(*sweep);
      std::cout << unpg::cmd_analyze(dir_a, dir_b, opt).dump(2) << "\n";
    }
  } catch (const unpg::Error& e) {
    std::cerr << "unpg-kit: " << e.what() << "\n";
    return unpg::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "unpg-kit: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
