#pragma once

// Command implementations behind the unpg-kit CLI. Each command is a plain
// function so tests can drive it without spawning a process.
//
// Run directory layout written by cmd_train:
//
//   loss.jsonl                  {"step","lr","loss"} per optimizer step
//   metrics.jsonl               {"step","metrics"} at step 0, every eval_every steps and at the end
//   metrics.json                final MetricsReport
//   checkpoint/checkpoint.json  sidecar: format, mode, step, shapes, effective config
//   checkpoint/embeddings.csv   free_embedding mode (encoder.csv in linear_encoder mode)
//   checkpoint/weights.csv      class weights
//   run.json                    RunRecord: status, steps, final loss, timings

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unpg/error.hpp"
#include "unpg/eval.hpp"
#include "unpg/io.hpp"
#include "unpg/trainer.hpp"

namespace unpg {

inline constexpr const char* kCheckpointFormat = "unpg-kit-checkpoint/1";
inline constexpr const char* kSeedEnvVar = "UNPG_SEED";

/// Process exit status for each failure class.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::InvalidArgument:
      return 2;
    case ErrorCode::NonFinite:
      return 4;
    default:
      return 3;
  }
}

struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> synthetic_seed;  // defaults to `seed`
  SyntheticSpec synthetic{};
  TrainConfig train{};
  EvalOptions eval{};
  std::filesystem::path output_dir = "run";
  std::size_t eval_every = 100;
};

/// Parses a run config. `seed_override` (normally from UNPG_SEED) replaces the
/// top-level seed.
inline RunConfig run_config_from_json(const json& j, std::optional<std::uint64_t> seed_override = std::nullopt) {
  detail::check_keys(j, {"seed", "output_dir", "eval_every", "far_targets", "synthetic", "train", "loss", "eval"}, "");
  RunConfig rc;
  detail::read(j, "seed", rc.seed, "");
  if (seed_override) rc.seed = *seed_override;
  std::string out = rc.output_dir.string();
  detail::read(j, "output_dir", out, "");
  rc.output_dir = out;
  detail::read(j, "eval_every", rc.eval_every, "");
  if (rc.eval_every < 1) throw Error(ErrorCode::ConfigInvalid, "eval_every must be >= 1");
  if (j.contains("synthetic")) {
    rc.synthetic = synthetic_from_json(j.at("synthetic"), rc.synthetic);
    if (j.at("synthetic").contains("seed")) rc.synthetic_seed = rc.synthetic.seed;
  }
  if (j.contains("train")) rc.train = train_from_json(j.at("train"), rc.train);
  if (j.contains("loss")) rc.train.loss = loss_from_json(j.at("loss"), rc.train.loss);
  if (j.contains("eval")) rc.eval = eval_from_json(j.at("eval"), rc.eval);
  if (j.contains("far_targets")) rc.eval = eval_from_json(json{{"far_targets", j.at("far_targets")}}, rc.eval, "");

  rc.synthetic.seed = rc.synthetic_seed.value_or(rc.seed);
  rc.train.seed = rc.seed;
  rc.eval.seed = rc.seed;
  validate(rc.synthetic);
  validate(rc.train);
  return rc;
}

/// Effective config, with every default and derived seed spelled out.
inline json to_json(const RunConfig& rc) {
  json eval = to_json(rc.eval);
  return {{"seed", rc.seed},
          {"output_dir", rc.output_dir.string()},
          {"eval_every", rc.eval_every},
          {"synthetic", to_json(rc.synthetic)},
          {"train", to_json_train_section(rc.train)},
          {"loss", to_json(rc.train.loss)},
          {"eval", eval}};
}

inline std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv(kSeedEnvVar);
  if (v == nullptr || *v == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0' || errno == ERANGE || v[0] == '-') {
    throw Error(ErrorCode::ConfigInvalid, std::string(kSeedEnvVar) + " must be a nonnegative integer");
  }
  return static_cast<std::uint64_t>(s);
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> seed_override = std::nullopt) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoFailure, "config file " + path.string() + " not found");
  return run_config_from_json(read_json(path, ErrorCode::ConfigInvalid), seed_override);
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  RunConfig config;
  std::size_t step = 0;
  Matrix params;   // embeddings (free_embedding) or encoder (linear_encoder)
  Matrix weights;
};

inline const char* params_file(TrainMode mode) {
  return mode == TrainMode::free_embedding ? "embeddings.csv" : "encoder.csv";
}

inline std::filesystem::path write_checkpoint(const std::filesystem::path& dir, const RunConfig& rc,
                                              const OptimizerState& st) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  const char* pfile = params_file(rc.train.mode);
  write_text(dir / pfile, matrix_to_csv(st.params));
  write_text(dir / "weights.csv", matrix_to_csv(st.weights));
  const json side = {{"format", kCheckpointFormat},
                     {"mode", to_string(rc.train.mode)},
                     {"step", st.step},
                     {"params", {{"file", pfile}, {"rows", st.params.rows()}, {"cols", st.params.cols()}}},
                     {"weights", {{"file", "weights.csv"}, {"rows", st.weights.rows()}, {"cols", st.weights.cols()}}},
                     {"config", to_json(rc)}};
  const auto path = dir / "checkpoint.json";
  write_text(path, side.dump(2) + "\n");
  return path;
}

/// Accepts the sidecar itself, a checkpoint directory, or a run directory.
inline std::filesystem::path resolve_checkpoint_path(const std::filesystem::path& p) {
  namespace fs = std::filesystem;
  if (fs::is_directory(p)) {
    if (fs::exists(p / "checkpoint.json")) return p / "checkpoint.json";
    if (fs::exists(p / "checkpoint" / "checkpoint.json")) return p / "checkpoint" / "checkpoint.json";
    throw Error(ErrorCode::IoFailure, "no checkpoint.json under " + p.string());
  }
  if (!fs::exists(p)) throw Error(ErrorCode::IoFailure, "checkpoint " + p.string() + " not found");
  return p;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto side_path = resolve_checkpoint_path(path);
  const json side = read_json(side_path, ErrorCode::CheckpointCorrupt);
  Checkpoint ck;
  try {
    if (side.at("format").get<std::string>() != kCheckpointFormat) {
      throw Error(ErrorCode::CheckpointCorrupt, "unsupported checkpoint format");
    }
    ck.config = run_config_from_json(side.at("config"));
    ck.step = side.at("step").get<std::size_t>();
    const auto dir = side_path.parent_path();
    const auto& p = side.at("params");
    const auto& w = side.at("weights");
    const auto pfile = p.at("file").get<std::string>();
    ck.params = matrix_from_csv(read_text(dir / pfile), p.at("rows").get<std::size_t>(),
                                p.at("cols").get<std::size_t>(), pfile);
    ck.weights = matrix_from_csv(read_text(dir / w.at("file").get<std::string>()), w.at("rows").get<std::size_t>(),
                                 w.at("cols").get<std::size_t>(), "weights.csv");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CheckpointCorrupt, side_path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigInvalid) throw Error(ErrorCode::CheckpointCorrupt, e.what());
    throw;
  }
  return ck;
}

/// Normalized embeddings of `ds` under the checkpointed parameters.
inline std::vector<UnitVector> checkpoint_embeddings(const Checkpoint& ck, const Dataset& ds) {
  const TrainConfig& tc = ck.config.train;
  const bool free = tc.mode == TrainMode::free_embedding;
  if (ds.dim() != ck.params.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "dataset dim " + std::to_string(ds.dim()) + " but checkpoint dim " +
                                                  std::to_string(ck.params.cols()));
  }
  if (free && ds.size() != ck.params.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "dataset has " + std::to_string(ds.size()) +
                                                  " samples but checkpoint holds " + std::to_string(ck.params.rows()) +
                                                  " embeddings");
  }
  OptimizerState st;
  st.params = ck.params;
  st.weights = ck.weights;
  return dataset_embeddings(st, ds, tc);
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  bool allow_nonfinite = false;
};

struct RunRecord {
  std::string status;  // "complete", "aborted_nonfinite" or "diverged"
  std::size_t steps = 0;
  std::vector<double> losses;
  std::vector<std::pair<std::size_t, MetricsReport>> reports;
  std::optional<MetricsReport> final_metrics;
  std::filesystem::path checkpoint;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
};

namespace detail {

inline bool finite_state(const OptimizerState& st) {
  return all_finite(st.params) && all_finite(st.weights);
}

inline std::optional<MetricsReport> try_evaluate(const OptimizerState& st, const Dataset& ds, const RunConfig& rc) {
  if (!finite_state(st)) return std::nullopt;
  return evaluate(dataset_embeddings(st, ds, rc.train), ds.labels, rc.eval);
}

inline json record_to_json(const RunRecord& r) {
  return {{"status", r.status},
          {"steps", r.steps},
          {"final_loss", r.losses.empty() ? json(nullptr) : json(r.losses.back())},
          {"checkpoint", r.checkpoint.string()},
          {"metrics", r.final_metrics ? json("metrics.json") : json(nullptr)},
          {"timings", {{"train_seconds", r.train_seconds}, {"total_seconds", r.total_seconds}}}};
}

}  // namespace detail

/// Trains to completion and writes the run directory. Throws
/// Error(NonFinite) after writing run.json when a step produces NaN/inf and
/// nonfinite values are not allowed.
inline RunRecord cmd_train(RunConfig rc, const TrainOptions& opt = {}) {
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();

  std::error_code ec;
  fs::create_directories(rc.output_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + rc.output_dir.string() + ": " + ec.message());

  const Dataset ds = gen_synthetic(rc.synthetic);
  rc.train.steps_per_epoch = resolve_steps_per_epoch(rc.train, ds.size());
  const std::size_t steps = total_steps(rc.train);

  std::ofstream loss_log(rc.output_dir / "loss.jsonl", std::ios::binary | std::ios::trunc);
  std::ofstream metrics_log(rc.output_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!loss_log || !metrics_log) throw Error(ErrorCode::IoFailure, "cannot write logs under " + rc.output_dir.string());

  RunRecord rec;
  OptimizerState st = init_state(ds, rc.train);
  auto log_metrics = [&](std::size_t step) {
    auto m = detail::try_evaluate(st, ds, rc);
    if (!m) return;
    metrics_log << json{{"step", step}, {"metrics", to_json(*m)}}.dump() << '\n';
    rec.reports.emplace_back(step, *m);
  };
  log_metrics(0);

  Rng batch_rng = make_rng(rc.train.seed, kStreamBatches);
  const auto t_train = clock::now();
  bool aborted = false;
  for (std::size_t s = 0; s < steps; ++s) {
    // Parameters that went NaN cannot be normalized again; the run ends as diverged.
    if (!detail::finite_state(st)) break;
    const SampledBatch batch = sample_batch(ds, rc.train.classes_per_batch, rc.train.samples_per_class, batch_rng);
    const StepResult r = train_step(st, ds, batch, rc.train);
    rec.losses.push_back(r.loss.value);
    loss_log << json{{"step", s}, {"lr", r.lr}, {"loss", r.loss.value}}.dump() << '\n';
    ++rec.steps;
    if (!r.finite && !opt.allow_nonfinite) {
      aborted = true;
      break;
    }
    if ((s + 1) % rc.eval_every == 0 && s + 1 < steps) log_metrics(s + 1);
  }
  rec.train_seconds = std::chrono::duration<double>(clock::now() - t_train).count();

  if (!aborted && steps > 0) log_metrics(st.step);
  loss_log.flush();
  metrics_log.flush();
  if (!loss_log || !metrics_log) throw Error(ErrorCode::IoFailure, "log write failed under " + rc.output_dir.string());

  if (aborted) {
    rec.status = "aborted_nonfinite";
  } else {
    rec.checkpoint = fs::path("checkpoint") / "checkpoint.json";
    write_checkpoint(rc.output_dir / "checkpoint", rc, st);
    rec.final_metrics = detail::try_evaluate(st, ds, rc);
    if (rec.final_metrics) {
      write_text(rc.output_dir / "metrics.json", to_json(*rec.final_metrics).dump(2) + "\n");
      rec.status = "complete";
    } else {
      rec.status = "diverged";
    }
  }
  rec.total_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
  write_text(rc.output_dir / "run.json", detail::record_to_json(rec).dump(2) + "\n");
  if (aborted) {
    throw Error(ErrorCode::NonFinite, "nonfinite loss or gradient at step " + std::to_string(rec.steps - 1) +
                                          " (rerun with --allow-nonfinite to continue)");
  }
  return rec;
}

// ---------------------------------------------------------------------------
// eval

/// Recomputes every metric for the checkpoint on the dataset described by
/// `data` (a run-config-shaped object; only `seed`, `synthetic` and `eval` are
/// consulted). Never modifies the checkpoint.
inline MetricsReport cmd_eval(const std::filesystem::path& ckpt_path, const std::filesystem::path& data_path,
                              std::optional<std::uint64_t> seed_override = std::nullopt) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  if (!std::filesystem::exists(data_path)) throw Error(ErrorCode::IoFailure, "data spec " + data_path.string() + " not found");
  const json dj = read_json(data_path, ErrorCode::ConfigInvalid);
  json slim = json::object();
  for (const char* key : {"seed", "synthetic", "eval", "far_targets"}) {
    if (dj.contains(key)) slim[key] = dj.at(key);
  }
  RunConfig data = run_config_from_json(slim, seed_override);
  const Dataset ds = gen_synthetic(data.synthetic);
  EvalOptions opt = dj.contains("eval") || dj.contains("far_targets") ? data.eval : ck.config.eval;
  opt.seed = ck.config.eval.seed;
  return evaluate(checkpoint_embeddings(ck, ds), ds.labels, opt);
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  std::size_t bins = kDefaultOverlapBins;
  std::optional<std::vector<double>> sweep_whisker;
  std::filesystem::path out_dir = "analysis";
};

struct RunSummary {
  std::string dir;
  std::size_t overlap_count = 0;
  double wdfs_gap = 0.0;
  double theta_p_max = 0.0;
  double theta_n_min = 0.0;
  ScoredPairs sampled;
};

inline RunSummary summarize_run(const std::filesystem::path& dir, std::size_t bins) {
  const auto record_path = dir / "run.json";
  if (!std::filesystem::exists(record_path)) throw Error(ErrorCode::RunIncomplete, dir.string() + " has no run.json");
  const json rec = read_json(record_path, ErrorCode::RunIncomplete);
  if (!rec.is_object() || rec.value("status", "") != "complete") {
    throw Error(ErrorCode::RunIncomplete, dir.string() + " did not complete");
  }
  const Checkpoint ck = load_checkpoint(dir / "checkpoint" / "checkpoint.json");
  const Dataset ds = gen_synthetic(ck.config.synthetic);
  const auto emb = checkpoint_embeddings(ck, ds);
  RunSummary s;
  s.dir = dir.string();
  s.sampled = overlap_sample(all_pair_scores(emb, ds.labels), ck.config.eval.sample_count, ck.config.eval.seed);
  s.overlap_count = overlap_count(s.sampled, bins);
  const WdfsGap g = wdfs_gap(s.sampled);
  s.wdfs_gap = g.gap;
  s.theta_p_max = g.theta_p_max;
  s.theta_n_min = g.theta_n_min;
  return s;
}

struct SweepPoint {
  double whisker_r = 0.0;
  std::optional<double> final_loss;
  std::optional<MetricsReport> metrics;
};

/// Retrains `base` with UNPG and filtering on for each whisker size. Runs are
/// independent and execute concurrently.
inline std::vector<SweepPoint> whisker_sweep(const RunConfig& base, const std::vector<double>& whiskers) {
  if (whiskers.empty()) throw Error(ErrorCode::ConfigInvalid, "--sweep-whisker needs at least one value");
  for (double r : whiskers) {
    if (!(r >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "--sweep-whisker values must be >= 0");
  }
  std::vector<std::future<SweepPoint>> jobs;
  for (double r : whiskers) {
    jobs.push_back(std::async(std::launch::async, [base, r] {
      RunConfig rc = base;
      rc.train.loss.unpg_enabled = true;
      rc.train.loss.filter_enabled = true;
      rc.train.loss.whisker.whisker_r = r;
      const Dataset ds = gen_synthetic(rc.synthetic);
      const TrainOutcome out = train(ds, rc.train);
      SweepPoint p;
      p.whisker_r = r;
      if (!out.losses.empty() && std::isfinite(out.losses.back())) p.final_loss = out.losses.back();
      TrainConfig tc = rc.train;
      tc.steps_per_epoch = resolve_steps_per_epoch(tc, ds.size());
      if (detail::finite_state(out.state)) p.metrics = evaluate(dataset_embeddings(out.state, ds, tc), ds.labels, rc.eval);
      return p;
    }));
  }
  std::vector<SweepPoint> points;
  for (auto& j : jobs) points.push_back(j.get());
  return points;
}

/// Compares two completed runs (B - A) and optionally sweeps the whisker size
/// on run A's config. Writes analysis.json, histogram CSVs and
/// whisker_sweep.csv into opt.out_dir; returns the JSON report.
inline json cmd_analyze(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b,
                        const AnalyzeOptions& opt) {
  if (opt.bins < 1) throw Error(ErrorCode::ConfigInvalid, "--bins must be >= 1");
  if (opt.sweep_whisker && opt.sweep_whisker->empty()) {
    throw Error(ErrorCode::ConfigInvalid, "--sweep-whisker needs at least one value");
  }
  const RunSummary a = summarize_run(dir_a, opt.bins);
  const RunSummary b = summarize_run(dir_b, opt.bins);

  std::error_code ec;
  std::filesystem::create_directories(opt.out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + opt.out_dir.string() + ": " + ec.message());

  json runs = json::array();
  const std::pair<const char*, const RunSummary*> tagged[] = {{"a", &a}, {"b", &b}};
  for (const auto& [tag, s] : tagged) {
    const std::string pos_csv = std::string(tag) + "_positive_hist.csv";
    const std::string neg_csv = std::string(tag) + "_negative_hist.csv";
    write_text(opt.out_dir / pos_csv, histogram_csv(s->sampled.positive_scores, opt.bins));
    write_text(opt.out_dir / neg_csv, histogram_csv(s->sampled.negative_scores, opt.bins));
    runs.push_back({{"tag", tag},
                    {"dir", s->dir},
                    {"overlap_count", s->overlap_count},
                    {"wdfs_gap", s->wdfs_gap},
                    {"theta_p_max", s->theta_p_max},
                    {"theta_n_min", s->theta_n_min},
                    {"sampled_pairs", s->sampled.positive_scores.size()},
                    {"histograms", {{"positive", pos_csv}, {"negative", neg_csv}}}});
  }
  json report = {{"bins", opt.bins},
                 {"runs", runs},
                 {"difference",
                  {{"overlap_count", static_cast<long long>(b.overlap_count) - static_cast<long long>(a.overlap_count)},
                   {"wdfs_gap", b.wdfs_gap - a.wdfs_gap}}}};

  if (opt.sweep_whisker) {
    const Checkpoint ck = load_checkpoint(dir_a / "checkpoint" / "checkpoint.json");
    RunConfig base = ck.config;
    base.eval.overlap_bins = opt.bins;
    const auto points = whisker_sweep(base, *opt.sweep_whisker);
    json sweep = json::array();
    std::string csv = "whisker_r,final_loss,overlap_count,wdfs_gap,verification_accuracy,rank1\n";
    for (const auto& p : points) {
      json row = {{"whisker_r", p.whisker_r},
                  {"final_loss", p.final_loss ? json(*p.final_loss) : json(nullptr)},
                  {"metrics", p.metrics ? to_json(*p.metrics) : json(nullptr)}};
      sweep.push_back(row);
      csv += format_double(p.whisker_r) + ',' + (p.final_loss ? format_double(*p.final_loss) : "nan") + ',';
      csv += p.metrics ? std::to_string(p.metrics->overlap_count) + ',' + format_double(p.metrics->wdfs_gap) + ',' +
                             format_double(p.metrics->verification_accuracy) + ',' + format_double(p.metrics->rank1)
                       : std::string("nan,nan,nan,nan");
      csv += '\n';
    }
    report["whisker_sweep"] = sweep;
    write_text(opt.out_dir / "whisker_sweep.csv", csv);
  }
  write_text(opt.out_dir / "analysis.json", report.dump(2) + "\n");
  return report;
}

}  // namespace unpg
