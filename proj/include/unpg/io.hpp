#pragma once

// File formats: matrices as CSV (one row per vector, 17 significant digits),
// configs and reports as JSON.

#include <cerrno>
#include <concepts>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "unpg/error.hpp"
#include "unpg/eval.hpp"
#include "unpg/loss.hpp"
#include "unpg/margins.hpp"
#include "unpg/sphere.hpp"
#include "unpg/trainer.hpp"

namespace unpg {

using json = nlohmann::json;

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// Text files

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

inline json read_json(const std::filesystem::path& path, ErrorCode on_parse_error) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(on_parse_error, path.string() + " is not valid JSON (" + e.what() + ")");
  }
}

// ---------------------------------------------------------------------------
// Matrix CSV

inline std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c > 0) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

/// Parses a matrix written by matrix_to_csv and checks its shape. Any
/// deviation (short row, bad number, missing final newline) is reported as
/// CheckpointCorrupt.
inline Matrix matrix_from_csv(const std::string& text, std::size_t rows, std::size_t cols, const std::string& name) {
  Matrix m(rows, cols);
  std::size_t r = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) throw Error(ErrorCode::CheckpointCorrupt, name + ": truncated final row");
    if (r >= rows) throw Error(ErrorCode::CheckpointCorrupt, name + ": more than " + std::to_string(rows) + " rows");
    const std::string line = text.substr(pos, eol - pos);
    std::size_t c = 0;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      const std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (c >= cols) throw Error(ErrorCode::CheckpointCorrupt, name + ": row " + std::to_string(r) + " too long");
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size() || errno == ERANGE) {
        throw Error(ErrorCode::CheckpointCorrupt, name + ": bad number '" + cell + "' in row " + std::to_string(r));
      }
      m(r, c++) = v;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (c != cols) throw Error(ErrorCode::CheckpointCorrupt, name + ": row " + std::to_string(r) + " too short");
    ++r;
    pos = eol + 1;
  }
  if (r != rows) {
    throw Error(ErrorCode::CheckpointCorrupt,
                name + ": expected " + std::to_string(rows) + " rows, found " + std::to_string(r));
  }
  return m;
}

/// Two-column (bin_center,count) histogram CSV.
inline std::string histogram_csv(std::span<const double> scores, std::size_t num_bins) {
  const auto counts = histogram(scores, num_bins);
  std::string out = "bin_center,count\n";
  for (std::size_t b = 0; b < num_bins; ++b) {
    out += format_double(bin_center(b, num_bins)) + ',' + std::to_string(counts[b]) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strict JSON field readers. Errors name the dotted field path.

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, (path.empty() ? "config" : path) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorCode::ConfigInvalid, "unknown field " + (path.empty() ? key : path + "." + key));
  }
}

inline std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

inline void read(const json& j, const char* key, double& out, const std::string& path) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number()) throw Error(ErrorCode::ConfigInvalid, join(path, key) + " must be a number");
  out = v.get<double>();
}

template <std::unsigned_integral T>
void read(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) {
    throw Error(ErrorCode::ConfigInvalid, join(path, key) + " must be a nonnegative integer");
  }
  out = v.get<T>();
}

inline void read(const json& j, const char* key, bool& out, const std::string& path) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_boolean()) throw Error(ErrorCode::ConfigInvalid, join(path, key) + " must be true or false");
  out = v.get<bool>();
}

inline void read(const json& j, const char* key, std::string& out, const std::string& path) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_string()) throw Error(ErrorCode::ConfigInvalid, join(path, key) + " must be a string");
  out = v.get<std::string>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config sections

inline json to_json(const SyntheticSpec& s) {
  return {{"num_classes", s.num_classes},
          {"samples_per_class", s.samples_per_class},
          {"dim", s.dim},
          {"concentration", s.concentration},
          {"seed", s.seed}};
}

inline SyntheticSpec synthetic_from_json(const json& j, SyntheticSpec s, const std::string& path = "synthetic") {
  detail::check_keys(j, {"num_classes", "samples_per_class", "dim", "concentration", "seed"}, path);
  detail::read(j, "num_classes", s.num_classes, path);
  detail::read(j, "samples_per_class", s.samples_per_class, path);
  detail::read(j, "dim", s.dim, path);
  detail::read(j, "concentration", s.concentration, path);
  detail::read(j, "seed", s.seed, path);
  return s;
}

inline const char* to_string(QuartileMethod q) { return q == QuartileMethod::linear ? "linear" : "tukey_hinges"; }

inline json to_json(const LossConfig& c) {
  return {{"gamma", c.gamma},
          {"margin", {{"variant", to_string(c.margin.variant)}, {"m", c.margin.m}}},
          {"whisker_r", c.whisker.whisker_r},
          {"quartiles", to_string(c.whisker.quartiles)},
          {"unpg", c.unpg_enabled},
          {"filter", c.filter_enabled}};
}

inline LossConfig loss_from_json(const json& j, LossConfig c, const std::string& path = "loss") {
  detail::check_keys(j, {"gamma", "margin", "whisker_r", "quartiles", "unpg", "filter"}, path);
  detail::read(j, "gamma", c.gamma, path);
  if (j.contains("margin")) {
    const auto& m = j.at("margin");
    const std::string mp = path + ".margin";
    detail::check_keys(m, {"variant", "m"}, mp);
    std::string variant = to_string(c.margin.variant);
    detail::read(m, "variant", variant, mp);
    c.margin.variant = parse_margin_variant(variant);
    detail::read(m, "m", c.margin.m, mp);
  }
  detail::read(j, "whisker_r", c.whisker.whisker_r, path);
  std::string q = to_string(c.whisker.quartiles);
  detail::read(j, "quartiles", q, path);
  if (q == "linear") {
    c.whisker.quartiles = QuartileMethod::linear;
  } else if (q == "tukey_hinges") {
    c.whisker.quartiles = QuartileMethod::tukey_hinges;
  } else {
    throw Error(ErrorCode::ConfigInvalid, path + ".quartiles must be 'linear' or 'tukey_hinges'");
  }
  detail::read(j, "unpg", c.unpg_enabled, path);
  detail::read(j, "filter", c.filter_enabled, path);
  return c;
}

/// Train section; `loss` and `seed` live at the top level of a run config.
inline json to_json_train_section(const TrainConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"classes_per_batch", c.classes_per_batch},
          {"samples_per_class", c.samples_per_class},
          {"base_lr", c.base_lr},
          {"warmup_epochs", c.warmup_epochs},
          {"max_epochs", c.max_epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"embedding_dim", c.embedding_dim},
          {"noise_injection", {{"hard", c.noise.hard}, {"easy", c.noise.easy}}}};
}

inline TrainConfig train_from_json(const json& j, TrainConfig c, const std::string& path = "train") {
  detail::check_keys(j,
                     {"mode", "classes_per_batch", "samples_per_class", "base_lr", "warmup_epochs", "max_epochs",
                      "steps_per_epoch", "momentum", "weight_decay", "embedding_dim", "noise_injection"},
                     path);
  std::string mode = to_string(c.mode);
  detail::read(j, "mode", mode, path);
  c.mode = parse_train_mode(mode);
  detail::read(j, "classes_per_batch", c.classes_per_batch, path);
  detail::read(j, "samples_per_class", c.samples_per_class, path);
  detail::read(j, "base_lr", c.base_lr, path);
  detail::read(j, "warmup_epochs", c.warmup_epochs, path);
  detail::read(j, "max_epochs", c.max_epochs, path);
  detail::read(j, "steps_per_epoch", c.steps_per_epoch, path);
  detail::read(j, "momentum", c.momentum, path);
  detail::read(j, "weight_decay", c.weight_decay, path);
  detail::read(j, "embedding_dim", c.embedding_dim, path);
  if (j.contains("noise_injection")) {
    const auto& n = j.at("noise_injection");
    const std::string np = path + ".noise_injection";
    detail::check_keys(n, {"hard", "easy"}, np);
    detail::read(n, "hard", c.noise.hard, np);
    detail::read(n, "easy", c.noise.easy, np);
  }
  return c;
}

inline json to_json(const EvalOptions& e) {
  return {{"far_targets", e.far_targets}, {"overlap_bins", e.overlap_bins}, {"sample_count", e.sample_count}};
}

inline EvalOptions eval_from_json(const json& j, EvalOptions e, const std::string& path = "eval") {
  detail::check_keys(j, {"far_targets", "overlap_bins", "sample_count"}, path);
  if (j.contains("far_targets")) {
    const auto& f = j.at("far_targets");
    if (!f.is_array()) throw Error(ErrorCode::ConfigInvalid, path + ".far_targets must be an array of numbers");
    e.far_targets.clear();
    for (const auto& v : f) {
      if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0) {
        throw Error(ErrorCode::ConfigInvalid, path + ".far_targets entries must be numbers in [0,1]");
      }
      e.far_targets.push_back(v.get<double>());
    }
  }
  detail::read(j, "overlap_bins", e.overlap_bins, path);
  detail::read(j, "sample_count", e.sample_count, path);
  if (e.overlap_bins < 1) throw Error(ErrorCode::ConfigInvalid, path + ".overlap_bins must be >= 1");
  if (e.sample_count < 1) throw Error(ErrorCode::ConfigInvalid, path + ".sample_count must be >= 1");
  return e;
}

// ---------------------------------------------------------------------------
// Reports

inline json to_json(const MetricsReport& r) {
  json tar = json::array();
  for (const auto& t : r.tar_at_far) {
    // -inf thresholds (accept everything) are written as null.
    json thr = std::isfinite(t.threshold) ? json(t.threshold) : json(nullptr);
    tar.push_back({{"far", t.far_target}, {"tar", t.tar}, {"threshold", thr}});
  }
  return {{"tar_at_far", tar},
          {"verification_accuracy", r.verification_accuracy},
          {"verification_threshold", r.verification_threshold},
          {"rank1", r.rank1},
          {"overlap_count", r.overlap_count},
          {"overlap_bins", r.overlap_bins},
          {"sampled_pairs", r.sampled_pairs},
          {"wdfs_gap", r.wdfs_gap},
          {"theta_p_max", r.theta_p_max},
          {"theta_n_min", r.theta_n_min}};
}

}  // namespace unpg
