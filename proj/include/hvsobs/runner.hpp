#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hvsobs/hvs.hpp"
#include "hvsobs/stack.hpp"
#include "hvsobs/synth.hpp"

namespace hvsobs {

enum class Model { csf_only, csf_plus_masking };

std::string to_string(Model model);
Model parse_model(const std::string& text);

struct Variant {
  Model model = Model::csf_plus_masking;
  Method method = Method::PM;
  std::optional<double> k;  // overrides the shared Crozier coefficient
  std::string name;         // row label; defaults to the model name

  std::string label() const { return name.empty() ? to_string(model) : name; }
};

struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset;  // manifest.json
  std::optional<SynthConfig> synth;              // used when dataset is absent
  std::optional<ViewingConfig> viewing;          // defaults to the manifest's
  HvsConfig hvs;
  std::vector<Variant> variants;
  std::size_t channels = 5;
  double channel_width = 15.0;
  double shrinkage = 0.2;
  std::uint64_t split_seed = 1;
  std::size_t bootstrap = 2000;
  std::uint64_t bootstrap_seed = 2;
  std::filesystem::path output_dir = "results";
  std::size_t threads = 0;
  bool record_wall_time = false;  // otherwise the ms column is 0 so outputs stay byte-stable
  bool write_scores = true;

  // Effective HVS settings for one variant.
  HvsConfig hvs_for(const Variant& v) const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Parses a config file, resolving relative paths against its directory.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

std::string config_hash(const ExperimentConfig& config);

struct ResultRow {
  std::string model;
  std::string method;
  int complexity = 0;
  double auc = 0.5;
  double ci_low = 0.5;
  double ci_high = 0.5;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  long long ms = 0;
};

struct ResultsTable {
  std::string config_hash;
  std::vector<ResultRow> rows;
};

inline constexpr const char* kResultsCsvHeader = "model,method,complexity,auc,ci_low,ci_high,n_train,n_test,ms";

std::string csv_row(const ResultRow& row);
std::string to_csv(const ResultsTable& table);
ResultsTable parse_results_csv(const std::string& text);
ResultsTable read_results(const std::filesystem::path& path);  // .csv or .json

// Runs every variant on every complexity level. Writes results.csv (appended
// row by row), results.json and, optionally, per-variant score logs under
// config.output_dir.
ResultsTable run_experiment(const ExperimentConfig& config);

struct TrendOptions {
  double spearman_max = -0.9;
  double slack = 0.02;
  std::string focus_method = "PM";
  std::size_t min_strict_levels = 2;
};

struct VariantTrend {
  std::string model;
  std::string method;
  std::vector<int> levels;
  std::vector<double> aucs;
  double spearman = 0.0;
};

struct LevelDelta {
  std::string method;
  int complexity = 0;
  double delta = 0.0;       // AUC(masking) - AUC(csf_only)
  double half_width = 0.0;  // masking row's bootstrap CI half-width
};

struct TrendReport {
  std::vector<VariantTrend> variants;
  std::vector<LevelDelta> deltas;
  int top_level = 0;
  // (a) masking + focus method decreases with complexity.
  bool monotone_drop = false;
  // (b) masking does not beat csf_only (+ slack) at the top level.
  bool masking_not_higher_at_top = false;
  // Levels where masking is lower than csf_only by more than its CI half-width.
  std::size_t strictly_lower_levels = 0;
  bool masking_strictly_lower = false;

  std::string text() const;
};

double spearman(std::span<const double> x, std::span<const double> y);

TrendReport check_trend(const ResultsTable& results, const TrendOptions& options = {});

void to_json(nlohmann::json& j, const TrendReport& r);

}  // namespace hvsobs
