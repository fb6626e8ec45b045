#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hvsobs/stack.hpp"

namespace hvsobs {

// Laguerre-Gauss channel profiles, one row of nx*ny weights per channel.
struct ChannelSet {
  std::size_t count = 0;
  double width = 0.0;
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::vector<double> matrix;  // row-major, count x (nx*ny)

  std::span<const double> row(std::size_t j) const { return {matrix.data() + j * nx * ny, nx * ny}; }
};

ChannelSet lg_channels(std::size_t count, double width, std::size_t nx, std::size_t ny);

// Per-slice projection onto every channel, concatenated slice-major.
std::vector<double> channelize(const Volume& stack, const ChannelSet& channels);

struct HotellingTemplate {
  std::vector<double> weights;
  std::vector<double> mean_diff;  // lesion mean minus healthy mean
  double shrinkage = 0.2;
  std::size_t n_healthy = 0;
  std::size_t n_lesion = 0;
};

// w = S^-1 (mu_lesion - mu_healthy), S = (1 - lambda) pooled + lambda diag(pooled).
HotellingTemplate train_mscho(std::span<const std::vector<double>> features, std::span<const Label> labels,
                              double shrinkage = 0.2);

double score(const HotellingTemplate& tmpl, std::span<const double> features);

struct AucResult {
  double auc = 0.5;
  double ci_low = 0.5;
  double ci_high = 0.5;
};

// Mann-Whitney AUC (ties count one half).
double auc_statistic(std::span<const double> healthy, std::span<const double> lesion);

// AUC with a seeded stratified bootstrap percentile 95% interval.
AucResult auc(std::span<const double> healthy, std::span<const double> lesion, std::size_t resamples = 2000,
              std::uint64_t seed = 0);

// One observer decision, human or numerical.
struct ScoreRecord {
  std::string stack_id;
  Label label = Label::healthy;
  int complexity = 0;
  double score = 0.0;
  std::string observer;
  std::size_t presentations = 0;
  double elapsed_ms = 0.0;
  std::string session;
};

void to_json(nlohmann::json& j, const ScoreRecord& r);
void from_json(const nlohmann::json& j, ScoreRecord& r);

bool is_human_score(double score);

struct PercentCorrect {
  std::map<int, double> by_level;
  std::map<int, std::pair<std::size_t, std::size_t>> counts;  // hits, lesion records
  std::vector<std::string> warnings;
};

// Fraction of lesion stacks scored 2 or 3, per complexity level. Levels that
// contribute no lesion records are omitted with a warning.
PercentCorrect percent_correct(std::span<const ScoreRecord> records, std::span<const int> levels = {});

// One JSON object per line. Blank lines are skipped; lines whose "type" is
// present and not "score" are ignored so session logs can be read directly.
std::vector<ScoreRecord> read_score_log(const std::filesystem::path& path);
void append_score_log(const std::filesystem::path& path, std::span<const ScoreRecord> records);

}  // namespace hvsobs
