#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hvsobs/observer.hpp"
#include "hvsobs/stack.hpp"

namespace hvsobs {

struct DisplayWindow {
  double lo = 0.0;
  double hi = 1.0;
};

// 8-bit grayscale PNG of one slice; pixel = round-half-up(255 (p - lo) / (hi - lo)), clamped.
std::vector<std::uint8_t> slice_png(const ImageStack& stack, std::size_t slice, DisplayWindow window = {});
std::vector<std::uint8_t> encode_gray_png(std::span<const std::uint8_t> pixels, std::size_t width, std::size_t height);

struct StudyConfig {
  std::filesystem::path manifest;
  std::uint64_t selection_seed = 2013;
  std::vector<int> levels{0, 2, 4};
  std::size_t per_condition = 35;
  std::filesystem::path log_dir = "study_logs";
  std::filesystem::path static_dir;  // study UI bundle, optional
  std::string host = "127.0.0.1";
  int port = 8080;
  DisplayWindow window;
  std::optional<ViewingConfig> viewing;  // defaults to the manifest's
};

void from_json(const nlohmann::json& j, StudyConfig& c);
StudyConfig load_study_config(const std::filesystem::path& path);

// Stacks chosen for a study: per_condition of each {healthy, lesion} x level,
// a function of (manifest, seed) only. Returns manifest entry indices.
std::vector<std::size_t> select_study_stacks(const DatasetManifest& manifest, std::span<const int> levels,
                                             std::size_t per_condition, std::uint64_t seed);

// Presentation order for one observer over a selection.
std::vector<std::size_t> presentation_order(std::size_t count, std::uint64_t seed, const std::string& observer_id);

struct ScoreSubmission {
  std::string session;
  std::string stack;  // opaque token, as handed out by next()
  double score = -1.0;
  std::size_t presentations = 1;
  double elapsed_ms = 0.0;
};

struct SessionResults {
  std::string session;
  std::string observer_id;
  bool partial = true;
  std::size_t scored = 0;
  std::size_t total = 0;
  PercentCorrect percent_correct;
  std::vector<ScoreRecord> records;
};

void to_json(nlohmann::json& j, const SessionResults& r);

// Per-observer percent correct (rating logs only) and AUC per complexity level,
// keyed by observer id. Warnings about levels without lesion records are
// appended to `warnings` when given.
nlohmann::json analyze_score_logs(std::span<const std::filesystem::path> logs,
                                  std::vector<std::string>* warnings = nullptr);

// Reading-study state machine. Every accepted score is appended to
// <log_dir>/<session>.jsonl and flushed before the call returns; constructing
// a service over an existing log_dir replays those logs.
class StudyService {
 public:
  explicit StudyService(StudyConfig config);
  ~StudyService();

  const StudyConfig& config() const { return config_; }
  const ViewingConfig& viewing() const { return viewing_; }
  std::size_t study_size() const { return selection_.size(); }
  // Internal stack ids of the selection, in selection order.
  std::vector<std::string> selected_ids() const;
  std::string token_for(const std::string& stack_id) const;

  // Client-facing JSON views. None of them carries labels, complexity levels
  // or stack ids until the session is complete.
  nlohmann::json create_session(const std::string& observer_id);
  nlohmann::json session(const std::string& sid) const;
  nlohmann::json next(const std::string& sid) const;
  nlohmann::json record_score(const ScoreSubmission& submission);
  nlohmann::json results_view(const std::string& sid) const;

  std::vector<std::uint8_t> slice(const std::string& token, std::size_t index,
                                  std::optional<DisplayWindow> window = std::nullopt) const;

  // Full results, including partial sessions (server-side analysis only).
  SessionResults session_results(const std::string& sid) const;
  // Internal stack ids in the order this session presents them.
  std::vector<std::string> session_order(const std::string& sid) const;

 private:
  struct Session;

  Session& find(const std::string& sid) const;
  void replay(const std::filesystem::path& log);
  std::shared_ptr<const ImageStack> stack(std::size_t entry) const;

  StudyConfig config_;
  Dataset dataset_;
  ViewingConfig viewing_;
  std::vector<std::size_t> selection_;
  std::map<std::string, std::size_t> token_to_entry_;
  std::map<std::size_t, std::string> entry_to_token_;

  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
  std::size_t next_session_ = 1;

  mutable std::mutex cache_mutex_;
  mutable std::map<std::size_t, std::shared_ptr<const ImageStack>> cache_;
};

}  // namespace hvsobs
