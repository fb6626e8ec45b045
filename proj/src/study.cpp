#include "hvsobs/study.hpp"

#include <png.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>

#include "hvsobs/error.hpp"
#include "hvsobs/random.hpp"

namespace hvsobs {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::uint8_t> encode_gray_png(std::span<const std::uint8_t> pixels, std::size_t width, std::size_t height) {
  if (pixels.size() != width * height) throw Error(ErrorCode::length_mismatch, "pixel buffer does not match image size");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::io, "png_create_info_struct failed");
  }
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::io, "PNG encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        buf->insert(buf->end(), data, data + len);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> slice_png(const ImageStack& stack, std::size_t slice, DisplayWindow window) {
  if (slice >= stack.dims.nz)
    throw Error(ErrorCode::not_found, "slice " + std::to_string(slice) + " outside 0.." + std::to_string(stack.dims.nz - 1));
  if (!(window.hi > window.lo)) throw Error(ErrorCode::validation, "display window requires hi > lo");
  const std::size_t plane = stack.dims.slice_size();
  std::vector<std::uint8_t> px(plane);
  const float* src = stack.voxels.data() + slice * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    const double level = std::floor((src[i] - window.lo) / (window.hi - window.lo) * 255.0 + 0.5);
    px[i] = static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
  }
  return encode_gray_png(px, stack.dims.nx, stack.dims.ny);
}

void from_json(const json& j, StudyConfig& c) {
  c = StudyConfig{};
  c.manifest = j.at("manifest").get<std::string>();
  c.selection_seed = j.value("selection_seed", c.selection_seed);
  c.levels = j.value("levels", c.levels);
  c.per_condition = j.value("per_condition", c.per_condition);
  c.log_dir = j.value("log_dir", c.log_dir.string());
  c.static_dir = j.value("static_dir", std::string{});
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  if (j.contains("window")) {
    const auto& w = j.at("window");
    if (w.is_array())
      c.window = {w.at(0).get<double>(), w.at(1).get<double>()};
    else
      c.window = {w.value("lo", c.window.lo), w.value("hi", c.window.hi)};
  }
  if (j.contains("viewing")) c.viewing = j.at("viewing").get<ViewingConfig>();
}

StudyConfig load_study_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io, "cannot open study config '" + path.string() + "'");
  StudyConfig c;
  try {
    c = json::parse(is).get<StudyConfig>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  const auto resolve = [&](const fs::path& p) { return p.empty() || p.is_absolute() ? p : base / p; };
  c.manifest = resolve(c.manifest);
  c.log_dir = resolve(c.log_dir);
  c.static_dir = resolve(c.static_dir);
  return c;
}

std::vector<std::size_t> select_study_stacks(const DatasetManifest& m, std::span<const int> levels,
                                             std::size_t per_condition, std::uint64_t seed) {
  std::vector<std::size_t> out;
  for (const int level : levels) {
    for (const Label label : {Label::lesion, Label::healthy}) {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < m.entries.size(); ++i)
        if (m.entries[i].complexity == level && m.entries[i].label == label) pool.push_back(i);
      std::sort(pool.begin(), pool.end(), [&](auto a, auto b) { return m.entries[a].id < m.entries[b].id; });
      if (pool.size() < per_condition) {
        throw Error(ErrorCode::validation, "condition {" + to_string(label) + ", complexity " + std::to_string(level) +
                                               "} has " + std::to_string(pool.size()) + " stacks, needs " +
                                               std::to_string(per_condition));
      }
      const auto stream = static_cast<std::uint64_t>(level) * 2 + (label == Label::lesion);
      shuffle(std::span<std::size_t>(pool), seed, stream);
      out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per_condition));
    }
  }
  return out;
}

std::vector<std::size_t> presentation_order(std::size_t count, std::uint64_t seed, const std::string& observer_id) {
  return permutation(count, mix64(seed, fnv1a64(observer_id)));
}

json analyze_score_logs(std::span<const fs::path> logs, std::vector<std::string>* warnings) {
  std::map<std::string, std::vector<ScoreRecord>> by_observer;
  for (const auto& log : logs)
    for (auto& r : read_score_log(log)) by_observer[r.observer].push_back(std::move(r));
  json out = json::object();
  for (const auto& [observer, records] : by_observer) {
    json jo;
    const bool ratings =
        std::all_of(records.begin(), records.end(), [](const auto& r) { return is_human_score(r.score); });
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> per_level;
    for (const auto& r : records)
      (r.label == Label::lesion ? per_level[r.complexity].second : per_level[r.complexity].first).push_back(r.score);
    if (ratings) {
      const auto pc = percent_correct(records);
      for (const auto& [level, frac] : pc.by_level) {
        const auto& [hits, n] = pc.counts.at(level);
        jo["percent_correct"][std::to_string(level)] = {{"fraction", frac}, {"hits", hits}, {"lesion_stacks", n}};
      }
      if (warnings)
        for (const auto& w : pc.warnings) warnings->push_back((observer.empty() ? "unknown" : observer) + ": " + w);
    }
    for (const auto& [level, scores] : per_level) {
      if (scores.first.empty() || scores.second.empty()) continue;
      const auto a = auc(scores.first, scores.second, 2000, 1);
      jo["auc"][std::to_string(level)] = {{"auc", a.auc}, {"ci_low", a.ci_low}, {"ci_high", a.ci_high}};
    }
    jo["records"] = records.size();
    out[observer.empty() ? "unknown" : observer] = std::move(jo);
  }
  return out;
}

void to_json(json& j, const SessionResults& r) {
  j = json{{"session", r.session}, {"observer_id", r.observer_id}, {"partial", r.partial},
           {"scored", r.scored},   {"total", r.total}};
  if (!r.percent_correct.by_level.empty()) {
    json pc = json::object();
    for (const auto& [level, frac] : r.percent_correct.by_level) {
      const auto& [hits, n] = r.percent_correct.counts.at(level);
      pc[std::to_string(level)] = {{"fraction", frac}, {"hits", hits}, {"lesion_stacks", n}};
    }
    j["percent_correct"] = std::move(pc);
  }
  if (!r.percent_correct.warnings.empty()) j["warnings"] = r.percent_correct.warnings;
  j["records"] = r.records;
}

struct StudyService::Session {
  std::string id;
  std::string observer_id;
  std::string created_at;
  std::vector<std::size_t> order;  // indices into selection_
  std::vector<ScoreRecord> records;
  fs::path log;
  mutable std::mutex mutex;

  std::size_t cursor() const { return records.size(); }
  bool complete() const { return records.size() == order.size(); }
};

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Appends one line and forces it to disk before returning.
void append_line(const fs::path& path, const std::string& line) {
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (!f) throw Error(ErrorCode::io, "cannot open log '" + path.string() + "'");
  const std::string text = line + "\n";
  const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size() && std::fflush(f) == 0 &&
                  ::fsync(::fileno(f)) == 0;
  std::fclose(f);
  if (!ok) throw Error(ErrorCode::io, "append to log '" + path.string() + "' failed");
}

}  // namespace

StudyService::StudyService(StudyConfig config) : config_(std::move(config)) {
  dataset_ = Dataset::open(config_.manifest);
  viewing_ = config_.viewing.value_or(dataset_.manifest().viewing);
  validate(viewing_);
  if (!(config_.window.hi > config_.window.lo)) throw Error(ErrorCode::validation, "display window requires hi > lo");
  selection_ = select_study_stacks(dataset_.manifest(), config_.levels, config_.per_condition, config_.selection_seed);
  for (const auto e : selection_) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64,
                  mix64(config_.selection_seed, fnv1a64(dataset_.manifest().entries[e].id)));
    token_to_entry_[buf] = e;
    entry_to_token_[e] = buf;
  }
  fs::create_directories(config_.log_dir);
  std::vector<fs::path> logs;
  for (const auto& f : fs::directory_iterator(config_.log_dir))
    if (f.path().extension() == ".jsonl") logs.push_back(f.path());
  std::sort(logs.begin(), logs.end());
  for (const auto& log : logs) replay(log);
}

StudyService::~StudyService() = default;

void StudyService::replay(const fs::path& log) {
  std::ifstream is(log, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  is.close();
  // A crash can leave a partial trailing line; drop it so appends stay well-formed.
  const auto last_nl = content.rfind('\n');
  const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (keep != content.size()) {
    fs::resize_file(log, keep);
    content.resize(keep);
  }
  auto session = std::make_unique<Session>();
  session->log = log;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start < content.size()) {
    const auto end = content.find('\n', start);
    const std::string line = content.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::validation, log.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (j.value("type", std::string{}) == "session") {
      session->id = j.at("session").get<std::string>();
      session->observer_id = j.at("observer_id").get<std::string>();
      session->created_at = j.value("created_at", std::string{});
      if (j.at("selection_seed").get<std::uint64_t>() != config_.selection_seed)
        throw Error(ErrorCode::conflict, log.string() + " was recorded with a different selection seed");
      session->order = presentation_order(selection_.size(), config_.selection_seed, session->observer_id);
      continue;
    }
    if (session->id.empty()) throw Error(ErrorCode::validation, log.string() + ": score before session header");
    auto record = j.get<ScoreRecord>();
    if (session->complete())
      throw Error(ErrorCode::validation, log.string() + ":" + std::to_string(lineno) + ": more scores than stacks");
    const auto expected = dataset_.manifest().entries[selection_[session->order[session->cursor()]]].id;
    if (record.stack_id != expected) {
      throw Error(ErrorCode::out_of_order, log.string() + ":" + std::to_string(lineno) + ": expected stack " +
                                               expected + ", found " + record.stack_id);
    }
    session->records.push_back(std::move(record));
  }
  if (session->id.empty()) return;
  const auto digits = session->id.find_first_of("0123456789");
  if (digits != std::string::npos)
    next_session_ = std::max(next_session_, std::stoul(session->id.substr(digits)) + 1);
  sessions_[session->id] = std::move(session);
}

std::vector<std::string> StudyService::selected_ids() const {
  std::vector<std::string> ids;
  for (const auto e : selection_) ids.push_back(dataset_.manifest().entries[e].id);
  return ids;
}

std::string StudyService::token_for(const std::string& stack_id) const {
  for (const auto& [entry, token] : entry_to_token_)
    if (dataset_.manifest().entries[entry].id == stack_id) return token;
  throw Error(ErrorCode::not_found, "stack '" + stack_id + "' is not part of the study");
}

StudyService::Session& StudyService::find(const std::string& sid) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(sid);
  if (it == sessions_.end()) throw Error(ErrorCode::not_found, "unknown session '" + sid + "'");
  return *it->second;
}

json StudyService::create_session(const std::string& observer_id) {
  if (observer_id.empty()) throw Error(ErrorCode::validation, "observer_id is required");
  auto session = std::make_unique<Session>();
  session->observer_id = observer_id;
  session->created_at = utc_now();
  session->order = presentation_order(selection_.size(), config_.selection_seed, observer_id);
  std::unique_lock lock(sessions_mutex_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%04zu", next_session_++);
  session->id = buf;
  session->log = config_.log_dir / (session->id + ".jsonl");
  append_line(session->log, json{{"type", "session"},
                                 {"session", session->id},
                                 {"observer_id", observer_id},
                                 {"selection_seed", config_.selection_seed},
                                 {"created_at", session->created_at},
                                 {"total", selection_.size()}}
                                .dump());
  const std::string sid = session->id;
  sessions_[sid] = std::move(session);
  lock.unlock();
  return this->session(sid);
}

json StudyService::session(const std::string& sid) const {
  const Session& s = find(sid);
  std::lock_guard lock(s.mutex);
  return json{{"session", s.id},          {"observer_id", s.observer_id}, {"created_at", s.created_at},
              {"position", s.cursor()},    {"total", s.order.size()},     {"complete", s.complete()}};
}

json StudyService::next(const std::string& sid) const {
  const Session& s = find(sid);
  std::lock_guard lock(s.mutex);
  json j{{"session", s.id}, {"position", s.cursor()}, {"total", s.order.size()}, {"done", s.complete()}};
  if (s.complete()) return j;
  const auto entry = selection_[s.order[s.cursor()]];
  const auto& dims = dataset_.manifest().entries[entry].dims;
  const auto& token = entry_to_token_.at(entry);
  j["stack"] = token;
  j["nx"] = dims.nx;
  j["ny"] = dims.ny;
  j["nz"] = dims.nz;
  j["slices_per_second"] = viewing_.slices_per_second;
  j["loops_per_presentation"] = 2;
  j["pixels_per_degree"] = viewing_.pixels_per_degree;
  j["slice_url"] = "/api/stacks/" + token + "/slices/{k}.png";
  return j;
}

json StudyService::record_score(const ScoreSubmission& sub) {
  Session& s = find(sub.session);
  if (!is_human_score(sub.score))
    throw Error(ErrorCode::validation, "score must be one of 0, 1, 2, 3");
  if (sub.presentations < 1) throw Error(ErrorCode::validation, "presentations must be >= 1");
  if (!(sub.elapsed_ms >= 0)) throw Error(ErrorCode::validation, "elapsed_ms must be >= 0");
  std::lock_guard lock(s.mutex);
  const auto it = token_to_entry_.find(sub.stack);
  if (it == token_to_entry_.end()) throw Error(ErrorCode::not_found, "unknown stack '" + sub.stack + "'");
  const auto& entry = dataset_.manifest().entries[it->second];
  for (const auto& r : s.records)
    if (r.stack_id == entry.id) throw Error(ErrorCode::conflict, "stack already scored in this session");
  if (s.complete()) throw Error(ErrorCode::conflict, "session is complete");
  if (selection_[s.order[s.cursor()]] != it->second)
    throw Error(ErrorCode::out_of_order, "score does not target the session's current stack");

  ScoreRecord record{entry.id, entry.label, entry.complexity, sub.score, s.observer_id, sub.presentations,
                     sub.elapsed_ms, s.id};
  json line = record;
  line["type"] = "score";
  append_line(s.log, line.dump());
  s.records.push_back(std::move(record));
  return json{{"accepted", true}, {"position", s.cursor()}, {"remaining", s.order.size() - s.cursor()},
              {"done", s.complete()}};
}

SessionResults StudyService::session_results(const std::string& sid) const {
  const Session& s = find(sid);
  std::lock_guard lock(s.mutex);
  SessionResults r;
  r.session = s.id;
  r.observer_id = s.observer_id;
  r.partial = !s.complete();
  r.scored = s.records.size();
  r.total = s.order.size();
  r.records = s.records;
  if (!s.records.empty()) r.percent_correct = percent_correct(s.records, config_.levels);
  return r;
}

json StudyService::results_view(const std::string& sid) const {
  const auto r = session_results(sid);
  if (r.partial) return json{{"session", r.session}, {"partial", true}, {"scored", r.scored}, {"total", r.total}};
  return r;
}

std::vector<std::string> StudyService::session_order(const std::string& sid) const {
  const Session& s = find(sid);
  std::vector<std::string> ids;
  for (const auto k : s.order) ids.push_back(dataset_.manifest().entries[selection_[k]].id);
  return ids;
}

std::shared_ptr<const ImageStack> StudyService::stack(std::size_t entry) const {
  std::lock_guard lock(cache_mutex_);
  auto& slot = cache_[entry];
  if (!slot) slot = std::make_shared<const ImageStack>(dataset_.load(dataset_.manifest().entries[entry]));
  return slot;
}

std::vector<std::uint8_t> StudyService::slice(const std::string& token, std::size_t index,
                                              std::optional<DisplayWindow> window) const {
  const auto it = token_to_entry_.find(token);
  if (it == token_to_entry_.end()) throw Error(ErrorCode::not_found, "unknown stack '" + token + "'");
  return slice_png(*stack(it->second), index, window.value_or(config_.window));
}

}  // namespace hvsobs
