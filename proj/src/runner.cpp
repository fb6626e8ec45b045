#include "hvsobs/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hvsobs/error.hpp"
#include "hvsobs/observer.hpp"
#include "hvsobs/parallel.hpp"
#include "hvsobs/random.hpp"

namespace hvsobs {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Model m) { return m == Model::csf_only ? "csf_only" : "csf_plus_masking"; }

Model parse_model(const std::string& text) {
  if (text == "csf_only") return Model::csf_only;
  if (text == "csf_plus_masking") return Model::csf_plus_masking;
  throw Error(ErrorCode::validation, "unknown model '" + text + "' (expected csf_only or csf_plus_masking)");
}

HvsConfig ExperimentConfig::hvs_for(const Variant& v) const {
  HvsConfig h = hvs;
  h.method = v.method;
  h.masking = v.model == Model::csf_plus_masking;
  if (v.k) h.k = *v.k;
  return h;
}

void to_json(json& j, const ExperimentConfig& c) {
  json variants = json::array();
  for (const auto& v : c.variants) {
    json jv{{"model", to_string(v.model)}, {"method", to_string(v.method)}};
    if (v.k) jv["k"] = *v.k;
    if (!v.name.empty()) jv["name"] = v.name;
    variants.push_back(std::move(jv));
  }
  j = json{{"hvs", c.hvs},
           {"variants", std::move(variants)},
           {"channels", {{"count", c.channels}, {"width", c.channel_width}}},
           {"lambda", c.shrinkage},
           {"split_seed", c.split_seed},
           {"bootstrap", {{"resamples", c.bootstrap}, {"seed", c.bootstrap_seed}}},
           {"output_dir", c.output_dir.string()},
           {"record_wall_time", c.record_wall_time},
           {"write_scores", c.write_scores}};
  if (c.dataset) j["dataset"] = c.dataset->string();
  if (c.synth) j["synth"] = *c.synth;
  if (c.viewing) j["viewing"] = *c.viewing;
}

void from_json(const json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
  if (j.contains("synth")) c.synth = j.at("synth").get<SynthConfig>();
  if (!c.dataset && !c.synth) throw Error(ErrorCode::validation, "experiment config needs 'dataset' or 'synth'");
  if (j.contains("viewing")) c.viewing = j.at("viewing").get<ViewingConfig>();
  if (j.contains("hvs")) c.hvs = j.at("hvs").get<HvsConfig>();
  if (j.contains("variants")) {
    for (const auto& jv : j.at("variants")) {
      Variant v;
      v.model = parse_model(jv.at("model").get<std::string>());
      v.method = parse_method(jv.at("method").get<std::string>());
      if (jv.contains("k")) v.k = jv.at("k").get<double>();
      v.name = jv.value("name", std::string{});
      c.variants.push_back(std::move(v));
    }
  } else {
    for (const Model m : {Model::csf_only, Model::csf_plus_masking})
      for (const Method me : {Method::MC, Method::PM, Method::LF}) c.variants.push_back({m, me, std::nullopt, {}});
  }
  if (c.variants.empty()) throw Error(ErrorCode::validation, "experiment config lists no variants");
  if (j.contains("channels")) {
    c.channels = j.at("channels").value("count", c.channels);
    c.channel_width = j.at("channels").value("width", c.channel_width);
  }
  c.shrinkage = j.value("lambda", c.shrinkage);
  c.split_seed = j.value("split_seed", c.split_seed);
  if (j.contains("bootstrap")) {
    c.bootstrap = j.at("bootstrap").value("resamples", c.bootstrap);
    c.bootstrap_seed = j.at("bootstrap").value("seed", c.bootstrap_seed);
  }
  c.output_dir = j.value("output_dir", c.output_dir.string());
  c.threads = j.value("threads", c.threads);
  c.record_wall_time = j.value("record_wall_time", c.record_wall_time);
  c.write_scores = j.value("write_scores", c.write_scores);
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io, "cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, path.string() + ": " + e.what());
  }
  auto c = j.get<ExperimentConfig>();
  const auto base = path.parent_path();
  const auto resolve = [&](fs::path p) { return p.is_relative() ? base / p : p; };
  if (c.dataset) c.dataset = resolve(*c.dataset);
  if (c.synth) c.synth->out_dir = resolve(c.synth->out_dir);
  c.output_dir = resolve(c.output_dir);
  return c;
}

namespace {

// Config with file locations stripped; locations do not change the numbers.
json canonical_config(const ExperimentConfig& config) {
  json j = config;
  j.erase("output_dir");
  if (j.contains("dataset")) j["dataset"] = fs::path(j["dataset"].get<std::string>()).filename().string();
  if (j.contains("synth")) j["synth"].erase("out_dir");
  return j;
}

}  // namespace

std::string config_hash(const ExperimentConfig& config) {
  const json j = canonical_config(config);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(j.dump()));
  return buf;
}

std::string csv_row(const ResultRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%s,%d,%.6f,%.6f,%.6f,%zu,%zu,%lld", r.model.c_str(), r.method.c_str(),
                r.complexity, r.auc, r.ci_low, r.ci_high, r.n_train, r.n_test, r.ms);
  return buf;
}

std::string to_csv(const ResultsTable& t) {
  std::string out = std::string(kResultsCsvHeader) + "\n";
  for (const auto& r : t.rows) out += csv_row(r) + "\n";
  return out;
}

ResultsTable parse_results_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kResultsCsvHeader)
    throw Error(ErrorCode::validation, "results CSV header must be '" + std::string(kResultsCsvHeader) + "'");
  ResultsTable t;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 9) throw Error(ErrorCode::validation, "results CSV line " + std::to_string(lineno) + " has " +
                                                              std::to_string(f.size()) + " fields");
    try {
      ResultRow r{f[0], f[1], std::stoi(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                  std::stoul(f[6]), std::stoul(f[7]), std::stoll(f[8])};
      t.rows.push_back(std::move(r));
    } catch (const std::exception&) {
      throw Error(ErrorCode::validation, "results CSV line " + std::to_string(lineno) + " is malformed");
    }
  }
  return t;
}

ResultsTable read_results(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io, "cannot open results '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  if (path.extension() != ".json") return parse_results_csv(ss.str());
  const auto j = json::parse(ss.str());
  ResultsTable t;
  t.config_hash = j.value("config_hash", std::string{});
  for (const auto& jr : j.at("rows")) {
    t.rows.push_back({jr.at("model"), jr.at("method"), jr.at("complexity"), jr.at("auc"), jr.at("ci_low"),
                      jr.at("ci_high"), jr.at("n_train"), jr.at("n_test"), jr.value("ms", 0LL)});
  }
  return t;
}

namespace {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Twins stay together so a background never appears on both sides of the
// split; unpaired entries are split per class.
Split split_level(const DatasetManifest& m, const std::vector<std::size_t>& members, std::uint64_t seed, int level) {
  Split s;
  const bool paired = std::all_of(members.begin(), members.end(), [&](auto i) { return !m.entries[i].pair.empty(); });
  std::vector<std::vector<std::size_t>> groups;
  if (paired) {
    std::map<std::string, std::vector<std::size_t>> by_pair;
    for (const auto i : members) by_pair[m.entries[i].pair].push_back(i);
    for (auto& [pair, idx] : by_pair) groups.push_back(std::move(idx));
    const auto perm = permutation(groups.size(), seed, static_cast<std::uint64_t>(level));
    for (std::size_t k = 0; k < perm.size(); ++k) {
      auto& dst = k < perm.size() / 2 ? s.train : s.test;
      for (const auto i : groups[perm[k]]) dst.push_back(i);
    }
  } else {
    for (const Label label : {Label::healthy, Label::lesion}) {
      std::vector<std::size_t> cls;
      for (const auto i : members)
        if (m.entries[i].label == label) cls.push_back(i);
      const auto perm = permutation(cls.size(), seed, static_cast<std::uint64_t>(level) * 2 + (label == Label::lesion));
      for (std::size_t k = 0; k < perm.size(); ++k) (k < perm.size() / 2 ? s.train : s.test).push_back(cls[perm[k]]);
    }
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw Error(ErrorCode::io, "write failed for '" + path.string() + "'");
}

}  // namespace

ResultsTable run_experiment(const ExperimentConfig& config) {
  if (config.variants.empty()) throw Error(ErrorCode::validation, "experiment config lists no variants");
  fs::path manifest_path;
  if (config.dataset) {
    manifest_path = *config.dataset;
  } else {
    SynthConfig sc = *config.synth;
    if (sc.threads == 0) sc.threads = config.threads;
    build_dataset(sc, config.viewing.value_or(ViewingConfig{}));
    manifest_path = sc.out_dir / "manifest.json";
  }
  const Dataset dataset = Dataset::open(manifest_path);
  const auto& manifest = dataset.manifest();
  if (manifest.entries.empty()) throw Error(ErrorCode::validation, "dataset is empty");
  const ViewingConfig viewing = config.viewing.value_or(manifest.viewing);
  const Dims dims = manifest.entries.front().dims;
  for (const auto& e : manifest.entries)
    if (!(e.dims == dims)) throw Error(ErrorCode::validation, "stack '" + e.id + "' dims differ from the dataset's");

  std::map<int, std::vector<std::size_t>> levels;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) levels[manifest.entries[i].complexity].push_back(i);
  std::map<int, Split> splits;
  for (const auto& [level, members] : levels) splits[level] = split_level(manifest, members, config.split_seed, level);

  const auto channels = lg_channels(config.channels, config.channel_width, dims.nx, dims.ny);

  ResultsTable table;
  table.config_hash = config_hash(config);
  fs::create_directories(config.output_dir);
  const auto csv_path = config.output_dir / "results.csv";
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw Error(ErrorCode::io, "cannot open '" + csv_path.string() + "' for writing");
  csv << kResultsCsvHeader << '\n' << std::flush;
  if (config.write_scores) fs::create_directories(config.output_dir / "scores");

  for (const auto& variant : config.variants) {
    const HvsConfig hvs = config.hvs_for(variant);
    const Perceiver perceiver(dims, viewing, hvs);
    const std::string method = to_string(variant.method);
    std::vector<ScoreRecord> score_log;

    for (const auto& [level, members] : levels) {
      const auto started = std::chrono::steady_clock::now();
      const auto context = [&](const std::string& id) {
        return "variant " + variant.label() + "/" + method + ", complexity " + std::to_string(level) +
               (id.empty() ? std::string{} : ", stack " + id) + ": ";
      };
      std::vector<std::vector<double>> features(members.size());
      parallel_for(members.size(), config.threads, [&](std::size_t k) {
        const auto& entry = manifest.entries[members[k]];
        try {
          features[k] = channelize(perceiver(dataset.load(entry)), channels);
        } catch (const Error& e) {
          throw Error(e.code(), context(entry.id) + e.what());
        }
      });
      std::map<std::size_t, std::size_t> slot;
      for (std::size_t k = 0; k < members.size(); ++k) slot[members[k]] = k;

      const auto& split = splits.at(level);
      std::vector<std::vector<double>> train_x;
      std::vector<Label> train_y;
      for (const auto i : split.train) {
        train_x.push_back(features[slot[i]]);
        train_y.push_back(manifest.entries[i].label);
      }
      HotellingTemplate tmpl;
      try {
        tmpl = train_mscho(train_x, train_y, config.shrinkage);
      } catch (const Error& e) {
        throw Error(e.code(), context({}) + e.what());
      }
      std::vector<double> healthy, lesion;
      for (const auto i : split.test) {
        const auto& entry = manifest.entries[i];
        const double s = score(tmpl, features[slot[i]]);
        (entry.label == Label::lesion ? lesion : healthy).push_back(s);
        if (config.write_scores)
          score_log.push_back({entry.id, entry.label, entry.complexity, s, variant.label() + "/" + method, 0, 0.0, {}});
      }
      if (healthy.empty() || lesion.empty())
        throw Error(ErrorCode::validation, context({}) + "test split lacks one of the classes");
      const auto a = auc(healthy, lesion, config.bootstrap, mix64(config.bootstrap_seed, static_cast<std::uint64_t>(level)));
      const auto elapsed =
          std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
      ResultRow row{variant.label(), method, level, a.auc, a.ci_low, a.ci_high,
                    split.train.size(), split.test.size(), config.record_wall_time ? static_cast<long long>(elapsed) : 0};
      csv << csv_row(row) << '\n' << std::flush;
      table.rows.push_back(std::move(row));
    }
    if (config.write_scores) {
      const auto path = config.output_dir / "scores" / (variant.label() + "_" + method + ".jsonl");
      std::error_code ec;
      fs::remove(path, ec);
      append_score_log(path, score_log);
    }
  }

  json out{{"config_hash", table.config_hash}, {"config", canonical_config(config)}, {"rows", json::array()}};
  for (const auto& r : table.rows) {
    out["rows"].push_back({{"model", r.model},
                           {"method", r.method},
                           {"complexity", r.complexity},
                           {"auc", r.auc},
                           {"ci_low", r.ci_low},
                           {"ci_high", r.ci_high},
                           {"n_train", r.n_train},
                           {"n_test", r.n_test},
                           {"ms", r.ms}});
  }
  if (levels.size() >= 3) {
    try {
      out["trend"] = check_trend(table);
    } catch (const Error&) {
      out["trend"] = nullptr;
    }
  }
  write_file(config.output_dir / "results.json", out.dump(2) + "\n");
  return table;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::invalid_argument, "spearman needs paired samples");
  const auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
      const double mid = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
      for (std::size_t k = i; k < j; ++k) r[order[k]] = mid;
      i = j;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i] / n;
    my += ry[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

TrendReport check_trend(const ResultsTable& results, const TrendOptions& opt) {
  std::set<int> all_levels;
  std::map<std::pair<std::string, std::string>, std::map<int, const ResultRow*>> by_variant;
  for (const auto& r : results.rows) {
    all_levels.insert(r.complexity);
    by_variant[{r.model, r.method}][r.complexity] = &r;
  }
  if (by_variant.empty()) throw Error(ErrorCode::validation, "results table is empty");
  if (all_levels.size() < 3) throw Error(ErrorCode::validation, "trend check needs at least three complexity levels");

  std::vector<std::string> missing;
  for (const auto& [key, rows] : by_variant)
    for (const int level : all_levels)
      if (!rows.contains(level)) missing.push_back(key.first + "/" + key.second + "@" + std::to_string(level));
  if (!missing.empty()) {
    std::string msg = "missing result rows:";
    for (const auto& m : missing) msg += " " + m;
    throw Error(ErrorCode::validation, msg);
  }

  TrendReport report;
  report.top_level = *all_levels.rbegin();
  for (const auto& [key, rows] : by_variant) {
    VariantTrend t{key.first, key.second, {}, {}, 0.0};
    for (const auto& [level, row] : rows) {
      t.levels.push_back(level);
      t.aucs.push_back(row->auc);
    }
    std::vector<double> lv(t.levels.begin(), t.levels.end());
    t.spearman = spearman(t.aucs, lv);
    if (t.model == "csf_plus_masking" && t.method == opt.focus_method) report.monotone_drop = t.spearman <= opt.spearman_max;
    report.variants.push_back(std::move(t));
  }

  for (const auto& [key, masked] : by_variant) {
    if (key.first != "csf_plus_masking") continue;
    const auto it = by_variant.find({"csf_only", key.second});
    if (it == by_variant.end()) continue;
    for (const int level : all_levels) {
      const auto* m = masked.at(level);
      const auto* c = it->second.at(level);
      LevelDelta d{key.second, level, m->auc - c->auc, (m->ci_high - m->ci_low) / 2.0};
      if (key.second == opt.focus_method) {
        if (level == report.top_level) report.masking_not_higher_at_top = m->auc <= c->auc + opt.slack;
        if (-d.delta > d.half_width) ++report.strictly_lower_levels;
      }
      report.deltas.push_back(d);
    }
  }
  report.masking_strictly_lower = report.strictly_lower_levels >= opt.min_strict_levels;
  return report;
}

std::string TrendReport::text() const {
  std::ostringstream os;
  char buf[160];
  os << "variant trends (Spearman of AUC vs complexity):\n";
  for (const auto& v : variants) {
    std::snprintf(buf, sizeof buf, "  %-20s %-3s  rho=%+.3f  AUC:", v.model.c_str(), v.method.c_str(), v.spearman);
    os << buf;
    for (const double a : v.aucs) {
      std::snprintf(buf, sizeof buf, " %.3f", a);
      os << buf;
    }
    os << '\n';
  }
  if (!deltas.empty()) os << "masking - csf_only AUC deltas:\n";
  for (const auto& d : deltas) {
    std::snprintf(buf, sizeof buf, "  %-3s level %d  delta=%+.4f  ci_half=%.4f\n", d.method.c_str(), d.complexity,
                  d.delta, d.half_width);
    os << buf;
  }
  os << "flag a (masking drop with complexity): " << (monotone_drop ? "pass" : "fail") << '\n';
  os << "flag b (masking <= csf_only + slack at level " << top_level << "): "
     << (masking_not_higher_at_top ? "pass" : "fail") << '\n';
  os << "masking strictly lower at " << strictly_lower_levels << " level(s): "
     << (masking_strictly_lower ? "pass" : "fail") << '\n';
  return os.str();
}

void to_json(json& j, const TrendReport& r) {
  j = json{{"top_level", r.top_level},
           {"monotone_drop", r.monotone_drop},
           {"masking_not_higher_at_top", r.masking_not_higher_at_top},
           {"strictly_lower_levels", r.strictly_lower_levels},
           {"masking_strictly_lower", r.masking_strictly_lower},
           {"variants", json::array()},
           {"deltas", json::array()}};
  for (const auto& v : r.variants)
    j["variants"].push_back({{"model", v.model}, {"method", v.method}, {"levels", v.levels}, {"auc", v.aucs}, {"spearman", v.spearman}});
  for (const auto& d : r.deltas)
    j["deltas"].push_back({{"method", d.method}, {"complexity", d.complexity}, {"delta", d.delta}, {"half_width", d.half_width}});
}

}  // namespace hvsobs
