#include "hvsobs/observer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hvsobs/error.hpp"
#include "hvsobs/random.hpp"

namespace hvsobs {

using nlohmann::json;

ChannelSet lg_channels(std::size_t count, double width, std::size_t nx, std::size_t ny) {
  if (count < 1) throw Error(ErrorCode::invalid_argument, "at least one channel is required");
  if (!(width > 0)) throw Error(ErrorCode::invalid_argument, "channel width must be > 0");
  if (nx == 0 || ny == 0) throw Error(ErrorCode::invalid_argument, "channel grid must be non-empty");
  ChannelSet cs{count, width, nx, ny, std::vector<double>(count * nx * ny)};
  const double cx = (static_cast<double>(nx) - 1.0) / 2.0;
  const double cy = (static_cast<double>(ny) - 1.0) / 2.0;
  const double a2 = width * width;
  for (std::size_t j = 0; j < count; ++j) {
    for (std::size_t y = 0; y < ny; ++y) {
      for (std::size_t x = 0; x < nx; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        const double r2 = dx * dx + dy * dy;
        cs.matrix[j * nx * ny + y * nx + x] = std::sqrt(2.0) / width * std::exp(-std::numbers::pi * r2 / a2) *
                                              std::laguerre(static_cast<unsigned>(j), 2.0 * std::numbers::pi * r2 / a2);
      }
    }
  }
  return cs;
}

std::vector<double> channelize(const Volume& stack, const ChannelSet& channels) {
  const Dims& d = stack.dims;
  if (d.nx != channels.nx || d.ny != channels.ny)
    throw Error(ErrorCode::invalid_argument, "stack slice size does not match channel grid");
  if (stack.data.size() != d.size()) throw Error(ErrorCode::length_mismatch, "volume size does not match dims");
  std::vector<double> out(channels.count * d.nz);
  const std::size_t plane = d.slice_size();
  for (std::size_t z = 0; z < d.nz; ++z) {
    const double* slice = stack.data.data() + z * plane;
    for (std::size_t j = 0; j < channels.count; ++j) {
      const auto row = channels.row(j);
      out[z * channels.count + j] = std::inner_product(row.begin(), row.end(), slice, 0.0);
    }
  }
  return out;
}

HotellingTemplate train_mscho(std::span<const std::vector<double>> features, std::span<const Label> labels,
                              double shrinkage) {
  if (features.size() != labels.size())
    throw Error(ErrorCode::invalid_argument, "feature and label counts differ");
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0))
    throw Error(ErrorCode::invalid_argument, "shrinkage must lie in [0,1]");
  if (features.empty()) throw Error(ErrorCode::invalid_argument, "no training samples");
  const std::size_t dim = features.front().size();
  std::size_t n[2] = {0, 0};
  Eigen::VectorXd mean[2] = {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim)};
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != dim) throw Error(ErrorCode::invalid_argument, "inconsistent feature dimension");
    const int c = labels[i] == Label::lesion ? 1 : 0;
    mean[c] += Eigen::Map<const Eigen::VectorXd>(features[i].data(), static_cast<Eigen::Index>(dim));
    ++n[c];
  }
  if (n[0] < 2 || n[1] < 2)
    throw Error(ErrorCode::invalid_argument, "training needs at least two samples per class (healthy " +
                                                 std::to_string(n[0]) + ", lesion " + std::to_string(n[1]) + ")");
  mean[0] /= static_cast<double>(n[0]);
  mean[1] /= static_cast<double>(n[1]);

  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(dim, dim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const int c = labels[i] == Label::lesion ? 1 : 0;
    const Eigen::VectorXd r =
        Eigen::Map<const Eigen::VectorXd>(features[i].data(), static_cast<Eigen::Index>(dim)) - mean[c];
    scatter.selfadjointView<Eigen::Lower>().rankUpdate(r);
  }
  Eigen::MatrixXd cov = scatter.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n[0] + n[1] - 2);
  Eigen::MatrixXd reg = (1.0 - shrinkage) * cov;
  reg.diagonal() += shrinkage * cov.diagonal();

  const Eigen::VectorXd diff = mean[1] - mean[0];
  Eigen::LLT<Eigen::MatrixXd> llt(reg);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-13)) {
    throw Error(ErrorCode::singular, "feature covariance is singular (shrinkage " + std::to_string(shrinkage) +
                                         "); increase shrinkage or the number of training samples");
  }
  Eigen::VectorXd w = llt.solve(diff);
  // S is positive definite so w'diff >= 0 in exact arithmetic.
  if (w.dot(diff) < 0) w = -w;

  HotellingTemplate t;
  t.weights.assign(w.data(), w.data() + w.size());
  t.mean_diff.assign(diff.data(), diff.data() + diff.size());
  t.shrinkage = shrinkage;
  t.n_healthy = n[0];
  t.n_lesion = n[1];
  return t;
}

double score(const HotellingTemplate& tmpl, std::span<const double> features) {
  if (features.size() != tmpl.weights.size())
    throw Error(ErrorCode::invalid_argument, "feature dimension " + std::to_string(features.size()) +
                                                 " does not match template " + std::to_string(tmpl.weights.size()));
  return std::inner_product(tmpl.weights.begin(), tmpl.weights.end(), features.begin(), 0.0);
}

double auc_statistic(std::span<const double> healthy, std::span<const double> lesion) {
  if (healthy.empty() || lesion.empty()) throw Error(ErrorCode::invalid_argument, "AUC needs both classes");
  // Midranks over the pooled sample.
  struct Item {
    double value;
    bool lesion;
  };
  std::vector<Item> all;
  all.reserve(healthy.size() + lesion.size());
  for (const double h : healthy) all.push_back({h, false});
  for (const double l : lesion) all.push_back({l, true});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.value < b.value; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t lesions = 0;
    while (j < all.size() && all[j].value == all[i].value) lesions += all[j++].lesion;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    rank_sum += midrank * static_cast<double>(lesions);
    i = j;
  }
  const double nl = static_cast<double>(lesion.size());
  const double nh = static_cast<double>(healthy.size());
  return (rank_sum - nl * (nl + 1.0) / 2.0) / (nl * nh);
}

AucResult auc(std::span<const double> healthy, std::span<const double> lesion, std::size_t resamples,
              std::uint64_t seed) {
  AucResult r;
  r.auc = auc_statistic(healthy, lesion);
  r.ci_low = r.ci_high = r.auc;
  if (resamples == 0) return r;
  const CounterRng rng(seed);
  std::vector<double> stats(resamples);
  std::vector<double> h(healthy.size()), l(lesion.size());
  for (std::size_t b = 0; b < resamples; ++b) {
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = healthy[rng.below(h.size(), b, 2 * i)];
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = lesion[rng.below(l.size(), b, 2 * i + 1)];
    stats[b] = auc_statistic(h, l);
  }
  std::sort(stats.begin(), stats.end());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(resamples - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, resamples - 1);
    return stats[lo] + (pos - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
  };
  r.ci_low = quantile(0.025);
  r.ci_high = quantile(0.975);
  return r;
}

void to_json(json& j, const ScoreRecord& r) {
  j = json{{"stack_id", r.stack_id},       {"label", to_string(r.label)},     {"complexity", r.complexity},
           {"score", r.score},             {"observer", r.observer},          {"presentations", r.presentations},
           {"elapsed_ms", r.elapsed_ms}};
  if (!r.session.empty()) j["session"] = r.session;
}

void from_json(const json& j, ScoreRecord& r) {
  r = ScoreRecord{};
  r.stack_id = j.at("stack_id").get<std::string>();
  r.label = parse_label(j.at("label").get<std::string>());
  r.complexity = j.at("complexity").get<int>();
  r.score = j.at("score").get<double>();
  r.observer = j.value("observer", std::string{});
  r.presentations = j.value("presentations", std::size_t{0});
  r.elapsed_ms = j.value("elapsed_ms", 0.0);
  r.session = j.value("session", std::string{});
}

bool is_human_score(double s) { return s == 0.0 || s == 1.0 || s == 2.0 || s == 3.0; }

PercentCorrect percent_correct(std::span<const ScoreRecord> records, std::span<const int> levels) {
  PercentCorrect out;
  std::set<int> seen(levels.begin(), levels.end());
  for (const auto& r : records) {
    if (!is_human_score(r.score))
      throw Error(ErrorCode::validation, "record for '" + r.stack_id + "' has non-rating score " +
                                             std::to_string(r.score));
    seen.insert(r.complexity);
    if (r.label != Label::lesion) continue;
    auto& [hits, total] = out.counts[r.complexity];
    ++total;
    if (r.score >= 2.0) ++hits;
  }
  for (const int level : seen) {
    if (!out.counts.contains(level))
      out.warnings.push_back("no lesion records at complexity " + std::to_string(level) + "; level omitted");
  }
  for (const auto& [level, c] : out.counts)
    out.by_level[level] = static_cast<double>(c.first) / static_cast<double>(c.second);
  return out;
}

std::vector<ScoreRecord> read_score_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io, "cannot open score log '" + path.string() + "'");
  std::vector<ScoreRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      if (j.contains("type") && j.at("type") != "score") continue;
      out.push_back(j.get<ScoreRecord>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::validation, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void append_score_log(const std::filesystem::path& path, std::span<const ScoreRecord> records) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw Error(ErrorCode::io, "cannot open score log '" + path.string() + "'");
  for (const auto& r : records) os << json(r).dump() << '\n';
  os.flush();
  if (!os) throw Error(ErrorCode::io, "write failed for '" + path.string() + "'");
}

}  // namespace hvsobs
