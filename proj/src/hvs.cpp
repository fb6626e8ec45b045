#include "hvsobs/hvs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "hvsobs/error.hpp"
#include "hvsobs/random.hpp"

namespace hvsobs {

using nlohmann::json;

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

void validate(const CsfParams& p) {
  if (!(p.v_min > 0) || !(p.v_max > p.v_min))
    throw Error(ErrorCode::invalid_argument, "CSF velocity range requires 0 < v_min < v_max");
  if (!(p.s_floor > 0)) throw Error(ErrorCode::invalid_argument, "CSF s_floor must be > 0");
}

void validate(const HvsConfig& c) {
  validate(c.csf);
  if (!(c.k >= 0)) throw Error(ErrorCode::invalid_argument, "Crozier coefficient k must be >= 0");
  if (!(c.alpha_max_deg > 0)) throw Error(ErrorCode::invalid_argument, "alpha_max_deg must be > 0");
  if (!(c.beta > 0)) throw Error(ErrorCode::invalid_argument, "psychometric beta must be > 0");
  if (!(c.decay >= 0)) throw Error(ErrorCode::invalid_argument, "masking decay must be >= 0");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::MC: return "MC";
    case Method::PM: return "PM";
    case Method::LF: return "LF";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  if (text == "MC") return Method::MC;
  if (text == "PM") return Method::PM;
  if (text == "LF") return Method::LF;
  throw Error(ErrorCode::validation, "unknown perceived-amplitude method '" + text + "' (expected MC, PM or LF)");
}

void to_json(json& j, const HvsConfig& c) {
  j = json{{"csf",
            {{"model", "kelly"}, {"v_min", c.csf.v_min}, {"v_max", c.csf.v_max}, {"s_floor", c.csf.s_floor}}},
           {"masking", c.masking},
           {"k", c.k},
           {"alpha_max_deg", c.alpha_max_deg},
           {"decay", c.decay},
           {"beta", c.beta},
           {"method", to_string(c.method)},
           {"mc_seed", c.mc_seed},
           {"mn_semantics", c.mn_semantics == MnSemantics::power ? "power" : "amplitude"}};
}

void from_json(const json& j, HvsConfig& c) {
  c = HvsConfig{};
  if (j.contains("csf")) {
    const auto& p = j.at("csf");
    if (p.value("model", std::string("kelly")) != "kelly")
      throw Error(ErrorCode::validation, "only the 'kelly' CSF model is available");
    c.csf.v_min = p.value("v_min", c.csf.v_min);
    c.csf.v_max = p.value("v_max", c.csf.v_max);
    c.csf.s_floor = p.value("s_floor", c.csf.s_floor);
  }
  c.masking = j.value("masking", c.masking);
  c.k = j.value("k", c.k);
  c.alpha_max_deg = j.value("alpha_max_deg", c.alpha_max_deg);
  c.decay = j.value("decay", c.decay);
  c.beta = j.value("beta", c.beta);
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  c.mc_seed = j.value("mc_seed", c.mc_seed);
  const auto sem = j.value("mn_semantics", std::string("amplitude"));
  if (sem != "amplitude" && sem != "power")
    throw Error(ErrorCode::validation, "mn_semantics must be 'amplitude' or 'power'");
  c.mn_semantics = sem == "power" ? MnSemantics::power : MnSemantics::amplitude;
}

double stcsf(double rho, double velocity, const CsfParams& p) {
  if (!(rho >= 0)) throw Error(ErrorCode::invalid_argument, "spatial frequency must be >= 0");
  double v = std::isfinite(velocity) ? velocity : p.v_min;
  v = std::clamp(v, p.v_min, p.v_max);
  const double kv = 6.1 + 7.3 * std::pow(std::abs(std::log10(v / 3.0)), 3.0);
  const double rho_max = 45.9 / (v + 2.0);
  const double two_pi_rho = 2.0 * kPi * rho;
  const double g = kv * v * two_pi_rho * two_pi_rho * std::exp(-4.0 * kPi * rho / rho_max);
  return std::max(g, p.s_floor);
}

std::vector<double> csf_threshold_map(const FreqCoords& coords, const CsfParams& params) {
  validate(params);
  const Dims& d = coords.dims();
  std::vector<double> m_t(d.size());
  for (std::size_t w = 0; w < d.nz; ++w)
    for (std::size_t v = 0; v < d.ny; ++v)
      for (std::size_t u = 0; u < d.nx; ++u)
        m_t[d.index(u, v, w)] = 1.0 / stcsf(coords.rho(u, v), coords.retinal_velocity(u, v, w), params);
  m_t[0] = kInf;
  return m_t;
}

double mask_weight(double u, double v, double u2, double v2, const HvsConfig& c) {
  const double norm2 = u * u + v * v;
  if (norm2 == 0.0) throw Error(ErrorCode::invalid_argument, "masking weight is undefined for a DC maskee");
  if (u2 == 0.0 && v2 == 0.0) throw Error(ErrorCode::invalid_argument, "DC is not a masker");
  // Axial angle between the two orientations, in [0, 90] degrees.
  const double alpha = std::atan2(std::abs(u * v2 - v * u2), std::abs(u * u2 + v * v2)) * 180.0 / kPi;
  if (alpha > c.alpha_max_deg) return 0.0;
  const double ratio = std::sqrt(((u - u2) * (u - u2) + (v - v2) * (v - v2)) / norm2);
  const double l = std::log1p(ratio);
  return std::exp(-c.decay * l * l);
}

double mask_weight(long u, long v, long u2, long v2, const FreqCoords& coords, const HvsConfig& c) {
  const Dims& d = coords.dims();
  const auto fu = [&](long k) { return coords.fx(unwrap_index(k, d.nx)); };
  const auto fv = [&](long k) { return coords.fy(unwrap_index(k, d.ny)); };
  return mask_weight(fu(u), fv(v), fu(u2), fv(v2), c);
}

MaskingKernel::MaskingKernel(const FreqCoords& coords, const HvsConfig& config) {
  const Dims& d = coords.dims();
  const std::size_t n = d.slice_size();
  std::vector<double> fx(n), fy(n);
  for (std::size_t v = 0; v < d.ny; ++v)
    for (std::size_t u = 0; u < d.nx; ++u) {
      fx[v * d.nx + u] = coords.fx(u);
      fy[v * d.nx + u] = coords.fy(v);
    }
  sums_.assign(n, 0.0);
  offsets_.assign(2, 0);  // row 0 (DC) has no terms
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 1; j < n; ++j) {
      const double w = mask_weight(fx[i], fy[i], fx[j], fy[j], config);
      if (w > 0.0) {
        terms_.push_back({static_cast<std::uint32_t>(j), w});
        sums_[i] += w;
      }
    }
    offsets_.push_back(terms_.size());
  }
}

std::vector<double> masker_power_map(std::span<const double> s, const MaskingKernel& kernel, MnSemantics semantics) {
  if (s.size() != kernel.size())
    throw Error(ErrorCode::length_mismatch, "spatial spectrum size does not match masking kernel");
  const double s00 = s[0];
  if (!(s00 > 0.0)) throw Error(ErrorCode::invalid_argument, "masker power requires S(0,0) > 0");
  std::vector<double> m_n(s.size(), 0.0);
  for (std::size_t i = 1; i < s.size(); ++i) {
    const double wsum = kernel.weight_sum(i);
    if (wsum == 0.0) continue;
    double acc = 0.0;
    for (const auto& t : kernel.terms(i)) acc += t.weight * s[t.masker];
    const double value = acc / (s00 * wsum);
    m_n[i] = semantics == MnSemantics::power ? std::sqrt(value) : value;
  }
  return m_n;
}

std::vector<double> masker_power_map(std::span<const double> s, const FreqCoords& coords, const HvsConfig& config) {
  return masker_power_map(s, MaskingKernel(coords, config), config.mn_semantics);
}

double masked_threshold(double m_t, double m_n, double k) {
  if (m_t < 0 || m_n < 0 || k < 0 || std::isnan(m_t) || std::isnan(m_n) || std::isnan(k))
    throw Error(ErrorCode::invalid_argument, "masked threshold inputs must be non-negative");
  if (std::isinf(m_t)) return kInf;
  return std::sqrt(m_t * m_t + k * k * m_n * m_n);
}

double psychometric(double x, double beta) {
  if (!(x > 0.0)) return 0.0;
  return 1.0 - std::exp2(-std::pow(x, beta));
}

Perceiver::Perceiver(Dims dims, ViewingConfig viewing, HvsConfig config)
    : dims_(dims), viewing_(viewing), config_(config), coords_(dims, viewing) {
  validate(dims_);
  validate(viewing_);
  validate(config_);
  if (config_.method == Method::LF) {
    lf_gain_.resize(dims_.size());
    double peak = 0.0;
    for (std::size_t w = 0; w < dims_.nz; ++w)
      for (std::size_t v = 0; v < dims_.ny; ++v)
        for (std::size_t u = 0; u < dims_.nx; ++u) {
          const double s = stcsf(coords_.rho(u, v), coords_.retinal_velocity(u, v, w), config_.csf);
          lf_gain_[dims_.index(u, v, w)] = s;
          if (u + v + w > 0) peak = std::max(peak, s);
        }
    for (auto& g : lf_gain_) g /= peak;
    lf_gain_[0] = 1.0;
  } else {
    m_t_ = csf_threshold_map(coords_, config_.csf);
    if (config_.masking) kernel_ = std::make_unique<MaskingKernel>(coords_, config_);
  }
}

Volume Perceiver::operator()(const ImageStack& stack) const { return run(stack, nullptr); }

Volume Perceiver::trace(const ImageStack& stack, ThresholdMaps& maps) const { return run(stack, &maps); }

Volume Perceiver::run(const ImageStack& stack, ThresholdMaps* maps) const {
  if (!(stack.dims == dims_)) throw Error(ErrorCode::invalid_argument, "stack '" + stack.id + "' has unexpected dims");
  auto freq = fft3(to_luminance(stack, viewing_));
  const std::size_t n = dims_.size();
  const std::size_t plane = dims_.slice_size();

  std::vector<double> gain(n, 1.0);
  std::vector<double> m, m_n, m_masked;
  if (config_.method == Method::LF) {
    gain = lf_gain_;
  } else {
    m = modulation(freq);
    if (config_.masking) m_n = masker_power_map(spatial_spectrum(freq), *kernel_, config_.mn_semantics);
    if (maps) m_masked.assign(n, kInf);
    const CounterRng rng(mix64(config_.mc_seed, fnv1a64(stack.id)));
    for (std::size_t i = 1; i < n; ++i) {
      const std::size_t twin = freq.conjugate_index(i);
      if (twin < i) continue;  // decided on the canonical member of the pair
      const double threshold = config_.masking ? masked_threshold(m_t_[i], m_n[i % plane], config_.k) : m_t_[i];
      const double p = psychometric(m[i] / threshold, config_.beta);
      double g = p;
      if (config_.method == Method::MC) g = rng.uniform(i) <= p ? 1.0 : 0.0;
      gain[i] = gain[twin] = g;
      if (maps) m_masked[i] = m_masked[twin] = threshold;
    }
  }
  for (std::size_t i = 0; i < n; ++i) freq.bins[i] *= gain[i];
  if (maps) {
    maps->m = std::move(m);
    maps->m_t = config_.method == Method::LF ? std::vector<double>{} : m_t_;
    maps->m_n = std::move(m_n);
    maps->m_t_masked = std::move(m_masked);
    maps->gain = std::move(gain);
  }
  return ifft3(freq);
}

Volume perceive(const ImageStack& stack, const ViewingConfig& viewing, const HvsConfig& config) {
  return Perceiver(stack.dims, viewing, config)(stack);
}

}  // namespace hvsobs
