#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hvsobs/spectral.hpp"
#include "hvsobs/stack.hpp"

namespace hvsobs {

enum class CsfModel { kelly };

struct CsfParams {
  CsfModel model = CsfModel::kelly;
  double v_min = 0.15;   // deg/s
  double v_max = 80.0;   // deg/s
  double s_floor = 1e-4;
};

// How perceived amplitudes are derived from threshold-relative modulation.
enum class Method {
  MC,  // keep each component with psychometric probability
  PM,  // scale each component by its psychometric probability
  LF,  // linear filter by normalized sensitivity
};

// Whether the masker map is the literal weighted spectrum ratio or its root.
enum class MnSemantics { amplitude, power };

struct HvsConfig {
  CsfParams csf;
  bool masking = true;  // false: thresholds are CSF-only and m_n is never formed
  double k = 3.0;       // Crozier coefficient
  double alpha_max_deg = 5.0;
  double decay = 2.2;
  double beta = 3.5;
  Method method = Method::PM;
  std::uint64_t mc_seed = 0;
  MnSemantics mn_semantics = MnSemantics::amplitude;
};

void validate(const CsfParams& params);
void validate(const HvsConfig& config);

std::string to_string(Method method);
Method parse_method(const std::string& text);

void to_json(nlohmann::json& j, const HvsConfig& c);
void from_json(const nlohmann::json& j, HvsConfig& c);

// Kelly spatio-velocity sensitivity, floored at params.s_floor.
double stcsf(double rho_cpd, double velocity, const CsfParams& params);

// m_t per 3D bin; +inf at DC.
std::vector<double> csf_threshold_map(const FreqCoords& coords, const CsfParams& params);

// Masker-to-maskee weight for spatial frequencies given in consistent units.
double mask_weight(double u, double v, double u2, double v2, const HvsConfig& config);
// Same, for signed DFT indices mapped through the viewing geometry.
double mask_weight(long u, long v, long u2, long v2, const FreqCoords& coords, const HvsConfig& config);

// Sparse table of non-zero masking weights over the 2D spatial grid. Depends
// only on geometry and config, so one table serves every stack of a size.
class MaskingKernel {
 public:
  struct Term {
    std::uint32_t masker;  // flat (u + v * nx) index
    double weight;
  };

  MaskingKernel(const FreqCoords& coords, const HvsConfig& config);

  std::size_t size() const { return offsets_.size() - 1; }
  std::span<const Term> terms(std::size_t maskee) const {
    return {terms_.data() + offsets_[maskee], offsets_[maskee + 1] - offsets_[maskee]};
  }
  double weight_sum(std::size_t maskee) const { return sums_[maskee]; }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<Term> terms_;
  std::vector<double> sums_;
};

// m_n(u, v) over the spatial grid from S(u, v); zero at DC.
std::vector<double> masker_power_map(std::span<const double> spatial_spectrum, const MaskingKernel& kernel,
                                     MnSemantics semantics = MnSemantics::amplitude);
std::vector<double> masker_power_map(std::span<const double> spatial_spectrum, const FreqCoords& coords,
                                     const HvsConfig& config);

// sqrt(m_t^2 + k^2 m_n^2); +inf propagates.
double masked_threshold(double m_t, double m_n, double k);

// Weibull: 1 - 2^(-x^beta).
double psychometric(double x, double beta);

struct ThresholdMaps {
  std::vector<double> m;          // per 3D bin
  std::vector<double> m_t;        // per 3D bin
  std::vector<double> m_n;        // per 2D spatial bin
  std::vector<double> m_t_masked; // per 3D bin
  std::vector<double> gain;       // per 3D bin
};

// Everything that depends only on stack size, viewing and config is built
// once here; calling it on a stack is then cheap and thread-safe.
class Perceiver {
 public:
  Perceiver(Dims dims, ViewingConfig viewing, HvsConfig config);

  Volume operator()(const ImageStack& stack) const;
  // Same pipeline, also returning the intermediate maps.
  Volume trace(const ImageStack& stack, ThresholdMaps& maps) const;

  const HvsConfig& config() const { return config_; }
  const FreqCoords& coords() const { return coords_; }

 private:
  Volume run(const ImageStack& stack, ThresholdMaps* maps) const;

  Dims dims_;
  ViewingConfig viewing_;
  HvsConfig config_;
  FreqCoords coords_;
  std::vector<double> m_t_;
  std::vector<double> lf_gain_;
  std::unique_ptr<MaskingKernel> kernel_;
};

Volume perceive(const ImageStack& stack, const ViewingConfig& viewing, const HvsConfig& config);

}  // namespace hvsobs
