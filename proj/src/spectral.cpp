#include "hvsobs/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <tuple>

#include "hvsobs/error.hpp"

namespace hvsobs {

namespace {

// FFTW planning is not thread-safe; execution with fftw_execute_dft is.
// Plans are created once per (dims, direction) on FFTW_ESTIMATE, which keeps
// results identical run to run.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(const Dims& d, int sign) {
    std::lock_guard lock(mutex_);
    const auto key = std::make_tuple(d.nx, d.ny, d.nz, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    auto* buf = fftw_alloc_complex(d.size());
    fftw_plan p = fftw_plan_dft_3d(static_cast<int>(d.nz), static_cast<int>(d.ny), static_cast<int>(d.nx),
                                   buf, buf, sign, FFTW_ESTIMATE);
    fftw_free(buf);
    plans_.emplace(key, p);
    return p;
  }

  ~PlanCache() {
    for (auto& [k, p] : plans_) fftw_destroy_plan(p);
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, int>, fftw_plan> plans_;
};

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : ptr(fftw_alloc_complex(n)), size(n) {}
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  fftw_complex* ptr;
  std::size_t size;
};

}  // namespace

std::size_t FrequencyStack::conjugate_index(std::size_t flat) const {
  const std::size_t u = flat % dims.nx;
  const std::size_t v = (flat / dims.nx) % dims.ny;
  const std::size_t w = flat / dims.slice_size();
  return dims.index((dims.nx - u) % dims.nx, (dims.ny - v) % dims.ny, (dims.nz - w) % dims.nz);
}

FrequencyStack fft3(const Volume& volume) {
  validate(volume.dims);
  const std::size_t n = volume.dims.size();
  if (volume.data.size() != n) throw Error(ErrorCode::length_mismatch, "volume size does not match dims");
  FftwBuffer buf(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(volume.data[i]))
      throw Error(ErrorCode::non_finite, "non-finite sample at flat index " + std::to_string(i));
    buf.ptr[i][0] = volume.data[i];
    buf.ptr[i][1] = 0.0;
  }
  fftw_execute_dft(PlanCache::instance().get(volume.dims, FFTW_FORWARD), buf.ptr, buf.ptr);
  FrequencyStack out{volume.dims, std::vector<cplx>(n)};
  for (std::size_t i = 0; i < n; ++i) out.bins[i] = {buf.ptr[i][0], buf.ptr[i][1]};
  return out;
}

Volume ifft3(const FrequencyStack& freq) {
  validate(freq.dims);
  const std::size_t n = freq.dims.size();
  if (freq.bins.size() != n) throw Error(ErrorCode::length_mismatch, "spectrum size does not match dims");
  FftwBuffer buf(n);
  for (std::size_t i = 0; i < n; ++i) {
    buf.ptr[i][0] = freq.bins[i].real();
    buf.ptr[i][1] = freq.bins[i].imag();
  }
  fftw_execute_dft(PlanCache::instance().get(freq.dims, FFTW_BACKWARD), buf.ptr, buf.ptr);
  const double scale = 1.0 / static_cast<double>(n);
  Volume out(freq.dims);
  double max_re = 0.0, max_im = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.data[i] = buf.ptr[i][0] * scale;
    max_re = std::max(max_re, std::abs(out.data[i]));
    max_im = std::max(max_im, std::abs(buf.ptr[i][1] * scale));
  }
  if (max_im > 1e-6 * max_re) {
    throw Error(ErrorCode::symmetry_violation,
                "inverse transform has imaginary residue " + std::to_string(max_im) + " against real peak " +
                    std::to_string(max_re) + "; spectrum is not Hermitian");
  }
  return out;
}

double FreqCoords::fx(std::size_t u) const {
  return static_cast<double>(wrap_index(u, dims_.nx)) / static_cast<double>(dims_.nx) * viewing_.pixels_per_degree;
}

double FreqCoords::fy(std::size_t v) const {
  return static_cast<double>(wrap_index(v, dims_.ny)) / static_cast<double>(dims_.ny) * viewing_.pixels_per_degree;
}

double FreqCoords::ft(std::size_t w) const {
  return static_cast<double>(wrap_index(w, dims_.nz)) / static_cast<double>(dims_.nz) * viewing_.slices_per_second;
}

double FreqCoords::rho(std::size_t u, std::size_t v) const { return std::hypot(fx(u), fy(v)); }

double FreqCoords::theta(std::size_t u, std::size_t v) const {
  double deg = std::atan2(fy(v), fx(u)) * 180.0 / std::numbers::pi;
  if (deg < 0.0) deg += 180.0;
  if (deg >= 180.0) deg -= 180.0;
  return deg;
}

double FreqCoords::retinal_velocity(std::size_t u, std::size_t v, std::size_t w) const {
  const double r = rho(u, v);
  const double t = std::abs(ft(w));
  if (r == 0.0) return t == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return t / r;
}

std::vector<double> spatial_spectrum(const FrequencyStack& freq) {
  const Dims& d = freq.dims;
  std::vector<double> s(d.slice_size(), 0.0);
  for (std::size_t w = 0; w < d.nz; ++w)
    for (std::size_t i = 0; i < d.slice_size(); ++i) s[i] += std::norm(freq.bins[w * d.slice_size() + i]);
  return s;
}

std::vector<double> modulation(const FrequencyStack& freq) {
  const double dc = freq.dc().real();
  if (!(dc > 0.0)) throw Error(ErrorCode::invalid_argument, "modulation requires a positive DC term");
  std::vector<double> m(freq.bins.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = 2.0 * std::abs(freq.bins[i]) / dc;
  m[0] = 0.0;
  return m;
}

}  // namespace hvsobs
