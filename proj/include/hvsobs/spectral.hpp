#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "hvsobs/stack.hpp"

namespace hvsobs {

using cplx = std::complex<double>;

// Maps a DFT index in [0, n) to the signed range (-n/2, n/2].
inline long wrap_index(std::size_t i, std::size_t n) {
  return 2 * i <= n ? static_cast<long>(i) : static_cast<long>(i) - static_cast<long>(n);
}

// Inverse of wrap_index for any signed index.
inline std::size_t unwrap_index(long k, std::size_t n) {
  const long nn = static_cast<long>(n);
  return static_cast<std::size_t>(((k % nn) + nn) % nn);
}

// Unnormalized DFT of a real stack. Bins share the voxel layout: u fastest,
// then v, then w.
struct FrequencyStack {
  Dims dims;
  std::vector<cplx> bins;

  cplx& at(std::size_t u, std::size_t v, std::size_t w) { return bins[dims.index(u, v, w)]; }
  const cplx& at(std::size_t u, std::size_t v, std::size_t w) const { return bins[dims.index(u, v, w)]; }
  cplx dc() const { return bins.front(); }

  // Flat index of the bin at (-u, -v, -w).
  std::size_t conjugate_index(std::size_t flat) const;
};

FrequencyStack fft3(const Volume& volume);

// 1/N normalized inverse. Throws symmetry_violation when the imaginary residue
// exceeds 1e-6 of the largest real magnitude.
Volume ifft3(const FrequencyStack& freq);

// Physical coordinates of DFT bins under a viewing geometry.
class FreqCoords {
 public:
  FreqCoords(Dims dims, ViewingConfig viewing) : dims_(dims), viewing_(viewing) {}

  const Dims& dims() const { return dims_; }

  double fx(std::size_t u) const;  // cycles/degree
  double fy(std::size_t v) const;  // cycles/degree
  double ft(std::size_t w) const;  // Hz
  double rho(std::size_t u, std::size_t v) const;
  // Axial orientation in degrees, [0, 180).
  double theta(std::size_t u, std::size_t v) const;
  // |f_t| / rho in deg/s; +inf when rho = 0 and f_t != 0, 0 when both vanish.
  double retinal_velocity(std::size_t u, std::size_t v, std::size_t w) const;

 private:
  Dims dims_;
  ViewingConfig viewing_;
};

// S(u, v) = sum over w of |I(u, v, w)|^2, laid out u fastest.
std::vector<double> spatial_spectrum(const FrequencyStack& freq);

// m = 2 |I| / I(0,0,0) off DC, 0 at DC.
std::vector<double> modulation(const FrequencyStack& freq);

}  // namespace hvsobs
