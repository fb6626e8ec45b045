#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hvsobs/stack.hpp"

namespace hvsobs {

// Spatiotemporal low-pass Gaussian noise; one spectral shape, graded RMS.
struct NoiseSpec {
  double sigma_s = 0.08;  // cycles/pixel
  double sigma_t = 0.10;  // cycles/slice
  std::vector<double> energy_levels{0.02, 0.04, 0.06, 0.08};  // RMS for levels 1..4
};

struct LesionSpec {
  double amplitude = 0.10;  // drive units
  double sigma_xy = 2.5;    // pixels
  double sigma_z = 1.5;     // slices
  // Ellipsoidal radius (in sigmas) beyond which the lesion is exactly zero.
  double support_sigmas = 4.0;
};

enum class BackgroundKind { flat, lumpy };

struct BackgroundSpec {
  BackgroundKind kind = BackgroundKind::lumpy;
  double mean = 0.5;
  double lumpy_exponent = 1.5;
  double lumpy_rms = 0.05;
};

void validate(const NoiseSpec& spec);
void validate(const LesionSpec& spec);
void validate(const BackgroundSpec& spec);

// Background texture before clipping, mean-free part scaled to lumpy_rms.
Volume background_field(const Dims& dims, const BackgroundSpec& spec, std::uint64_t seed);

ImageStack gen_background(const Dims& dims, const BackgroundSpec& spec, std::uint64_t seed);

// Zero for level 0; otherwise white noise shaped by the Gaussian low-pass and
// rescaled to RMS energy_levels[level - 1].
Volume gen_noise_field(const Dims& dims, const NoiseSpec& spec, int level, std::uint64_t seed);

// Unclipped lesion profile centred on the stack.
Volume lesion_field(const Dims& dims, const LesionSpec& spec);

ImageStack insert_lesion(const ImageStack& stack, const LesionSpec& spec);

// Adds field to stack in place, clipping to [0,1]; returns the clip count.
std::size_t add_clipped(ImageStack& stack, const Volume& field);

struct SynthConfig {
  Dims dims{64, 64, 32};
  std::vector<int> levels{0, 1, 2, 3, 4};
  std::size_t pairs_per_level = 10;  // each pair = one healthy + one lesion twin
  BackgroundSpec background;
  NoiseSpec noise;
  LesionSpec lesion;
  std::uint64_t base_seed = 1;
  std::filesystem::path out_dir = "dataset";
  std::size_t threads = 0;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

std::string pair_id(int level, std::size_t index);
std::uint64_t entry_seed(std::uint64_t base_seed, const std::string& pair);

// Generates one twin; healthy and lesion members share background and noise.
ImageStack synthesize(const SynthConfig& config, const ManifestEntry& entry, std::size_t* clipped = nullptr);

struct BuildReport {
  DatasetManifest manifest;
  std::size_t clipped_voxels = 0;
};

// Writes <out_dir>/<id>.f32 for every entry plus <out_dir>/manifest.json.
BuildReport build_dataset(const SynthConfig& config, const ViewingConfig& viewing = {});

// Entries build_dataset would produce, without generating anything.
DatasetManifest plan_dataset(const SynthConfig& config, const ViewingConfig& viewing = {});

}  // namespace hvsobs
