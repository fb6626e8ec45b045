#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace hvsobs {

struct Dims {
  std::size_t nx = 64;
  std::size_t ny = 64;
  std::size_t nz = 32;

  std::size_t size() const { return nx * ny * nz; }
  std::size_t slice_size() const { return nx * ny; }
  // x fastest, then y, then slice.
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (z * ny + y) * nx + x;
  }
  bool operator==(const Dims&) const = default;
};

void validate(const Dims& dims);

enum class Label { healthy, lesion };

std::string to_string(Label label);
Label parse_label(const std::string& text);

// A stack in normalized drive units [0, 1]. Stored as float32 so the raw
// file format round-trips bit-exactly.
struct ImageStack {
  Dims dims;
  std::vector<float> voxels;
  std::string id;
  Label label = Label::healthy;
  int complexity = 0;
  std::uint64_t seed = 0;

  float at(std::size_t x, std::size_t y, std::size_t z) const { return voxels[dims.index(x, y, z)]; }
};

// Throws if voxels.size() != dims.size() or any voxel is non-finite.
void validate(const ImageStack& stack);

// Real-valued working field (luminance, noise, perceived output).
struct Volume {
  Dims dims;
  std::vector<double> data;

  Volume() = default;
  explicit Volume(Dims d, double fill = 0.0) : dims(d), data(d.size(), fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t z) { return data[dims.index(x, y, z)]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return data[dims.index(x, y, z)]; }
};

struct ViewingConfig {
  double pixels_per_degree = 18.0;
  double slices_per_second = 10.0;
  double l_max = 850.0;  // cd/m^2
  double l_min = 1.75;   // cd/m^2

  double effective_contrast() const { return l_max / l_min; }
};

void validate(const ViewingConfig& viewing);

// Raw little-endian float32, x fastest / y / slice.
std::vector<std::uint8_t> encode_stack(const ImageStack& stack);
std::vector<float> decode_stack(std::span<const std::uint8_t> bytes, const Dims& dims);

// L = l_min + p * (l_max - l_min).
Volume to_luminance(const ImageStack& stack, const ViewingConfig& viewing);
Volume to_volume(const ImageStack& stack);

void write_stack_file(const std::filesystem::path& path, const ImageStack& stack);
std::vector<float> read_stack_file(const std::filesystem::path& path, const Dims& dims);

struct ManifestEntry {
  std::string id;
  std::string file;  // relative to the manifest directory
  Label label = Label::healthy;
  int complexity = 0;
  std::uint64_t seed = 0;
  Dims dims;
  std::string pair;  // twin group; empty when unpaired
  std::size_t clipped = 0;
};

struct DatasetManifest {
  int version = 1;
  ViewingConfig viewing;
  std::vector<ManifestEntry> entries;
};

// Structural checks only: unique ids, valid dims, label balance per level.
void validate(const DatasetManifest& manifest);
// Additionally checks that every file exists and decodes to its dims.
void validate_files(const DatasetManifest& manifest, const std::filesystem::path& root);

void to_json(nlohmann::json& j, const ViewingConfig& v);
void from_json(const nlohmann::json& j, ViewingConfig& v);
void to_json(nlohmann::json& j, const Dims& d);
void from_json(const nlohmann::json& j, Dims& d);
void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

// A manifest plus the directory its relative paths resolve against.
class Dataset {
 public:
  static Dataset open(const std::filesystem::path& manifest_path);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }
  ImageStack load(const ManifestEntry& entry) const;
  const ManifestEntry* find(const std::string& id) const;

 private:
  DatasetManifest manifest_;
  std::filesystem::path root_;
};

}  // namespace hvsobs
