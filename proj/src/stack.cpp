#include "hvsobs/stack.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hvsobs/error.hpp"

namespace hvsobs {

namespace fs = std::filesystem;
using nlohmann::json;

void validate(const Dims& dims) {
  if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0)
    throw Error(ErrorCode::invalid_argument, "stack dimensions must be positive");
}

std::string to_string(Label label) { return label == Label::lesion ? "lesion" : "healthy"; }

Label parse_label(const std::string& text) {
  if (text == "lesion") return Label::lesion;
  if (text == "healthy") return Label::healthy;
  throw Error(ErrorCode::validation, "unknown label '" + text + "'");
}

void validate(const ImageStack& stack) {
  validate(stack.dims);
  if (stack.voxels.size() != stack.dims.size()) {
    throw Error(ErrorCode::length_mismatch,
                "stack '" + stack.id + "' has " + std::to_string(stack.voxels.size()) +
                    " voxels, expected " + std::to_string(stack.dims.size()));
  }
  for (std::size_t i = 0; i < stack.voxels.size(); ++i) {
    if (!std::isfinite(stack.voxels[i]))
      throw Error(ErrorCode::non_finite, "non-finite voxel at flat index " + std::to_string(i));
  }
}

void validate(const ViewingConfig& v) {
  if (!(v.pixels_per_degree > 0) || !(v.slices_per_second > 0))
    throw Error(ErrorCode::invalid_argument, "pixels_per_degree and slices_per_second must be > 0");
  if (!(v.l_min > 0) || !(v.l_max > v.l_min))
    throw Error(ErrorCode::invalid_argument, "viewing luminance requires l_max > l_min > 0");
}

std::vector<std::uint8_t> encode_stack(const ImageStack& stack) {
  validate(stack);
  std::vector<std::uint8_t> out(stack.voxels.size() * 4);
  for (std::size_t i = 0; i < stack.voxels.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(stack.voxels[i]);
    out[4 * i + 0] = static_cast<std::uint8_t>(bits);
    out[4 * i + 1] = static_cast<std::uint8_t>(bits >> 8);
    out[4 * i + 2] = static_cast<std::uint8_t>(bits >> 16);
    out[4 * i + 3] = static_cast<std::uint8_t>(bits >> 24);
  }
  return out;
}

std::vector<float> decode_stack(std::span<const std::uint8_t> bytes, const Dims& dims) {
  validate(dims);
  const std::size_t expected = 4 * dims.size();
  if (bytes.size() != expected) {
    throw Error(ErrorCode::length_mismatch, "expected " + std::to_string(expected) +
                                                " bytes, got " + std::to_string(bytes.size()));
  }
  std::vector<float> voxels(dims.size());
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                               static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8 |
                               static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16 |
                               static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24;
    voxels[i] = std::bit_cast<float>(bits);
    if (!std::isfinite(voxels[i]))
      throw Error(ErrorCode::non_finite, "non-finite value at flat index " + std::to_string(i));
  }
  return voxels;
}

Volume to_luminance(const ImageStack& stack, const ViewingConfig& viewing) {
  validate(viewing);
  validate(stack);
  Volume out(stack.dims);
  const double span = viewing.l_max - viewing.l_min;
  for (std::size_t i = 0; i < stack.voxels.size(); ++i) {
    const double p = stack.voxels[i];
    if (p < 0.0 || p > 1.0) {
      throw Error(ErrorCode::out_of_range,
                  "drive level " + std::to_string(p) + " outside [0,1] at flat index " + std::to_string(i));
    }
    out.data[i] = viewing.l_min + p * span;
  }
  return out;
}

Volume to_volume(const ImageStack& stack) {
  Volume out(stack.dims);
  for (std::size_t i = 0; i < stack.voxels.size(); ++i) out.data[i] = stack.voxels[i];
  return out;
}

void write_stack_file(const fs::path& path, const ImageStack& stack) {
  const auto bytes = encode_stack(stack);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorCode::io, "write failed for '" + path.string() + "'");
}

std::vector<float> read_stack_file(const fs::path& path, const Dims& dims) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_stack(bytes, dims);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void validate(const DatasetManifest& m) {
  if (m.version < 1) throw Error(ErrorCode::validation, "manifest version must be >= 1");
  validate(m.viewing);
  std::set<std::string> ids;
  std::map<int, std::pair<std::size_t, std::size_t>> balance;
  for (const auto& e : m.entries) {
    if (e.id.empty()) throw Error(ErrorCode::validation, "manifest entry with empty id");
    if (!ids.insert(e.id).second) throw Error(ErrorCode::validation, "duplicate stack id '" + e.id + "'");
    validate(e.dims);
    if (e.complexity < 0 || e.complexity > 4)
      throw Error(ErrorCode::validation, "entry '" + e.id + "' complexity outside 0..4");
    auto& [healthy, lesion] = balance[e.complexity];
    (e.label == Label::lesion ? lesion : healthy)++;
  }
  for (const auto& [level, counts] : balance) {
    if (counts.first != counts.second) {
      throw Error(ErrorCode::validation, "complexity " + std::to_string(level) + " is unbalanced: " +
                                             std::to_string(counts.first) + " healthy vs " +
                                             std::to_string(counts.second) + " lesion");
    }
  }
}

void validate_files(const DatasetManifest& m, const fs::path& root) {
  validate(m);
  for (const auto& e : m.entries) {
    const auto path = root / e.file;
    if (!fs::exists(path)) throw Error(ErrorCode::io, "missing stack file '" + path.string() + "'");
    read_stack_file(path, e.dims);
  }
}

void to_json(json& j, const ViewingConfig& v) {
  j = json{{"pixels_per_degree", v.pixels_per_degree},
           {"slices_per_second", v.slices_per_second},
           {"l_max", v.l_max},
           {"l_min", v.l_min}};
}

void from_json(const json& j, ViewingConfig& v) {
  v = ViewingConfig{};
  v.pixels_per_degree = j.value("pixels_per_degree", v.pixels_per_degree);
  v.slices_per_second = j.value("slices_per_second", v.slices_per_second);
  v.l_max = j.value("l_max", v.l_max);
  v.l_min = j.value("l_min", v.l_min);
}

void to_json(json& j, const Dims& d) { j = json::array({d.nx, d.ny, d.nz}); }

void from_json(const json& j, Dims& d) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::validation, "dims must be [nx, ny, nz]");
  d = Dims{j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

void to_json(json& j, const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    json je{{"id", e.id},       {"file", e.file}, {"label", to_string(e.label)},
            {"complexity", e.complexity}, {"seed", e.seed}, {"dims", e.dims}};
    if (!e.pair.empty()) je["pair"] = e.pair;
    if (e.clipped > 0) je["clipped"] = e.clipped;
    entries.push_back(std::move(je));
  }
  j = json{{"version", m.version}, {"viewing", m.viewing}, {"entries", std::move(entries)}};
}

void from_json(const json& j, DatasetManifest& m) {
  if (!j.contains("version")) throw Error(ErrorCode::validation, "manifest is missing 'version'");
  m.version = j.at("version").get<int>();
  m.viewing = j.value("viewing", ViewingConfig{});
  m.entries.clear();
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.id = je.at("id").get<std::string>();
    e.file = je.value("file", e.id + ".f32");
    e.label = parse_label(je.at("label").get<std::string>());
    e.complexity = je.at("complexity").get<int>();
    e.seed = je.value("seed", std::uint64_t{0});
    e.dims = je.at("dims").get<Dims>();
    e.pair = je.value("pair", std::string{});
    e.clipped = je.value("clipped", std::size_t{0});
    m.entries.push_back(std::move(e));
  }
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  os << json(manifest).dump(2) << '\n';
  if (!os) throw Error(ErrorCode::io, "write failed for '" + path.string() + "'");
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io, "cannot open manifest '" + path.string() + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, path.string() + ": " + e.what());
  }
  auto m = j.get<DatasetManifest>();
  validate(m);
  return m;
}

Dataset Dataset::open(const fs::path& manifest_path) {
  Dataset ds;
  ds.manifest_ = load_manifest(manifest_path);
  ds.root_ = manifest_path.parent_path();
  return ds;
}

ImageStack Dataset::load(const ManifestEntry& entry) const {
  ImageStack s;
  s.dims = entry.dims;
  s.voxels = read_stack_file(root_ / entry.file, entry.dims);
  s.id = entry.id;
  s.label = entry.label;
  s.complexity = entry.complexity;
  s.seed = entry.seed;
  return s;
}

const ManifestEntry* Dataset::find(const std::string& id) const {
  for (const auto& e : manifest_.entries)
    if (e.id == id) return &e;
  return nullptr;
}

}  // namespace hvsobs
