#include <doctest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "hvsobs/error.hpp"
#include "hvsobs/stack.hpp"

using namespace hvsobs;
namespace fs = std::filesystem;

namespace {

ImageStack ramp(Dims d) {
  ImageStack s;
  s.dims = d;
  s.id = "ramp";
  s.voxels.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) s.voxels[i] = static_cast<float>(i % 251) / 250.0f;
  return s;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an hvsobs::Error");
  return ErrorCode::invalid_argument;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hvsobs_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("layout is x fastest then y then slice") {
  const Dims d{4, 3, 2};
  CHECK(d.index(0, 0, 0) == 0);
  CHECK(d.index(1, 0, 0) == 1);
  CHECK(d.index(0, 1, 0) == 4);
  CHECK(d.index(0, 0, 1) == 12);
  CHECK(d.index(3, 2, 1) == 23);
}

TEST_CASE("encode/decode round-trips bit-exactly") {
  auto s = ramp({8, 8, 4});
  s.voxels[5] = std::numeric_limits<float>::denorm_min();
  s.voxels[6] = -0.0f;
  const auto bytes = encode_stack(s);
  CHECK(bytes.size() == 4 * s.voxels.size());
  // little-endian: first voxel 0.0f, second 1/250
  const auto second = std::bit_cast<std::uint32_t>(s.voxels[1]);
  CHECK(bytes[4] == (second & 0xff));
  CHECK(bytes[7] == (second >> 24));
  const auto back = decode_stack(bytes, s.dims);
  REQUIRE(back.size() == s.voxels.size());
  for (std::size_t i = 0; i < back.size(); ++i)
    CHECK(std::bit_cast<std::uint32_t>(back[i]) == std::bit_cast<std::uint32_t>(s.voxels[i]));
}

TEST_CASE("decode rejects bad input") {
  auto s = ramp({4, 4, 2});
  auto bytes = encode_stack(s);
  bytes.pop_back();
  CHECK(code_of([&] { decode_stack(bytes, s.dims); }) == ErrorCode::length_mismatch);

  const auto poke = [&](float bad) {
    auto raw = encode_stack(ramp({4, 4, 2}));
    const auto bits = std::bit_cast<std::uint32_t>(bad);
    for (int b = 0; b < 4; ++b) raw[12 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    return raw;
  };
  CHECK(code_of([&] { decode_stack(poke(std::numeric_limits<float>::quiet_NaN()), s.dims); }) == ErrorCode::non_finite);
  CHECK(code_of([&] { decode_stack(poke(std::numeric_limits<float>::infinity()), s.dims); }) == ErrorCode::non_finite);
  s.voxels[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK(code_of([&] { encode_stack(s); }) == ErrorCode::non_finite);
}

TEST_CASE("luminance mapping") {
  const ViewingConfig v;
  CHECK(v.effective_contrast() == doctest::Approx(485.714285714).epsilon(1e-12));
  ImageStack s;
  s.dims = {2, 1, 1};
  s.voxels = {0.0f, 1.0f};
  const auto l = to_luminance(s, v);
  CHECK(l.data[0] == 1.75);
  CHECK(l.data[1] == 850.0);

  s.voxels = {0.5f, 1.0001f};
  CHECK(code_of([&] { to_luminance(s, v); }) == ErrorCode::out_of_range);
  s.voxels = {-0.01f, 1.0f};
  CHECK(code_of([&] { to_luminance(s, v); }) == ErrorCode::out_of_range);
}

TEST_CASE("stack files") {
  const auto dir = scratch("stack_files");
  const auto s = ramp({8, 4, 2});
  write_stack_file(dir / "a.f32", s);
  CHECK(fs::file_size(dir / "a.f32") == 4 * s.voxels.size());
  CHECK(read_stack_file(dir / "a.f32", s.dims) == s.voxels);
  CHECK(code_of([&] { read_stack_file(dir / "missing.f32", s.dims); }) == ErrorCode::io);
  CHECK(code_of([&] { read_stack_file(dir / "a.f32", Dims{8, 4, 3}); }) == ErrorCode::length_mismatch);
}

namespace {

DatasetManifest small_manifest() {
  DatasetManifest m;
  for (int level : {0, 1}) {
    for (auto label : {Label::healthy, Label::lesion}) {
      ManifestEntry e;
      e.pair = "c" + std::to_string(level) + "_p0";
      e.id = e.pair + (label == Label::lesion ? "_l" : "_h");
      e.file = e.id + ".f32";
      e.label = label;
      e.complexity = level;
      e.seed = 100 + level;
      e.dims = {4, 4, 2};
      m.entries.push_back(e);
    }
  }
  return m;
}

}  // namespace

TEST_CASE("manifest json round trip and validation") {
  auto m = small_manifest();
  validate(m);
  nlohmann::json j = m;
  CHECK(j.at("version") == 1);
  CHECK(j.at("entries")[0].at("dims") == nlohmann::json::array({4, 4, 2}));
  const auto back = j.get<DatasetManifest>();
  REQUIRE(back.entries.size() == m.entries.size());
  CHECK(back.entries[3].id == m.entries[3].id);
  CHECK(back.entries[3].label == Label::lesion);
  CHECK(back.entries[3].pair == m.entries[3].pair);

  auto dup = m;
  dup.entries[1].id = dup.entries[0].id;
  CHECK(code_of([&] { validate(dup); }) == ErrorCode::validation);

  auto unbalanced = m;
  unbalanced.entries.pop_back();
  CHECK(code_of([&] { validate(unbalanced); }) == ErrorCode::validation);

  j.erase("version");
  CHECK(code_of([&] { (void)j.get<DatasetManifest>(); }) == ErrorCode::validation);
}

TEST_CASE("dataset open and load") {
  const auto dir = scratch("dataset_open");
  auto m = small_manifest();
  for (const auto& e : m.entries) {
    auto s = ramp(e.dims);
    write_stack_file(dir / e.file, s);
  }
  save_manifest(dir / "manifest.json", m);
  const auto ds = Dataset::open(dir / "manifest.json");
  validate_files(ds.manifest(), ds.root());
  const auto* e = ds.find("c1_p0_l");
  REQUIRE(e != nullptr);
  const auto s = ds.load(*e);
  CHECK(s.id == "c1_p0_l");
  CHECK(s.label == Label::lesion);
  CHECK(s.complexity == 1);
  CHECK(s.voxels == ramp(e->dims).voxels);
  CHECK(ds.find("nope") == nullptr);

  fs::remove(dir / m.entries[0].file);
  CHECK(code_of([&] { validate_files(ds.manifest(), ds.root()); }) == ErrorCode::io);
}

TEST_CASE("labels parse strictly") {
  CHECK(parse_label("lesion") == Label::lesion);
  CHECK(parse_label("healthy") == Label::healthy);
  CHECK(to_string(Label::lesion) == "lesion");
  CHECK(code_of([] { parse_label("Lesion?"); }) == ErrorCode::validation);
}

TEST_CASE("error json") {
  const Error e(ErrorCode::out_of_order, "stack \"x\" is not next");
  const auto j = nlohmann::json::parse(e.to_json());
  CHECK(j.at("code") == "out_of_order");
  CHECK(j.at("message") == "stack \"x\" is not next");
}
