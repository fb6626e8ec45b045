#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>

#include <nlohmann/json.hpp>

#include "hvsobs/error.hpp"
#include "hvsobs/random.hpp"
#include "hvsobs/spectral.hpp"
#include "hvsobs/synth.hpp"

using namespace hvsobs;
namespace fs = std::filesystem;

namespace {

double rms(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_CASE("lesion peak matches the closed form") {
  const Dims d{64, 64, 32};
  const LesionSpec spec;
  ImageStack bg;
  bg.dims = d;
  bg.voxels.assign(d.size(), 0.5f);
  const auto les = insert_lesion(bg, spec);
  float peak = 0;
  for (float v : les.voxels) peak = std::max(peak, v);
  // centre sits between voxels: nearest offsets are 0.5 on every axis
  const double expected = 0.5 + 0.1 * std::exp(-0.5 / (2 * 2.5 * 2.5)) * std::exp(-0.25 / (2 * 1.5 * 1.5));
  CHECK(peak == doctest::Approx(expected).epsilon(1e-6));
  CHECK(expected == doctest::Approx(0.590894).epsilon(1e-5));
  CHECK(les.label == Label::lesion);
}

TEST_CASE("lesion mass matches the truncated Gaussian integral") {
  const Dims d{48, 48, 32};
  const LesionSpec spec;
  const auto f = lesion_field(d, spec);
  double sum = 0;
  for (double x : f.data) sum += x;
  // P(chi^2_3 <= 16): share of a 3D Gaussian inside 4 sigma.
  const double inside = std::erf(4 / std::numbers::sqrt2) - std::sqrt(2 / std::numbers::pi) * 4 * std::exp(-8.0);
  const double integral = spec.amplitude * std::pow(2 * std::numbers::pi, 1.5) * spec.sigma_xy * spec.sigma_xy *
                          spec.sigma_z * inside;
  CHECK(sum == doctest::Approx(integral).epsilon(2e-3));
}

TEST_CASE("twins differ only inside the lesion support") {
  SynthConfig c;
  c.dims = {32, 32, 16};
  const auto plan = plan_dataset(c);
  for (int level : {0, 4}) {
    const ManifestEntry* h = nullptr;
    const ManifestEntry* l = nullptr;
    for (const auto& e : plan.entries) {
      if (e.complexity != level || e.pair != pair_id(level, 3)) continue;
      (e.label == Label::lesion ? l : h) = &e;
    }
    REQUIRE(h);
    REQUIRE(l);
    const auto hs = synthesize(c, *h);
    const auto ls = synthesize(c, *l);
    const double cx = 15.5, cy = 15.5, cz = 7.5;
    std::size_t inside_diff = 0;
    for (std::size_t z = 0; z < 16; ++z)
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          const double dx = x - cx, dy = y - cy, dz = z - cz;
          const double q = (dx * dx + dy * dy) / (2.5 * 2.5) + dz * dz / (1.5 * 1.5);
          const double diff = std::abs(hs.at(x, y, z) - ls.at(x, y, z));
          if (q > 16.0)
            CHECK(diff < 1e-6);
          else if (diff > 0)
            ++inside_diff;
        }
    CHECK(inside_diff > 100);
  }
}

TEST_CASE("noise rms is exact per level and zero at level 0") {
  const Dims d{32, 32, 16};
  const NoiseSpec spec;
  CHECK(rms(gen_noise_field(d, spec, 0, 1).data) == 0.0);
  for (int level = 1; level <= 4; ++level) {
    const auto f = gen_noise_field(d, spec, level, 77);
    CHECK(rms(f.data) == doctest::Approx(spec.energy_levels[level - 1]).epsilon(1e-9));
  }
  CHECK_THROWS_AS(gen_noise_field(d, spec, 5, 1), Error);
  CHECK_THROWS_AS(gen_noise_field(d, spec, -1, 1), Error);
  // same seed, different level: same shape, scaled
  const auto a = gen_noise_field(d, spec, 1, 9);
  const auto b = gen_noise_field(d, spec, 4, 9);
  for (std::size_t i = 0; i < a.data.size(); i += 97) CHECK(b.data[i] == doctest::Approx(4 * a.data[i]));
}

TEST_CASE("noise spectrum follows the Gaussian low-pass") {
  // Averaged periodogram ratio between two bins against H^2.
  const Dims d{32, 32, 16};
  const NoiseSpec spec;
  double p0 = 0, p1 = 0;
  const std::size_t u1 = 3;  // fx = 3/32
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto f = fft3(gen_noise_field(d, spec, 2, seed));
    p0 += std::norm(f.at(1, 0, 0));
    p1 += std::norm(f.at(u1, 0, 0));
  }
  const auto h2 = [&](double fx) { return std::exp(-fx * fx / (spec.sigma_s * spec.sigma_s)); };
  const double expected = h2(3.0 / 32) / h2(1.0 / 32);
  CHECK(p1 / p0 == doctest::Approx(expected).epsilon(0.35));
}

TEST_CASE("lumpy background has the requested rms and mean") {
  const Dims d{32, 32, 16};
  BackgroundSpec spec;
  const auto f = background_field(d, spec, 4);
  CHECK(rms(f.data) == doctest::Approx(spec.lumpy_rms).epsilon(1e-9));
  CHECK(std::abs(mean(f.data)) < 1e-12);
  spec.kind = BackgroundKind::flat;
  CHECK(rms(background_field(d, spec, 4).data) == 0.0);
  const auto s = gen_background(d, spec, 4);
  for (float v : s.voxels) CHECK(v == 0.5f);
}

TEST_CASE("add_clipped counts and clamps") {
  ImageStack s;
  s.dims = {4, 1, 1};
  s.voxels = {0.5f, 0.95f, 0.05f, 1.0f};
  Volume f(s.dims);
  f.data = {0.1, 0.1, -0.1, 0.0};
  CHECK(add_clipped(s, f) == 2);
  CHECK(s.voxels[0] == doctest::Approx(0.6f));
  CHECK(s.voxels[1] == 1.0f);
  CHECK(s.voxels[2] == 0.0f);
  CHECK(s.voxels[3] == 1.0f);
}

TEST_CASE("plan ids, seeds and balance") {
  SynthConfig c;
  c.levels = {0, 2};
  c.pairs_per_level = 3;
  c.base_seed = 99;
  const auto m = plan_dataset(c);
  CHECK(m.entries.size() == 12);
  CHECK(m.entries[0].id == "c0_p00000_h");
  CHECK(m.entries[1].id == "c0_p00000_l");
  CHECK(m.entries[0].seed == m.entries[1].seed);
  CHECK(m.entries[0].seed == (99 ^ fnv1a64("c0_p00000")));
  CHECK(m.entries[11].id == "c2_p00002_l");
  c.levels = {0, 0};
  CHECK_THROWS_AS(plan_dataset(c), Error);
  c.levels = {5};
  CHECK_THROWS_AS(plan_dataset(c), Error);
}

TEST_CASE("build_dataset is thread-count independent") {
  SynthConfig c;
  c.dims = {16, 16, 8};
  c.levels = {0, 4};
  c.pairs_per_level = 3;
  const auto root = fs::temp_directory_path() / "hvsobs_test_build";
  fs::remove_all(root);
  c.out_dir = root / "a";
  c.threads = 1;
  const auto ra = build_dataset(c);
  c.out_dir = root / "b";
  c.threads = 3;
  const auto rb = build_dataset(c);
  CHECK(ra.clipped_voxels == rb.clipped_voxels);
  for (const auto& e : ra.manifest.entries) CHECK(slurp(root / "a" / e.file) == slurp(root / "b" / e.file));
  CHECK(slurp(root / "a" / "manifest.json") == slurp(root / "b" / "manifest.json"));
  const auto ds = Dataset::open(root / "a" / "manifest.json");
  validate_files(ds.manifest(), ds.root());
}

TEST_CASE("synth config json round trip") {
  SynthConfig c;
  c.dims = {8, 8, 4};
  c.levels = {1, 3};
  c.lesion.amplitude = 0.2;
  c.background.kind = BackgroundKind::flat;
  c.noise.energy_levels = {0.01, 0.02, 0.03, 0.05};
  c.base_seed = 1234567890123ull;
  const nlohmann::json j = c;
  const auto back = j.get<SynthConfig>();
  CHECK(back.dims == c.dims);
  CHECK(back.levels == c.levels);
  CHECK(back.lesion.amplitude == 0.2);
  CHECK(back.background.kind == BackgroundKind::flat);
  CHECK(back.noise.energy_levels == c.noise.energy_levels);
  CHECK(back.base_seed == c.base_seed);

  auto bad = j;
  bad["background"]["kind"] = "bumpy";
  CHECK_THROWS_AS((void)bad.get<SynthConfig>(), Error);
}
