#include "hvsobs/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <nlohmann/json.hpp>

#include "hvsobs/error.hpp"
#include "hvsobs/parallel.hpp"
#include "hvsobs/random.hpp"
#include "hvsobs/spectral.hpp"

namespace hvsobs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Volume white_noise(const Dims& dims, std::uint64_t key) {
  const CounterRng rng(key);
  Volume v(dims);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = rng.normal(i);
  return v;
}

double rms(const std::vector<double>& x) {
  double acc = 0.0;
  for (const double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double normalized_freq(std::size_t i, std::size_t n) {
  return static_cast<double>(wrap_index(i, n)) / static_cast<double>(n);
}

}  // namespace

void validate(const NoiseSpec& s) {
  if (!(s.sigma_s > 0) || !(s.sigma_t > 0))
    throw Error(ErrorCode::invalid_argument, "noise sigma_s and sigma_t must be > 0");
  for (std::size_t i = 0; i < s.energy_levels.size(); ++i) {
    if (!(s.energy_levels[i] > 0)) throw Error(ErrorCode::invalid_argument, "noise energy levels must be > 0");
    if (i > 0 && !(s.energy_levels[i] > s.energy_levels[i - 1]))
      throw Error(ErrorCode::invalid_argument, "noise energy levels must be strictly increasing");
  }
}

void validate(const LesionSpec& s) {
  if (!(s.amplitude >= 0) || !(s.sigma_xy > 0) || !(s.sigma_z > 0) || !(s.support_sigmas > 0))
    throw Error(ErrorCode::invalid_argument, "lesion amplitude must be >= 0 and sigmas > 0");
}

void validate(const BackgroundSpec& s) {
  if (!(s.mean > 0 && s.mean < 1)) throw Error(ErrorCode::invalid_argument, "background mean must lie in (0,1)");
  if (!(s.lumpy_rms >= 0)) throw Error(ErrorCode::invalid_argument, "lumpy_rms must be >= 0");
}

Volume background_field(const Dims& dims, const BackgroundSpec& spec, std::uint64_t seed) {
  validate(dims);
  validate(spec);
  if (spec.kind == BackgroundKind::flat || spec.lumpy_rms == 0.0) return Volume(dims, 0.0);

  auto freq = fft3(white_noise(dims, seed));
  for (std::size_t w = 0; w < dims.nz; ++w) {
    for (std::size_t v = 0; v < dims.ny; ++v) {
      for (std::size_t u = 0; u < dims.nx; ++u) {
        const double f = std::sqrt(std::pow(normalized_freq(u, dims.nx), 2) + std::pow(normalized_freq(v, dims.ny), 2) +
                                   std::pow(normalized_freq(w, dims.nz), 2));
        freq.at(u, v, w) *= f > 0.0 ? std::pow(f, -spec.lumpy_exponent) : 0.0;
      }
    }
  }
  auto field = ifft3(freq);
  const double r = rms(field.data);
  if (r > 0.0)
    for (auto& x : field.data) x *= spec.lumpy_rms / r;
  return field;
}

ImageStack gen_background(const Dims& dims, const BackgroundSpec& spec, std::uint64_t seed) {
  ImageStack s;
  s.dims = dims;
  s.seed = seed;
  s.voxels.assign(dims.size(), static_cast<float>(spec.mean));
  add_clipped(s, background_field(dims, spec, seed));
  return s;
}

Volume gen_noise_field(const Dims& dims, const NoiseSpec& spec, int level, std::uint64_t seed) {
  validate(dims);
  validate(spec);
  if (level < 0 || level > static_cast<int>(spec.energy_levels.size()))
    throw Error(ErrorCode::out_of_range, "noise level " + std::to_string(level) + " outside 0.." +
                                             std::to_string(spec.energy_levels.size()));
  if (level == 0) return Volume(dims, 0.0);

  auto freq = fft3(white_noise(dims, seed));
  for (std::size_t w = 0; w < dims.nz; ++w) {
    const double ft = normalized_freq(w, dims.nz);
    const double ht = std::exp(-ft * ft / (2.0 * spec.sigma_t * spec.sigma_t));
    for (std::size_t v = 0; v < dims.ny; ++v) {
      const double fy = normalized_freq(v, dims.ny);
      for (std::size_t u = 0; u < dims.nx; ++u) {
        const double fx = normalized_freq(u, dims.nx);
        const double rho2 = fx * fx + fy * fy;
        freq.at(u, v, w) *= std::exp(-rho2 / (2.0 * spec.sigma_s * spec.sigma_s)) * ht;
      }
    }
  }
  auto field = ifft3(freq);
  const double target = spec.energy_levels[static_cast<std::size_t>(level - 1)];
  const double r = rms(field.data);
  for (auto& x : field.data) x *= target / r;
  return field;
}

Volume lesion_field(const Dims& dims, const LesionSpec& spec) {
  validate(dims);
  validate(spec);
  Volume out(dims);
  const double cx = (static_cast<double>(dims.nx) - 1.0) / 2.0;
  const double cy = (static_cast<double>(dims.ny) - 1.0) / 2.0;
  const double cz = (static_cast<double>(dims.nz) - 1.0) / 2.0;
  const double cutoff2 = spec.support_sigmas * spec.support_sigmas;
  for (std::size_t z = 0; z < dims.nz; ++z) {
    for (std::size_t y = 0; y < dims.ny; ++y) {
      for (std::size_t x = 0; x < dims.nx; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        const double dz = static_cast<double>(z) - cz;
        const double q = (dx * dx + dy * dy) / (spec.sigma_xy * spec.sigma_xy) + dz * dz / (spec.sigma_z * spec.sigma_z);
        if (q > cutoff2) continue;
        out.at(x, y, z) = spec.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * spec.sigma_xy * spec.sigma_xy)) *
                          std::exp(-dz * dz / (2.0 * spec.sigma_z * spec.sigma_z));
      }
    }
  }
  return out;
}

std::size_t add_clipped(ImageStack& stack, const Volume& field) {
  if (!(field.dims == stack.dims)) throw Error(ErrorCode::invalid_argument, "field dims do not match stack");
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < stack.voxels.size(); ++i) {
    if (field.data[i] == 0.0) continue;
    const double v = static_cast<double>(stack.voxels[i]) + field.data[i];
    if (v < 0.0 || v > 1.0) ++clipped;
    stack.voxels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return clipped;
}

ImageStack insert_lesion(const ImageStack& stack, const LesionSpec& spec) {
  validate(stack);
  ImageStack out = stack;
  add_clipped(out, lesion_field(stack.dims, spec));
  out.label = Label::lesion;
  return out;
}

std::string pair_id(int level, std::size_t index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "c%d_p%05zu", level, index);
  return buf;
}

std::uint64_t entry_seed(std::uint64_t base_seed, const std::string& pair) {
  return base_seed ^ fnv1a64(pair);
}

DatasetManifest plan_dataset(const SynthConfig& c, const ViewingConfig& viewing) {
  validate(c.dims);
  DatasetManifest m;
  m.viewing = viewing;
  std::set<int> seen;
  for (const int level : c.levels) {
    if (level < 0 || level > static_cast<int>(c.noise.energy_levels.size()))
      throw Error(ErrorCode::out_of_range, "complexity level " + std::to_string(level) + " has no noise energy");
    if (!seen.insert(level).second)
      throw Error(ErrorCode::validation, "complexity level " + std::to_string(level) + " listed twice");
    for (std::size_t p = 0; p < c.pairs_per_level; ++p) {
      const auto pair = pair_id(level, p);
      for (const Label label : {Label::healthy, Label::lesion}) {
        ManifestEntry e;
        e.id = pair + (label == Label::lesion ? "_l" : "_h");
        e.file = e.id + ".f32";
        e.label = label;
        e.complexity = level;
        e.seed = entry_seed(c.base_seed, pair);
        e.dims = c.dims;
        e.pair = pair;
        m.entries.push_back(std::move(e));
      }
    }
  }
  validate(m);
  return m;
}

ImageStack synthesize(const SynthConfig& c, const ManifestEntry& entry, std::size_t* clipped) {
  ImageStack s;
  s.dims = entry.dims;
  s.voxels.assign(entry.dims.size(), static_cast<float>(c.background.mean));
  std::size_t n = add_clipped(s, background_field(entry.dims, c.background, mix64(entry.seed, 1)));
  n += add_clipped(s, gen_noise_field(entry.dims, c.noise, entry.complexity, mix64(entry.seed, 2)));
  if (entry.label == Label::lesion) {
    n += add_clipped(s, lesion_field(entry.dims, c.lesion));
  }
  s.id = entry.id;
  s.label = entry.label;
  s.complexity = entry.complexity;
  s.seed = entry.seed;
  if (clipped) *clipped = n;
  return s;
}

BuildReport build_dataset(const SynthConfig& c, const ViewingConfig& viewing) {
  validate(c.background);
  validate(c.noise);
  validate(c.lesion);
  BuildReport report;
  report.manifest = plan_dataset(c, viewing);
  std::error_code ec;
  fs::create_directories(c.out_dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create '" + c.out_dir.string() + "': " + ec.message());

  auto& entries = report.manifest.entries;
  parallel_for(entries.size(), c.threads, [&](std::size_t i) {
    const auto stack = synthesize(c, entries[i], &entries[i].clipped);
    write_stack_file(c.out_dir / entries[i].file, stack);
  });
  for (const auto& e : entries) report.clipped_voxels += e.clipped;
  save_manifest(c.out_dir / "manifest.json", report.manifest);
  return report;
}

void to_json(json& j, const SynthConfig& c) {
  j = json{{"dims", c.dims},
           {"levels", c.levels},
           {"pairs_per_level", c.pairs_per_level},
           {"background",
            {{"kind", c.background.kind == BackgroundKind::flat ? "flat" : "lumpy"},
             {"mean", c.background.mean},
             {"lumpy_exponent", c.background.lumpy_exponent},
             {"lumpy_rms", c.background.lumpy_rms}}},
           {"noise",
            {{"sigma_s", c.noise.sigma_s}, {"sigma_t", c.noise.sigma_t}, {"energy_levels", c.noise.energy_levels}}},
           {"lesion",
            {{"amplitude", c.lesion.amplitude},
             {"sigma_xy", c.lesion.sigma_xy},
             {"sigma_z", c.lesion.sigma_z},
             {"support_sigmas", c.lesion.support_sigmas}}},
           {"base_seed", c.base_seed},
           {"out_dir", c.out_dir.string()}};
}

void from_json(const json& j, SynthConfig& c) {
  c = SynthConfig{};
  if (j.contains("dims")) c.dims = j.at("dims").get<Dims>();
  c.levels = j.value("levels", c.levels);
  c.pairs_per_level = j.value("pairs_per_level", c.pairs_per_level);
  if (j.contains("background")) {
    const auto& b = j.at("background");
    const auto kind = b.value("kind", std::string("lumpy"));
    if (kind != "flat" && kind != "lumpy") throw Error(ErrorCode::validation, "background kind must be flat or lumpy");
    c.background.kind = kind == "flat" ? BackgroundKind::flat : BackgroundKind::lumpy;
    c.background.mean = b.value("mean", c.background.mean);
    c.background.lumpy_exponent = b.value("lumpy_exponent", c.background.lumpy_exponent);
    c.background.lumpy_rms = b.value("lumpy_rms", c.background.lumpy_rms);
  }
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    c.noise.sigma_s = n.value("sigma_s", c.noise.sigma_s);
    c.noise.sigma_t = n.value("sigma_t", c.noise.sigma_t);
    c.noise.energy_levels = n.value("energy_levels", c.noise.energy_levels);
  }
  if (j.contains("lesion")) {
    const auto& l = j.at("lesion");
    c.lesion.amplitude = l.value("amplitude", c.lesion.amplitude);
    c.lesion.sigma_xy = l.value("sigma_xy", c.lesion.sigma_xy);
    c.lesion.sigma_z = l.value("sigma_z", c.lesion.sigma_z);
    c.lesion.support_sigmas = l.value("support_sigmas", c.lesion.support_sigmas);
  }
  c.base_seed = j.value("base_seed", c.base_seed);
  c.out_dir = j.value("out_dir", c.out_dir.string());
  c.threads = j.value("threads", c.threads);
}

}  // namespace hvsobs
