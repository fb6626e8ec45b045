#pragma once

// Small on-disk datasets and study configs shared by the unit and acceptance
// binaries.

#include <filesystem>
#include <string>

#include "hvsobs/study.hpp"
#include "hvsobs/synth.hpp"

namespace fixtures {

inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("hvsobs_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Study-sized dataset: levels {0, 2, 4}, `pairs` twins per level, tiny stacks.
inline std::filesystem::path study_dataset(const std::filesystem::path& root, std::size_t pairs,
                                           hvsobs::Dims dims = {8, 8, 4}) {
  hvsobs::SynthConfig c;
  c.dims = dims;
  c.levels = {0, 2, 4};
  c.pairs_per_level = pairs;
  c.base_seed = 17;
  c.out_dir = root / "dataset";
  hvsobs::build_dataset(c);
  return c.out_dir / "manifest.json";
}

inline hvsobs::StudyConfig study_config(const std::filesystem::path& root, const std::filesystem::path& manifest,
                                        std::size_t per_condition) {
  hvsobs::StudyConfig c;
  c.manifest = manifest;
  c.per_condition = per_condition;
  c.log_dir = root / "logs";
  return c;
}

}  // namespace fixtures
