// hvsobs: dataset synthesis, perception sweeps, observer evaluation and the
// reading-study server.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include <nlohmann/json.hpp>

#include "hvsobs/error.hpp"
#include "hvsobs/hvs.hpp"
#include "hvsobs/observer.hpp"
#include "hvsobs/runner.hpp"
#include "hvsobs/server.hpp"
#include "hvsobs/study.hpp"
#include "hvsobs/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hvsobs;

namespace {

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, path.string() + ": " + e.what());
  }
}

// Synth configs may be standalone or nested under "synth" in an experiment config.
SynthConfig load_synth_config(const fs::path& path, ViewingConfig& viewing) {
  const auto j = read_json(path);
  const auto& sj = j.contains("synth") ? j.at("synth") : j;
  auto c = sj.get<SynthConfig>();
  if (c.out_dir.is_relative()) c.out_dir = path.parent_path() / c.out_dir;
  if (j.contains("viewing")) viewing = j.at("viewing").get<ViewingConfig>();
  return c;
}

int cmd_synth(const fs::path& config, std::size_t threads) {
  ViewingConfig viewing;
  auto c = load_synth_config(config, viewing);
  if (threads) c.threads = threads;
  const auto report = build_dataset(c, viewing);
  std::cout << "wrote " << report.manifest.entries.size() << " stacks to " << c.out_dir.string() << " ("
            << report.clipped_voxels << " clipped voxel events)\n";
  return 0;
}

int cmd_perceive(const fs::path& config_path, const std::string& stack_id, const std::string& method,
                 const std::string& model, const fs::path& out) {
  const auto config = load_experiment_config(config_path);
  fs::path manifest = config.dataset ? *config.dataset : config.synth->out_dir / "manifest.json";
  if (!config.dataset && !fs::exists(manifest)) build_dataset(*config.synth, config.viewing.value_or(ViewingConfig{}));
  const auto dataset = Dataset::open(manifest);
  const auto* entry = dataset.find(stack_id);
  if (!entry) throw Error(ErrorCode::not_found, "stack '" + stack_id + "' is not in " + manifest.string());
  const auto stack = dataset.load(*entry);
  Variant v;
  v.model = parse_model(model);
  v.method = parse_method(method);
  const ViewingConfig viewing = config.viewing.value_or(dataset.manifest().viewing);
  const Perceiver perceiver(stack.dims, viewing, config.hvs_for(v));
  ThresholdMaps maps;
  const auto perceived = perceiver.trace(stack, maps);

  double lo = perceived.data.front(), hi = lo, mean = 0.0;
  for (const double x : perceived.data) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    mean += x / static_cast<double>(perceived.data.size());
  }
  double gain_mean = 0.0;
  for (const double g : maps.gain) gain_mean += g / static_cast<double>(maps.gain.size());
  json summary{{"stack", stack.id},           {"label", to_string(stack.label)},
               {"complexity", stack.complexity}, {"model", model},
               {"method", method},             {"luminance_min", lo},
               {"luminance_max", hi},          {"luminance_mean", mean},
               {"mean_gain", gain_mean}};
  if (!maps.m_n.empty()) {
    auto sorted = maps.m_n;
    std::sort(sorted.begin() + 1, sorted.end());
    summary["median_masker_power"] = sorted[1 + (sorted.size() - 1) / 2];
  }
  if (!out.empty()) {
    ImageStack o;
    o.dims = perceived.dims;
    o.voxels.assign(perceived.data.begin(), perceived.data.end());
    o.id = stack.id;
    write_stack_file(out, o);
    summary["written"] = out.string();
  }
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_run(const fs::path& config_path, std::size_t threads, const fs::path& out_dir) {
  auto config = load_experiment_config(config_path);
  if (threads) config.threads = threads;
  if (!out_dir.empty()) config.output_dir = out_dir;
  const auto table = run_experiment(config);
  std::cout << to_csv(table);
  std::cerr << "config hash " << table.config_hash << "; results in " << config.output_dir.string() << '\n';
  return 0;
}

int cmd_report(const fs::path& results, bool strict) {
  const auto table = read_results(results);
  const auto report = check_trend(table);
  std::cout << report.text();
  if (strict && !(report.monotone_drop && report.masking_not_higher_at_top)) return 3;
  return 0;
}

StudyServer* g_server = nullptr;

int cmd_study_serve(const fs::path& config_path, int port_override) {
  auto config = load_study_config(config_path);
  if (port_override >= 0) config.port = port_override;
  StudyService service(config);
  StudyServer server(service);
  const int port = server.bind(config.host, config.port);
  std::cerr << "serving " << service.study_size() << " stacks on http://" << config.host << ":" << port << "/\n";
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  server.listen();
  g_server = nullptr;
  return 0;
}

int cmd_study_analyze(const std::vector<fs::path>& logs, bool as_json) {
  std::vector<std::string> warnings;
  const json out = analyze_score_logs(logs, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  if (as_json) {
    std::cout << out.dump(2) << '\n';
    return 0;
  }
  for (const auto& [observer, jo] : out.items()) {
    std::cout << "observer " << observer << " (" << jo["records"].get<std::size_t>() << " records)\n";
    if (jo.contains("percent_correct"))
      for (const auto& [level, v] : jo["percent_correct"].items()) {
        std::printf("  complexity %s: %.4f correct (%zu/%zu lesion stacks)\n", level.c_str(),
                    v["fraction"].get<double>(), v["hits"].get<std::size_t>(), v["lesion_stacks"].get<std::size_t>());
      }
    if (jo.contains("auc"))
      for (const auto& [level, v] : jo["auc"].items()) {
        std::printf("  complexity %s: AUC %.4f [%.4f, %.4f]\n", level.c_str(), v["auc"].get<double>(),
                    v["ci_low"].get<double>(), v["ci_high"].get<double>());
      }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perceptual numerical observer with contrast masking"};
  app.require_subcommand(1);

  fs::path config, results, out;
  std::string stack_id, method = "PM", model = "csf_plus_masking";
  std::size_t threads = 0;
  bool strict = false, as_json = false;
  int port = -1;
  std::vector<fs::path> logs;

  auto* synth = app.add_subcommand("synth", "Synthesize a twin-stack dataset");
  synth->add_option("config", config, "synth or experiment config (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--threads", threads, "worker threads (0 = all cores)");

  auto* perceive = app.add_subcommand("perceive", "Run the perception stage on one stack");
  perceive->add_option("config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  perceive->add_option("stack_id", stack_id, "stack id from the manifest")->required();
  perceive->add_option("--method", method, "MC, PM or LF");
  perceive->add_option("--model", model, "csf_only or csf_plus_masking");
  perceive->add_option("-o,--output", out, "write the perceived stack (float32 luminance)");

  auto* run = app.add_subcommand("run", "Run an experiment and write results");
  run->add_option("config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--threads", threads, "worker threads (0 = all cores)");
  run->add_option("-o,--output-dir", out, "override output_dir");

  auto* report = app.add_subcommand("report", "Trend checks over a results table");
  report->add_option("results", results, "results.csv or results.json")->required()->check(CLI::ExistingFile);
  report->add_flag("--strict", strict, "exit 3 when a trend flag fails");

  auto* serve = app.add_subcommand("study-serve", "Serve the reading study");
  serve->add_option("config", config, "study config (JSON)")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", port, "override the configured port");

  auto* analyze = app.add_subcommand("study-analyze", "Percent correct and AUC from score logs");
  analyze->add_option("scores", logs, "JSONL score logs")->required()->check(CLI::ExistingFile);
  analyze->add_flag("--json", as_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(config, threads);
    if (*perceive) return cmd_perceive(config, stack_id, method, model, out);
    if (*run) return cmd_run(config, threads, out);
    if (*report) return cmd_report(results, strict);
    if (*serve) return cmd_study_serve(config, port);
    if (*analyze) return cmd_study_analyze(logs, as_json);
  } catch (const Error& e) {
    std::cerr << "error: " << e.to_json() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << Error(ErrorCode::io, e.what()).to_json() << '\n';
    return 2;
  }
  return 1;
}
