// villa: command-line driver for DocMNIST runs.
//
//   villa generate --c 29.4 --b 10000 --seed 7 --out runs/a
//   villa train-map --run runs/a
//   villa assign --run runs/a
//   villa train-vlm --run runs/a --variant all
//   villa evaluate --run runs/a
//   villa sweep --run runs/a --sweep-c 5,29.4
//   villa report --run runs/a
//
// Settings come from defaults, then <run>/config.txt, then --config, then flags.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include "villa/pipeline.hpp"

namespace fs = std::filesystem;
using namespace villa;

namespace {

struct Common {
  std::string run_dir;
  std::string config_file;
  int threads = 0;
  std::map<std::string, std::string> overrides;
};

std::string flag_name(const std::string& key) {
  std::string s = key;
  for (auto& ch : s)
    if (ch == '_') ch = '-';
  return "--" + s;
}

void add_common(CLI::App* cmd, Common& common, std::map<std::string, std::optional<std::string>>& flags) {
  cmd->add_option("--out,--run", common.run_dir, "Run directory")->required();
  cmd->add_option("--config", common.config_file, "key = value config file");
  cmd->add_option("--threads", common.threads, "Worker threads (falls back to VILLA_THREADS)");
  for (const auto& key : RunConfig::keys()) cmd->add_option(flag_name(key), flags[key], "config key " + key);
}

RunConfig resolve_config(const Common& common, const std::map<std::string, std::optional<std::string>>& flags) {
  const RunPaths run{common.run_dir};
  RunConfig cfg;
  if (fs::exists(run.config())) cfg = RunConfig::parse(read_file(run.config()), cfg);
  if (!common.config_file.empty()) cfg = RunConfig::parse(read_file(common.config_file), cfg);
  for (const auto& [key, value] : flags)
    if (value) cfg.set(key, *value);
  return cfg;
}

std::vector<VlmVariant> parse_variants(const std::string& spec) {
  if (spec == "all") return {std::begin(kAllVariants), std::end(kAllVariants)};
  std::vector<VlmVariant> out;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    out.push_back(vlm_variant_from_string(spec.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"villa: DocMNIST region-attribute mapping and VLM lab"};
  app.require_subcommand(1);

  Common common;
  std::map<std::string, std::optional<std::string>> flags;
  std::string variants = "all";

  auto* gen = app.add_subcommand("generate", "Generate the train and test DocMNIST sets");
  auto* map = app.add_subcommand("train-map", "Train the region-attribute mapping model");
  auto* assign = app.add_subcommand("assign", "Assign attributes to regions and build augmented streams");
  auto* vlm = app.add_subcommand("train-vlm", "Train one-to-one VLM variants");
  auto* eval = app.add_subcommand("evaluate", "Retrieval and mapping-quality metrics");
  auto* sweep = app.add_subcommand("sweep", "Complexity sweep for one variant");
  auto* report = app.add_subcommand("report", "Render metrics and sweep as a text table");
  auto* all = app.add_subcommand("all", "generate, train-map, assign, train-vlm, evaluate, report");
  for (auto* cmd : {gen, map, assign, vlm, eval, sweep, report, all}) add_common(cmd, common, flags);
  for (auto* cmd : {vlm, eval}) cmd->add_option("--variant", variants, "Variant list or 'all'");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const RunPaths run{common.run_dir};
    const int threads = resolve_threads(common.threads);
    const RunConfig cfg = resolve_config(common, flags);
    const auto* cmd = app.get_subcommands().front();

    if (cmd == report) {
      std::cout << stage_report(run);
      return 0;
    }
    if (cmd != gen && cmd != all && !fs::exists(run.config())) {
      throw Error(ErrorKind::MissingArtifact, run.config().string() + " not found; run 'generate' first");
    }
    init_run(run, cfg);

    if (cmd == gen || cmd == all) {
      stage_generate(run, cfg, threads);
      std::cout << "generated " << run.train().string() << " and " << run.test().string() << "\n";
    }
    if (cmd == map || cmd == all) {
      stage_train_map(run, cfg, threads);
      std::cout << "wrote " << run.mapping().string() << "\n";
    }
    if (cmd == assign || cmd == all) {
      stage_assign(run, cfg, threads);
      std::cout << "wrote pairs and augmented streams under " << run.root.string() << "\n";
    }
    if (cmd == vlm || cmd == all) {
      stage_train_vlm(run, cfg, parse_variants(cmd == all ? "all" : variants), threads);
      std::cout << "trained VLM variants\n";
    }
    if (cmd == eval || cmd == all) {
      stage_evaluate(run, cfg, parse_variants(cmd == all ? "all" : variants), threads);
      std::cout << "wrote " << run.metrics_csv().string() << "\n";
    }
    if (cmd == sweep) {
      const auto rows = sweep_complexity(cfg, cfg.sweep_c, vlm_variant_from_string(cfg.sweep_variant), threads);
      write_file_atomic(run.sweep_csv(), sweep_csv(rows));
      std::cout << sweep_csv(rows);
    }
    if (cmd == all) std::cout << stage_report(run);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
