#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "villa/eval.hpp"

namespace villa {

// Every tunable of a run. Serialized as flat `key = value` lines.
struct RunConfig {
  GenConfig gen;
  std::size_t test_images = 200;
  std::uint64_t test_seed = 1007;
  EncoderConfig enc;
  TrainHyper map_train;
  MappingConfig map;
  AssignConfig assign;
  double zs_epsilon = 0.1;
  VlmHyper vlm;
  std::uint64_t random_seed = 11;
  int seeds = 1;
  std::vector<double> sweep_c{5.0, 9.9, 14.8, 19.6, 24.5, 29.4};
  std::string sweep_variant = "ft_img";

  static const std::vector<std::string>& keys();
  std::map<std::string, std::string> to_map() const;
  void set(const std::string& key, const std::string& value);
  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  static RunConfig parse(const std::string& text, RunConfig base);

  // Hashes of the settings each stage depends on, chained upstream.
  std::string data_hash() const;
  std::string mapping_hash() const;
  std::string assign_hash() const;
  std::string vlm_hash(VlmVariant v) const;
  std::string eval_hash() const;
};

/// Artifacts of a run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.txt"; }
  std::filesystem::path train() const { return root / "train"; }
  std::filesystem::path test() const { return root / "test"; }
  std::filesystem::path mapping() const { return root / "mapping.ckpt"; }
  std::filesystem::path mapping_loss() const { return root / "mapping_loss.csv"; }
  std::filesystem::path pairs(const std::string& name) const { return root / ("pairs_" + name + ".jsonl"); }
  std::filesystem::path augmented(const std::string& name) const { return root / ("augmented_" + name + ".jsonl"); }
  std::filesystem::path assign_meta() const { return root / "assign.json"; }
  std::filesystem::path vlm(VlmVariant v) const { return root / ("vlm_" + std::string(to_string(v)) + ".ckpt"); }
  std::filesystem::path vlm_loss(VlmVariant v) const {
    return root / ("vlm_" + std::string(to_string(v)) + "_loss.csv");
  }
  std::filesystem::path metrics_csv() const { return root / "metrics.csv"; }
  std::filesystem::path metrics_json() const { return root / "metrics.json"; }
  std::filesystem::path sweep_csv() const { return root / "sweep.csv"; }
  std::filesystem::path report() const { return root / "report.txt"; }
};

/// Writes config.txt. Existing artifacts are left alone; later stages detect
/// stale inputs through the chained hashes.
void init_run(const RunPaths& run, const RunConfig& cfg);
RunConfig load_run_config(const RunPaths& run);

void stage_generate(const RunPaths& run, const RunConfig& cfg, int threads);
void stage_train_map(const RunPaths& run, const RunConfig& cfg, int threads);
void stage_assign(const RunPaths& run, const RunConfig& cfg, int threads);
void stage_train_vlm(const RunPaths& run, const RunConfig& cfg, const std::vector<VlmVariant>& variants, int threads);
MetricsReport stage_evaluate(const RunPaths& run, const RunConfig& cfg, const std::vector<VlmVariant>& variants,
                             int threads);
std::string stage_report(const RunPaths& run);

struct SweepRow {
  double c = 0.0;
  double t2r_rprec = 0.0;
  double r2t_rprec = 0.0;
};

/// Generates, trains one variant and evaluates it for each c (averaging over
/// cfg.seeds seeds). Everything stays in memory.
std::vector<SweepRow> sweep_complexity(const RunConfig& cfg, const std::vector<double>& cs, VlmVariant variant,
                                       int threads);
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> sweep_from_csv(const std::string& text);

/// The in-memory core of generate..evaluate for a single variant, shared by
/// the sweep and by tests.
RetrievalMetrics run_variant(const RunConfig& cfg, VlmVariant variant, int threads);

std::string render_report(const MetricsReport& report, const std::vector<SweepRow>& sweep);

}  // namespace villa
