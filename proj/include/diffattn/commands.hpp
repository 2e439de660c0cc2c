#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "diffattn/config.hpp"
#include "diffattn/datakit.hpp"
#include "diffattn/metrics.hpp"
#include "diffattn/trainer.hpp"

namespace diffattn {

namespace fs = std::filesystem;

/// Backend determinism flags recorded in every report.
std::vector<std::string> determinism_report();

/// Rebuilds the model for `cfg` and restores `checkpoint` into it.
DiffAttnModel load_model(const ExperimentConfig& cfg, const fs::path& checkpoint, torch::Device device = torch::kCPU);

struct InferRequest {
  ExperimentConfig cfg;
  fs::path checkpoint;
  /// PNG files, or directories whose *.png files are taken in name order.
  std::vector<fs::path> inputs;
  fs::path out;
  bool overlay = true;
};

/// Writes <out>/<stem>.png (16-bit Ŝ^0 at the model resolution) and, when requested,
/// <out>/<stem>_overlay.png at the input image's resolution. Returns the map paths.
std::vector<fs::path> cmd_infer(const InferRequest& req, torch::Device device = torch::kCPU);

struct EvalRequest {
  fs::path predictions;
  fs::path data_root;
  std::string split = "test";
  /// <= 0 keeps the manifest value.
  double sigma = 0.0;
  fs::path out;
};

/// Scores <predictions>/<id>.png against the split's GT and fixations; writes
/// metrics.csv and summary.txt into `out`.
EvalReport cmd_eval(const EvalRequest& req, Diagnostics* diag = nullptr);

struct VizRequest {
  ExperimentConfig cfg;
  fs::path checkpoint;
  fs::path image;
  /// Plan steps to dump; -1 selects the final clean estimate. Empty means every plan step plus -1.
  std::vector<int> taus;
  int scale = 0;
  fs::path out;
};

/// Sigmoid-mapped latents of the chain at the requested steps, laid side by side.
Grid cmd_viz_denoise(const VizRequest& req, torch::Device device = torch::kCPU);

enum class AblationMode { Retrain, Replan };

struct AblationRequest {
  ExperimentConfig cfg;
  /// Required for Replan.
  fs::path checkpoint;
  AblationMode mode = AblationMode::Replan;
  std::vector<int> steps;
  std::string split = "test";
  fs::path out;
};

struct AblationRow {
  int sample_steps = 0;
  MetricRow metrics;
};

/// One row per requested step count; also written to <out>/ablation.csv.
std::vector<AblationRow> cmd_ablate_steps(const AblationRequest& req, Diagnostics* diag = nullptr,
                                          torch::Device device = torch::kCPU);

void cmd_synth_data(const SynthSpec& spec, const fs::path& out);

/// Writes the 16-bit GT map of every sample in the split to <out>/<id>.png.
std::vector<fs::path> cmd_make_gt(const fs::path& data_root, const std::string& split, double sigma,
                                  const fs::path& out, Diagnostics* diag = nullptr);

}  // namespace diffattn
