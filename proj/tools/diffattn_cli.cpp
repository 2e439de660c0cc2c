// Command-line harness: train, infer, eval, viz-denoise, ablate-steps, synth-data, make-gt.
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "diffattn/commands.hpp"
#include "diffattn/error.hpp"

namespace {

using namespace diffattn;
using nlohmann::json;

constexpr int kInternalExit = 2;

void print_error(std::string_view category, const std::string& message, int code) {
  json j{{"error", {{"category", category}, {"message", message}, {"exit_code", code}}}};
  std::cerr << j.dump() << std::endl;
}

void print_warnings(const Diagnostics& diag) {
  for (const auto& w : diag.warnings) std::cerr << json{{"warning", w}}.dump() << std::endl;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string out;
};

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig::toy_defaults() : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool needs_config) {
  auto* opt = app->add_option("--config", c.config, "Experiment config (INI)");
  if (needs_config) opt->required();
  app->add_option("--seed", c.seed, "Override the config seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Driver-attention prediction by multi-scale conditional diffusion"};
  app.require_subcommand(1);

  Common common;
  Diagnostics diag;
  std::function<json()> action;

  // train
  auto* train = app.add_subcommand("train", "Train a model; writes checkpoints and loss.csv");
  add_common(train, common, true);
  train->add_option("--checkpoint", common.checkpoint, "Resume from this checkpoint");
  train->add_option("--out", common.out, "Output directory (overrides run.out_dir)");
  std::optional<int> max_steps;
  train->add_option("--max-steps", max_steps, "Override optim.max_steps");
  train->callback([&] {
    action = [&] {
      auto cfg = resolve_config(common);
      if (!common.out.empty()) cfg.out_dir = common.out;
      if (max_steps) cfg.optim.max_steps = *max_steps;
      std::optional<fs::path> resume;
      if (!common.checkpoint.empty()) resume = common.checkpoint;
      const auto r = run_training(cfg, resume, &diag, device_from_env());
      return json{{"steps", r.steps},
                  {"final_loss", r.final_loss},
                  {"early_stopped", r.early_stopped},
                  {"checkpoint", r.last_checkpoint.string()}};
    };
  });

  // infer
  auto* infer = app.add_subcommand("infer", "Predict saliency maps for images");
  add_common(infer, common, true);
  infer->add_option("--checkpoint", common.checkpoint, "Model checkpoint")->required();
  infer->add_option("--out", common.out, "Output directory")->required();
  std::vector<std::string> inputs;
  infer->add_option("inputs", inputs, "Image files or directories")->required();
  bool no_overlay = false;
  infer->add_flag("--no-overlay", no_overlay, "Skip heat-map overlays");
  infer->callback([&] {
    action = [&] {
      InferRequest req{resolve_config(common), common.checkpoint, {}, common.out, !no_overlay};
      req.inputs.assign(inputs.begin(), inputs.end());
      const auto written = cmd_infer(req, device_from_env());
      json files = json::array();
      for (const auto& p : written) files.push_back(p.string());
      return json{{"maps", files}};
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Score a prediction directory against a dataset split");
  EvalRequest eval_req;
  std::string pred_dir, eval_root, eval_out;
  eval->add_option("--predictions", pred_dir, "Directory of <id>.png maps")->required();
  eval->add_option("--data", eval_root, "Dataset root")->required();
  eval->add_option("--split", eval_req.split, "train, val or test");
  eval->add_option("--sigma", eval_req.sigma, "GT blur width override");
  eval->add_option("--out", eval_out, "Report directory")->required();
  eval->add_option("--config", common.config, "Unused; accepted for uniformity");
  eval->callback([&] {
    action = [&] {
      eval_req.predictions = pred_dir;
      eval_req.data_root = eval_root;
      eval_req.out = eval_out;
      const auto report = cmd_eval(eval_req, &diag);
      const auto agg = report.aggregate();
      return json{{"count", report.rows.size()}, {"kld", agg.kld}, {"cc", agg.cc}, {"sim", agg.sim},
                  {"nss", agg.nss}, {"auc_judd", agg.auc_judd}};
    };
  });

  // viz-denoise
  auto* viz = app.add_subcommand("viz-denoise", "Dump the denoising chain of one image as a strip");
  add_common(viz, common, true);
  viz->add_option("--checkpoint", common.checkpoint, "Model checkpoint")->required();
  viz->add_option("--out", common.out, "Output PNG")->required();
  std::string viz_image;
  std::vector<int> viz_taus;
  int viz_scale = 0;
  viz->add_option("--image", viz_image, "Input image")->required();
  viz->add_option("--taus", viz_taus, "Plan steps to dump (-1 = final estimate)")->delimiter(',');
  viz->add_option("--scale", viz_scale, "Decoder scale 0..3");
  viz->callback([&] {
    action = [&] {
      VizRequest req{resolve_config(common), common.checkpoint, viz_image, viz_taus, viz_scale, common.out};
      const auto strip = cmd_viz_denoise(req, device_from_env());
      return json{{"strip", common.out}, {"height", strip.height()}, {"width", strip.width()}};
    };
  });

  // ablate-steps
  auto* ablate = app.add_subcommand("ablate-steps", "Compare denoising step counts");
  add_common(ablate, common, true);
  ablate->add_option("--checkpoint", common.checkpoint, "Fixed checkpoint (replan mode)");
  ablate->add_option("--out", common.out, "Output directory")->required();
  std::string mode = "replan";
  std::vector<int> steps;
  std::string ablate_split = "test";
  ablate->add_option("--mode", mode, "retrain (per-T_e training) or replan (fixed checkpoint)")
      ->check(CLI::IsMember({"retrain", "replan"}));
  ablate->add_option("--steps", steps, "Step counts")->delimiter(',')->required();
  ablate->add_option("--split", ablate_split, "Evaluation split");
  ablate->callback([&] {
    action = [&] {
      AblationRequest req;
      req.cfg = resolve_config(common);
      req.checkpoint = common.checkpoint;
      req.mode = mode == "retrain" ? AblationMode::Retrain : AblationMode::Replan;
      req.steps = steps;
      req.split = ablate_split;
      req.out = common.out;
      const auto rows = cmd_ablate_steps(req, &diag, device_from_env());
      json table = json::array();
      for (const auto& r : rows) {
        table.push_back({{"sample_steps", r.sample_steps}, {"kld", r.metrics.kld}, {"cc", r.metrics.cc},
                         {"sim", r.metrics.sim}, {"nss", r.metrics.nss}, {"auc_judd", r.metrics.auc_judd}});
      }
      return json{{"rows", table}};
    };
  });

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic road-scene dataset");
  SynthSpec spec;
  synth->add_option("--count", spec.count, "Number of samples");
  synth->add_option("--height", spec.height, "Image height");
  synth->add_option("--width", spec.width, "Image width");
  synth->add_option("--seed", spec.seed, "Generator seed");
  synth->add_option("--out", common.out, "Dataset root")->required();
  synth->callback([&] {
    action = [&] {
      cmd_synth_data(spec, common.out);
      return json{{"root", common.out}, {"count", spec.count}};
    };
  });

  // make-gt
  auto* make_gt_cmd = app.add_subcommand("make-gt", "Write ground-truth saliency maps for a split");
  std::string gt_root, gt_split = "train";
  double gt_sigma = 0.0;
  make_gt_cmd->add_option("--data", gt_root, "Dataset root")->required();
  make_gt_cmd->add_option("--split", gt_split, "train, val or test");
  make_gt_cmd->add_option("--sigma", gt_sigma, "Blur width override");
  make_gt_cmd->add_option("--out", common.out, "Output directory")->required();
  make_gt_cmd->callback([&] {
    action = [&] {
      const auto written = cmd_make_gt(gt_root, gt_split, gt_sigma, common.out, &diag);
      return json{{"count", written.size()}, {"out", common.out}};
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(category_name(ErrorKind::Config), e.what(), exit_code(ErrorKind::Config));
    return exit_code(ErrorKind::Config);
  }

  try {
    const auto result = action();
    print_warnings(diag);
    std::cout << result.dump() << std::endl;
    return 0;
  } catch (const Error& e) {
    print_warnings(diag);
    print_error(category_name(e.kind()), e.what(), exit_code(e.kind()));
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    print_error("internal", e.what(), kInternalExit);
    return kInternalExit;
  }
}
