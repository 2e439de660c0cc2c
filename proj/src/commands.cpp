#include "diffattn/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>

#include "diffattn/error.hpp"

namespace diffattn {
namespace {

std::vector<fs::path> expand_inputs(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> out;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".png") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      out.push_back(p);
    } else {
      throw Error(ErrorKind::Io, "input " + p.string() + " does not exist");
    }
  }
  if (out.empty()) throw Error(ErrorKind::Data, "no input images");
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "cannot create directory " + dir.string());
}

NoiseSchedule schedule_of(const ExperimentConfig& cfg) {
  return make_schedule(cfg.diffusion.train_steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
}

}  // namespace

std::vector<std::string> determinism_report() {
  auto& ctx = at::globalContext();
  return {
      std::string("deterministic_algorithms = ") + (ctx.deterministicAlgorithms() ? "true" : "false"),
      "intra_op_threads = " + std::to_string(torch::get_num_threads()),
      "sampler = ddim",
  };
}

DiffAttnModel load_model(const ExperimentConfig& cfg, const fs::path& checkpoint, torch::Device device) {
  if (checkpoint.empty()) throw Error(ErrorKind::Config, "--checkpoint is required");
  auto model = make_model(cfg);
  load_checkpoint(checkpoint, *model, nullptr, cfg);
  model->to(device);
  model->eval();
  return model;
}

std::vector<fs::path> cmd_infer(const InferRequest& req, torch::Device device) {
  req.cfg.validate(false);
  auto model = load_model(req.cfg, req.checkpoint, device);
  const auto sched = schedule_of(req.cfg);
  const auto plan = plan_steps(req.cfg.diffusion.train_steps, req.cfg.diffusion.sample_steps);
  ensure_dir(req.out);
  std::vector<fs::path> written;
  for (const auto& input : expand_inputs(req.inputs)) {
    const Image native = read_png(input);
    const Image resized = resize_image(native, req.cfg.data.height, req.cfg.data.width);
    const Grid map = predict_map(model, sched, plan, resized, req.cfg.seed, req.cfg.diffusion.eta);
    const auto stem = input.stem().string();
    const auto map_path = req.out / (stem + ".png");
    write_map_png16(map_path, map);
    if (req.overlay) write_png(req.out / (stem + "_overlay.png"), heat_overlay(native, map));
    written.push_back(map_path);
  }
  return written;
}

EvalReport cmd_eval(const EvalRequest& req, Diagnostics* diag) {
  auto m = read_manifest(req.data_root, parse_split(req.split));
  if (req.sigma > 0.0) m.sigma = req.sigma;
  const auto samples = load_dataset(m, diag);
  EvalReport report;
  for (const auto& s : samples) {
    const auto pred_path = req.predictions / (s.id + ".png");
    if (!fs::exists(pred_path)) throw Error(ErrorKind::Data, "missing prediction " + pred_path.string());
    Grid pred = read_map_png(pred_path);
    const Grid gt = s.gt(diag).grid;
    if (!pred.same_shape(gt)) pred = resize_grid(pred, gt.height(), gt.width());
    report.rows.push_back(evaluate_sample(s.id, pred, gt, s.fixation_map(), diag));
  }
  ensure_dir(req.out);
  report.write_csv(req.out / "metrics.csv");
  auto extra = determinism_report();
  extra.push_back("split = " + req.split);
  report.write_summary(req.out / "summary.txt", extra);
  return report;
}

Grid cmd_viz_denoise(const VizRequest& req, torch::Device device) {
  req.cfg.validate(false);
  if (req.scale < 0 || req.scale >= kNumScales) throw Error(ErrorKind::Config, "scale must lie in [0, 3]");
  auto model = load_model(req.cfg, req.checkpoint, device);
  const auto sched = schedule_of(req.cfg);
  const auto plan = plan_steps(req.cfg.diffusion.train_steps, req.cfg.diffusion.sample_steps);
  const Image img = resize_image(read_png(req.image), req.cfg.data.height, req.cfg.data.width);
  std::array<Trajectory, kNumScales> trajectories;
  model->infer(image_to_tensor(img).unsqueeze(0).to(device), sched, plan, req.cfg.seed, req.cfg.diffusion.eta,
               &trajectories);
  const auto& traj = trajectories[static_cast<std::size_t>(req.scale)];

  std::vector<int> taus = req.taus;
  if (taus.empty()) {
    taus.assign(plan.steps.begin(), plan.steps.end());
    taus.push_back(-1);
  }
  std::vector<Grid> frames;
  for (int tau : taus) {
    auto it = std::find_if(traj.begin(), traj.end(), [&](const auto& entry) { return entry.first == tau; });
    if (it == traj.end()) throw Error(ErrorKind::Plan, "step " + std::to_string(tau) + " is not visited by the plan");
    frames.push_back(tensor_to_grid(from_logit_domain(it->second)));
  }
  const int h = frames.front().height();
  const int w = frames.front().width();
  Grid strip(h, w * static_cast<int>(frames.size()));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) strip.at(y, static_cast<int>(i) * w + x) = frames[i].at(y, x);
    }
  }
  if (!req.out.empty()) {
    if (req.out.has_parent_path()) ensure_dir(req.out.parent_path());
    write_map_png16(req.out, strip);
  }
  return strip;
}

std::vector<AblationRow> cmd_ablate_steps(const AblationRequest& req, Diagnostics* diag, torch::Device device) {
  req.cfg.validate(false);
  if (req.steps.empty()) throw Error(ErrorKind::Config, "no step counts requested");
  const auto samples = load_split(req.cfg, req.split, diag);
  if (samples.empty()) throw Error(ErrorKind::Data, "evaluation split is empty");
  ensure_dir(req.out);
  std::vector<AblationRow> rows;
  const auto sched = schedule_of(req.cfg);

  DiffAttnModel fixed{nullptr};
  if (req.mode == AblationMode::Replan) fixed = load_model(req.cfg, req.checkpoint, device);

  for (int te : req.steps) {
    const auto plan = plan_steps(req.cfg.diffusion.train_steps, te);
    DiffAttnModel model = fixed;
    if (req.mode == AblationMode::Retrain) {
      auto cfg = req.cfg;
      cfg.diffusion.sample_steps = te;
      cfg.out_dir = (req.out / ("te_" + std::to_string(te))).string();
      const auto run = run_training(cfg, std::nullopt, diag, device);
      model = load_model(cfg, run.last_checkpoint, device);
    }
    const auto report = evaluate_model(model, sched, plan, samples, req.cfg.seed, req.cfg.diffusion.eta, diag);
    rows.push_back(AblationRow{te, report.aggregate()});
  }

  std::ofstream out(req.out / "ablation.csv");
  if (!out) throw Error(ErrorKind::Io, "cannot write " + (req.out / "ablation.csv").string());
  out << std::setprecision(10);
  out << "mode,sample_steps,kld,cc,sim,nss,auc_judd\n";
  const char* mode = req.mode == AblationMode::Retrain ? "retrain" : "replan";
  for (const auto& r : rows) {
    out << mode << ',' << r.sample_steps << ',' << r.metrics.kld << ',' << r.metrics.cc << ',' << r.metrics.sim << ','
        << r.metrics.nss << ',' << r.metrics.auc_judd << '\n';
  }
  return rows;
}

void cmd_synth_data(const SynthSpec& spec, const fs::path& out) { synth_dataset(spec, out); }

std::vector<fs::path> cmd_make_gt(const fs::path& data_root, const std::string& split, double sigma,
                                  const fs::path& out, Diagnostics* diag) {
  auto m = read_manifest(data_root, parse_split(split));
  if (sigma > 0.0) m.sigma = sigma;
  const auto samples = load_dataset(m, diag);
  ensure_dir(out);
  std::vector<fs::path> written;
  for (const auto& s : samples) {
    const auto path = out / (s.id + ".png");
    write_map_png16(path, s.gt(diag).grid);
    written.push_back(path);
  }
  return written;
}

}  // namespace diffattn
