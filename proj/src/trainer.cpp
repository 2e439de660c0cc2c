#include "diffattn/trainer.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "diffattn/error.hpp"

namespace diffattn {
namespace {

namespace fs = std::filesystem;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t salt) { return mix(mix(mix(a) ^ b) ^ salt); }

constexpr std::uint64_t kSaltEpoch = 0x65706f6368ULL;
constexpr std::uint64_t kSaltAugment = 0x6175676dULL;
constexpr std::uint64_t kSaltNoise = 0x6e6f697365ULL;

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const OptimConfig& o, std::vector<torch::Tensor> params) {
  if (o.kind == "adam") {
    return std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(o.learning_rate).weight_decay(o.weight_decay));
  }
  return std::make_unique<torch::optim::AdamW>(
      params, torch::optim::AdamWOptions(o.learning_rate).weight_decay(o.weight_decay));
}

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%06lld.ckpt", static_cast<long long>(step));
  return buf;
}

}  // namespace

std::vector<Sample> load_split(const ExperimentConfig& cfg, const std::string& split, Diagnostics* diag) {
  if (cfg.data.root.empty()) throw Error(ErrorKind::Config, "data.root is not set");
  auto m = read_manifest(cfg.data.root, parse_split(split));
  m.height = cfg.data.height;
  m.width = cfg.data.width;
  if (cfg.data.sigma > 0.0) m.sigma = cfg.data.sigma;
  return load_dataset(m, diag);
}

Trainer::Trainer(ExperimentConfig cfg, std::vector<Sample> train, torch::Device device)
    : cfg_(std::move(cfg)), train_(std::move(train)), device_(device) {
  cfg_.validate(false);
  if (train_.empty()) throw Error(ErrorKind::Data, "training split is empty");
  for (const auto& s : train_) {
    if (s.image.height != cfg_.data.height || s.image.width != cfg_.data.width) {
      throw Error(ErrorKind::Shape, "sample " + s.id + " does not match the configured input size");
    }
  }
  torch::manual_seed(cfg_.seed);
  model_ = make_model(cfg_);
  model_->to(device_);
  sched_ = make_schedule(cfg_.diffusion.train_steps, cfg_.diffusion.beta_start, cfg_.diffusion.beta_end);
  optim_ = make_optimizer(cfg_.optim, model_->trainable_parameters());
}

Trainer::Batch Trainer::make_batch(std::int64_t step) const {
  const auto n = static_cast<std::int64_t>(train_.size());
  const auto b = static_cast<std::int64_t>(cfg_.optim.batch_size);
  std::vector<torch::Tensor> images;
  std::array<std::vector<torch::Tensor>, kNumScales> gts;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> perm(train_.size());
  for (std::int64_t k = 0; k < b; ++k) {
    const std::int64_t global = step * b + k;
    const std::int64_t epoch = global / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(mix(cfg_.seed, static_cast<std::uint64_t>(epoch), kSaltEpoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    const Sample& base = train_[perm[static_cast<std::size_t>(global % n)]];
    Sample s = base;
    if (cfg_.data.augment) {
      std::mt19937_64 rng(mix(cfg_.seed, static_cast<std::uint64_t>(global), kSaltAugment));
      s = augment(base, rng);
    }
    images.push_back(image_to_tensor(s.image));
    const auto targets = scale_targets(s.gt().grid);
    for (std::size_t i = 0; i < kNumScales; ++i) gts[i].push_back(grid_to_tensor(targets[i]));
  }
  Batch batch;
  batch.images = torch::stack(images).to(device_);
  for (std::size_t i = 0; i < kNumScales; ++i) batch.gt[i] = torch::stack(gts[i]).to(device_);
  return batch;
}

TrainForward Trainer::forward(std::int64_t step) {
  auto batch = make_batch(step);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(mix(cfg_.seed, static_cast<std::uint64_t>(step), kSaltNoise));
  return model_->forward_train(batch.images, batch.gt, sched_, gen, cfg_.loss);
}

StepStats Trainer::step() {
  model_->train();
  auto out = forward(step_);
  StepStats stats;
  stats.step = step_ + 1;
  stats.loss = out.loss.item<double>();
  if (!std::isfinite(stats.loss)) {
    throw Error(ErrorKind::Numeric, "non-finite loss at step " + std::to_string(stats.step));
  }
  for (const auto& t : out.terms) {
    stats.bce += t.bce.item<double>() / kNumScales;
    stats.kld += t.kld.item<double>() / kNumScales;
    stats.dd += t.dd.item<double>() / kNumScales;
  }
  optim_->zero_grad();
  out.loss.backward();
  optim_->step();
  ++step_;
  return stats;
}

void Trainer::save(const fs::path& path) const { save_checkpoint(path, *model_, optim_.get(), step_, cfg_); }

void Trainer::resume(const fs::path& path) {
  const auto info = load_checkpoint(path, *model_, optim_.get(), cfg_);
  step_ = info.step;
}

Grid predict_map(DiffAttnModel& model, const NoiseSchedule& sched, const SamplingPlan& plan, const Image& image,
                 std::uint64_t seed, double eta) {
  model->eval();
  const auto device = model->parameters().empty() ? torch::Device(torch::kCPU) : model->parameters()[0].device();
  auto x = image_to_tensor(image).unsqueeze(0).to(device);
  return tensor_to_grid(model->infer(x, sched, plan, seed, eta).finest());
}

EvalReport evaluate_model(DiffAttnModel& model, const NoiseSchedule& sched, const SamplingPlan& plan,
                          const std::vector<Sample>& samples, std::uint64_t seed, double eta, Diagnostics* diag) {
  EvalReport report;
  for (const auto& s : samples) {
    const auto pred = predict_map(model, sched, plan, s.image, seed, eta);
    report.rows.push_back(evaluate_sample(s.id, pred, s.gt(diag).grid, s.fixation_map(), diag));
  }
  return report;
}

TrainRunResult run_training(const ExperimentConfig& cfg, const std::optional<fs::path>& resume, Diagnostics* diag,
                            torch::Device device) {
  cfg.validate(true);
  const fs::path out_dir = cfg.out_dir;
  fs::create_directories(out_dir / "checkpoints");
  save_config(cfg, out_dir / "config.ini");

  auto train = load_split(cfg, cfg.data.split, diag);
  std::vector<Sample> val;
  if (cfg.optim.eval_every > 0) val = load_split(cfg, cfg.data.val_split, diag);

  Trainer trainer(cfg, std::move(train), device);
  TrainRunResult result;
  if (resume) {
    trainer.resume(*resume);
    result.last_checkpoint = *resume;
  }

  const auto log_path = out_dir / "loss.csv";
  const bool fresh = !resume || !fs::exists(log_path);
  std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
  if (!log) throw Error(ErrorKind::Io, "cannot write " + log_path.string());
  log << std::setprecision(10);
  if (fresh) log << "step,loss,bce,kld,dd\n";

  const auto plan = plan_steps(cfg.diffusion.train_steps, cfg.diffusion.sample_steps);
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;
  auto checkpoint = [&](const fs::path& path) {
    trainer.save(path);
    result.last_checkpoint = path;
  };

  while (trainer.steps_done() < cfg.optim.max_steps) {
    StepStats stats;
    try {
      stats = trainer.step();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numeric) throw;
      const std::string last = result.last_checkpoint.empty() ? "none" : result.last_checkpoint.string();
      throw Error(ErrorKind::Numeric, std::string(e.what()) + "; last checkpoint: " + last);
    }
    result.final_loss = stats.loss;
    log << stats.step << ',' << stats.loss << ',' << stats.bce << ',' << stats.kld << ',' << stats.dd << '\n';
    log.flush();

    if (cfg.optim.checkpoint_every > 0 && stats.step % cfg.optim.checkpoint_every == 0) {
      checkpoint(out_dir / "checkpoints" / checkpoint_name(stats.step));
    }
    if (cfg.optim.eval_every > 0 && !val.empty() && stats.step % cfg.optim.eval_every == 0) {
      const double kld =
          evaluate_model(trainer.model(), trainer.schedule(), plan, val, cfg.seed, cfg.diffusion.eta, diag)
              .aggregate()
              .kld;
      if (kld < best_val) {
        best_val = kld;
        stale = 0;
        trainer.save(out_dir / "best.ckpt");
      } else if (++stale >= cfg.optim.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  log.flush();
  result.steps = trainer.steps_done();
  checkpoint(out_dir / "final.ckpt");
  return result;
}

}  // namespace diffattn
