#include "diffattn/config.hpp"

#include "diffattn/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace diffattn {
namespace {

using boost::property_tree::ptree;

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string backbone_name(BackboneKind k) { return k == BackboneKind::Toy ? "toy" : "pretrained-adapter"; }

BackboneKind parse_backbone(const std::string& s) {
  if (s == "toy") return BackboneKind::Toy;
  if (s == "pretrained-adapter") return BackboneKind::PretrainedAdapter;
  throw Error(ErrorKind::Config, "unknown backbone '" + s + "'");
}

ptree to_tree(const ExperimentConfig& c) {
  ptree t;
  t.put("model.backbone", backbone_name(c.model.backbone));
  t.put("model.backbone_checkpoint", c.model.backbone_checkpoint);
  t.put("model.base_channels", c.model.base_channels);
  t.put("model.reduction", c.model.reduction);
  t.put("model.enhance", c.model.enhance ? "true" : "false");
  t.put("model.llm_provenance", std::string(provenance_name(c.model.provenance)));
  t.put("model.llm_width", c.model.llm.width);
  t.put("model.llm_heads", c.model.llm.heads);
  t.put("model.llm_kv_heads", c.model.llm.kv_heads);
  t.put("model.llm_ffn_width", c.model.llm.ffn_width);
  t.put("model.llm_rope_theta", num(c.model.llm.rope_theta));
  t.put("model.llm_norm_eps", num(c.model.llm.norm_eps));
  t.put("model.llm_checkpoint", c.model.llm_checkpoint);
  t.put("model.llm_layer_index", c.model.llm_layer_index);
  t.put("model.unet_width", c.model.unet.width);
  t.put("model.time_dim", c.model.unet.time_dim);
  t.put("model.groups", c.model.unet.groups);

  t.put("diffusion.train_steps", c.diffusion.train_steps);
  t.put("diffusion.beta_start", num(c.diffusion.beta_start));
  t.put("diffusion.beta_end", num(c.diffusion.beta_end));
  t.put("diffusion.sample_steps", c.diffusion.sample_steps);
  t.put("diffusion.eta", num(c.diffusion.eta));

  t.put("loss.lambda1", num(c.loss.lambda1));
  t.put("loss.lambda2", num(c.loss.lambda2));
  t.put("loss.lambda3", num(c.loss.lambda3));

  t.put("optim.kind", c.optim.kind);
  t.put("optim.learning_rate", num(c.optim.learning_rate));
  t.put("optim.weight_decay", num(c.optim.weight_decay));
  t.put("optim.batch_size", c.optim.batch_size);
  t.put("optim.max_steps", c.optim.max_steps);
  t.put("optim.checkpoint_every", c.optim.checkpoint_every);
  t.put("optim.eval_every", c.optim.eval_every);
  t.put("optim.patience", c.optim.patience);

  t.put("data.root", c.data.root);
  t.put("data.split", c.data.split);
  t.put("data.val_split", c.data.val_split);
  t.put("data.sigma", num(c.data.sigma));
  t.put("data.height", c.data.height);
  t.put("data.width", c.data.width);
  t.put("data.augment", c.data.augment ? "true" : "false");

  t.put("run.seed", c.seed);
  t.put("run.out_dir", c.out_dir);
  return t;
}

template <typename T>
T get(const ptree& t, const std::string& key, T fallback) {
  const auto node = t.get_child_optional(key);
  if (!node) return fallback;
  const auto v = node->template get_value_optional<T>();
  if (!v) throw Error(ErrorKind::Config, "config key '" + key + "' has an invalid value '" + node->data() + "'");
  return *v;
}

bool get_bool(const ptree& t, const std::string& key, bool fallback) {
  const auto v = t.get<std::string>(key, fallback ? "true" : "false");
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::Config, "config key '" + key + "' must be a boolean");
}

void reject_unknown_keys(const ptree& t) {
  const ptree known = to_tree(ExperimentConfig::toy_defaults());
  for (const auto& [section, body] : t) {
    if (body.empty() && !body.data().empty()) throw Error(ErrorKind::Config, "config key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (full == "run.profile" || full == "loss.preset") continue;
      if (!known.get_child_optional(ptree::path_type(full, '.'))) {
        throw Error(ErrorKind::Config, "unknown config key '" + full + "'");
      }
    }
  }
}

ExperimentConfig from_tree(const ptree& t) {
  reject_unknown_keys(t);
  ExperimentConfig c = ExperimentConfig::toy_defaults();
  if (auto profile = t.get_optional<std::string>("run.profile")) {
    if (*profile == "paper") c = ExperimentConfig::paper_defaults();
    else if (*profile != "toy") throw Error(ErrorKind::Config, "unknown profile '" + *profile + "'");
  }
  c.model.backbone = parse_backbone(get<std::string>(t, "model.backbone", backbone_name(c.model.backbone)));
  c.model.backbone_checkpoint = get(t, "model.backbone_checkpoint", c.model.backbone_checkpoint);
  c.model.base_channels = get(t, "model.base_channels", c.model.base_channels);
  c.model.reduction = get(t, "model.reduction", c.model.reduction);
  c.model.enhance = get_bool(t, "model.enhance", c.model.enhance);
  c.model.provenance = parse_provenance(
      get<std::string>(t, "model.llm_provenance", std::string(provenance_name(c.model.provenance))));
  c.model.llm.width = get(t, "model.llm_width", c.model.llm.width);
  c.model.llm.heads = get(t, "model.llm_heads", c.model.llm.heads);
  c.model.llm.kv_heads = get(t, "model.llm_kv_heads", c.model.llm.kv_heads);
  c.model.llm.ffn_width = get(t, "model.llm_ffn_width", c.model.llm.ffn_width);
  c.model.llm.rope_theta = get(t, "model.llm_rope_theta", c.model.llm.rope_theta);
  c.model.llm.norm_eps = get(t, "model.llm_norm_eps", c.model.llm.norm_eps);
  c.model.llm_checkpoint = get(t, "model.llm_checkpoint", c.model.llm_checkpoint);
  c.model.llm_layer_index = get(t, "model.llm_layer_index", c.model.llm_layer_index);
  c.model.unet.width = get(t, "model.unet_width", c.model.unet.width);
  c.model.unet.time_dim = get(t, "model.time_dim", c.model.unet.time_dim);
  c.model.unet.groups = get(t, "model.groups", c.model.unet.groups);

  c.diffusion.train_steps = get(t, "diffusion.train_steps", c.diffusion.train_steps);
  c.diffusion.beta_start = get(t, "diffusion.beta_start", c.diffusion.beta_start);
  c.diffusion.beta_end = get(t, "diffusion.beta_end", c.diffusion.beta_end);
  c.diffusion.sample_steps = get(t, "diffusion.sample_steps", c.diffusion.sample_steps);
  c.diffusion.eta = get(t, "diffusion.eta", c.diffusion.eta);

  if (auto preset = t.get_optional<std::string>("loss.preset")) c.loss = dataset_preset(*preset);
  c.loss.lambda1 = get(t, "loss.lambda1", c.loss.lambda1);
  c.loss.lambda2 = get(t, "loss.lambda2", c.loss.lambda2);
  c.loss.lambda3 = get(t, "loss.lambda3", c.loss.lambda3);

  c.optim.kind = get(t, "optim.kind", c.optim.kind);
  c.optim.learning_rate = get(t, "optim.learning_rate", c.optim.learning_rate);
  c.optim.weight_decay = get(t, "optim.weight_decay", c.optim.weight_decay);
  c.optim.batch_size = get(t, "optim.batch_size", c.optim.batch_size);
  c.optim.max_steps = get(t, "optim.max_steps", c.optim.max_steps);
  c.optim.checkpoint_every = get(t, "optim.checkpoint_every", c.optim.checkpoint_every);
  c.optim.eval_every = get(t, "optim.eval_every", c.optim.eval_every);
  c.optim.patience = get(t, "optim.patience", c.optim.patience);

  c.data.root = get(t, "data.root", c.data.root);
  c.data.split = get(t, "data.split", c.data.split);
  c.data.val_split = get(t, "data.val_split", c.data.val_split);
  c.data.sigma = get(t, "data.sigma", c.data.sigma);
  c.data.height = get(t, "data.height", c.data.height);
  c.data.width = get(t, "data.width", c.data.width);
  c.data.augment = get_bool(t, "data.augment", c.data.augment);

  c.seed = get<std::uint64_t>(t, "run.seed", c.seed);
  c.out_dir = get(t, "run.out_dir", c.out_dir);
  return c;
}

}  // namespace

ExperimentConfig ExperimentConfig::toy_defaults() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::paper_defaults() {
  ExperimentConfig c;
  c.model.base_channels = 128;
  c.model.provenance = Provenance::PretrainedFrozen;
  c.model.llm = DecoderLayerConfig{};
  c.model.unet = UNetConfig{64, 128, 8};
  c.diffusion.sample_steps = 15;
  c.loss = LossWeights{1.0, 1.0, 0.001};
  c.optim.learning_rate = 1e-5;
  c.optim.weight_decay = 1e-3;
  c.optim.batch_size = 18;
  c.optim.max_steps = 100000;
  c.optim.eval_every = 1000;
  c.data.height = 192;
  c.data.width = 320;
  return c;
}

void ExperimentConfig::validate(bool check_paths) const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, msg); };
  if (model.base_channels < 1) fail("model.base_channels must be >= 1");
  if (model.unet.width < 1 || model.unet.time_dim < 2 || model.unet.time_dim % 2 != 0) {
    fail("model.unet_width must be >= 1 and model.time_dim even");
  }
  if (data.height <= 0 || data.width <= 0 || data.height % 32 != 0 || data.width % 32 != 0) {
    fail("data.height and data.width must be positive multiples of 32");
  }
  if (diffusion.train_steps < 1) fail("diffusion.train_steps must be >= 1");
  if (diffusion.sample_steps < 1 || diffusion.sample_steps > diffusion.train_steps) {
    fail("diffusion.sample_steps must lie in [1, train_steps]");
  }
  if (diffusion.eta < 0.0) fail("diffusion.eta must be >= 0");
  diffattn::validate(loss);
  if (optim.kind != "adamw" && optim.kind != "adam") fail("optim.kind must be adamw or adam");
  if (!(optim.learning_rate > 0.0)) fail("optim.learning_rate must be > 0");
  if (optim.batch_size < 1) fail("optim.batch_size must be >= 1");
  if (optim.max_steps < 0) fail("optim.max_steps must be >= 0");
  if (!check_paths) return;
  namespace fs = std::filesystem;
  if (!data.root.empty() && !fs::is_directory(data.root)) fail("data.root '" + data.root + "' does not exist");
  if (model.backbone == BackboneKind::PretrainedAdapter && !fs::exists(model.backbone_checkpoint)) {
    fail("model.backbone_checkpoint '" + model.backbone_checkpoint + "' does not exist");
  }
  const bool pretrained = model.provenance == Provenance::PretrainedFrozen ||
                          model.provenance == Provenance::PretrainedTrainable;
  if (model.enhance && pretrained && !fs::exists(model.llm_checkpoint)) {
    fail("model.llm_checkpoint '" + model.llm_checkpoint + "' does not exist");
  }
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::ostringstream out;
  boost::property_tree::write_ini(out, to_tree(cfg));
  return out.str();
}

ExperimentConfig parse_ini(const std::string& text) {
  std::istringstream in(text);
  ptree t;
  try {
    boost::property_tree::read_ini(in, t);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorKind::Config, "malformed config: " + e.message());
  }
  return from_tree(t);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_ini(buf.str());
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write config " + path.string());
  out << to_ini(cfg);
}

std::string architecture_signature(const ExperimentConfig& cfg) {
  auto t = to_tree(cfg);
  ptree sig;
  sig.put_child("model", t.get_child("model"));
  sig.put("data.height", cfg.data.height);
  sig.put("data.width", cfg.data.width);
  sig.get_child("model").erase("backbone_checkpoint");
  sig.get_child("model").erase("llm_checkpoint");
  std::ostringstream out;
  boost::property_tree::write_ini(out, sig);
  return out.str();
}

}  // namespace diffattn
