#include "diffattn/llm_enhance.hpp"

#include <cmath>
#include <cstring>

#include "diffattn/error.hpp"

namespace diffattn {

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::IdentityStub: return "identity-stub";
    case Provenance::RandomFrozen: return "random-frozen";
    case Provenance::RandomTrainable: return "random-trainable";
    case Provenance::PretrainedFrozen: return "pretrained-frozen";
    case Provenance::PretrainedTrainable: return "pretrained-trainable";
  }
  return "unknown";
}

Provenance parse_provenance(std::string_view name) {
  for (auto p : {Provenance::IdentityStub, Provenance::RandomFrozen, Provenance::RandomTrainable,
                 Provenance::PretrainedFrozen, Provenance::PretrainedTrainable}) {
    if (provenance_name(p) == name) return p;
  }
  throw Error(ErrorKind::Config, "unknown sequence-layer provenance '" + std::string(name) + "'");
}

bool is_frozen(Provenance p) {
  return p == Provenance::IdentityStub || p == Provenance::RandomFrozen ||
         p == Provenance::PretrainedFrozen;
}

namespace detail {

RmsNormImpl::RmsNormImpl(int width, double eps) : eps_(eps) {
  weight = register_parameter("weight", torch::ones({width}));
}

torch::Tensor RmsNormImpl::forward(const torch::Tensor& x) {
  auto rms = torch::rsqrt(x.pow(2).mean(-1, /*keepdim=*/true) + eps_);
  return x * rms * weight;
}

SelfAttentionImpl::SelfAttentionImpl(const DecoderLayerConfig& cfg) : cfg_(cfg) {
  if (cfg.heads < 1 || cfg.kv_heads < 1 || cfg.width % cfg.heads != 0 || cfg.heads % cfg.kv_heads != 0) {
    throw Error(ErrorKind::Config, "decoder layer: width must divide into heads and heads into kv_heads");
  }
  const int head_dim = cfg.width / cfg.heads;
  if (head_dim % 2 != 0) throw Error(ErrorKind::Config, "decoder layer: head dim must be even");
  auto linear = [](int in, int out) { return torch::nn::Linear(torch::nn::LinearOptions(in, out).bias(false)); };
  q_proj = register_module("q_proj", linear(cfg.width, cfg.heads * head_dim));
  k_proj = register_module("k_proj", linear(cfg.width, cfg.kv_heads * head_dim));
  v_proj = register_module("v_proj", linear(cfg.width, cfg.kv_heads * head_dim));
  o_proj = register_module("o_proj", linear(cfg.heads * head_dim, cfg.width));
}

// Rotary embedding in the half-split layout: x * cos + rotate_half(x) * sin.
torch::Tensor SelfAttentionImpl::rotate(const torch::Tensor& x) const {
  const auto n = x.size(2);
  const auto head_dim = x.size(3);
  const auto half = head_dim / 2;
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto inv_freq = torch::pow(cfg_.rope_theta, -torch::arange(0, half, opts) * 2.0 / static_cast<double>(head_dim));
  auto angles = torch::outer(torch::arange(0, n, opts), inv_freq);
  auto emb = torch::cat({angles, angles}, -1).to(x.dtype());
  auto cos = emb.cos().view({1, 1, n, head_dim});
  auto sin = emb.sin().view({1, 1, n, head_dim});
  auto x1 = x.narrow(-1, 0, half);
  auto x2 = x.narrow(-1, half, half);
  auto rotated = torch::cat({-x2, x1}, -1);
  return x * cos + rotated * sin;
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0);
  const auto n = x.size(1);
  const int head_dim = cfg_.width / cfg_.heads;
  auto q = q_proj(x).view({b, n, cfg_.heads, head_dim}).transpose(1, 2);
  auto k = k_proj(x).view({b, n, cfg_.kv_heads, head_dim}).transpose(1, 2);
  auto v = v_proj(x).view({b, n, cfg_.kv_heads, head_dim}).transpose(1, 2);
  q = rotate(q);
  k = rotate(k);
  const int groups = cfg_.heads / cfg_.kv_heads;
  if (groups > 1) {
    k = k.repeat_interleave(groups, 1);
    v = v.repeat_interleave(groups, 1);
  }
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
  auto attn = torch::matmul(torch::softmax(scores, -1), v);
  return o_proj(attn.transpose(1, 2).reshape({b, n, cfg_.heads * head_dim}));
}

GatedMlpImpl::GatedMlpImpl(const DecoderLayerConfig& cfg) {
  auto linear = [](int in, int out) { return torch::nn::Linear(torch::nn::LinearOptions(in, out).bias(false)); };
  gate_proj = register_module("gate_proj", linear(cfg.width, cfg.ffn_width));
  up_proj = register_module("up_proj", linear(cfg.width, cfg.ffn_width));
  down_proj = register_module("down_proj", linear(cfg.ffn_width, cfg.width));
}

torch::Tensor GatedMlpImpl::forward(const torch::Tensor& x) {
  return down_proj(torch::silu(gate_proj(x)) * up_proj(x));
}

}  // namespace detail

DecoderLayer::DecoderLayer(DecoderLayerConfig cfg, Provenance provenance)
    : cfg_(cfg), provenance_(provenance) {
  input_layernorm = register_module("input_layernorm", detail::RmsNorm(cfg.width, cfg.norm_eps));
  self_attn = register_module("self_attn", detail::SelfAttention(cfg));
  post_attention_layernorm =
      register_module("post_attention_layernorm", detail::RmsNorm(cfg.width, cfg.norm_eps));
  mlp = register_module("mlp", detail::GatedMlp(cfg));

  torch::NoGradGuard guard;
  for (auto& p : named_parameters()) {
    if (p.key().find("layernorm") == std::string::npos) p.value().normal_(0.0, 0.02);
  }
}

torch::Tensor DecoderLayer::forward(const torch::Tensor& tokens) {
  auto h = tokens + self_attn(input_layernorm(tokens));
  return h + mlp(post_attention_layernorm(h));
}

void DecoderLayer::load_weights(const std::string& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path);
  } catch (const c10::Error& e) {
    throw Error(ErrorKind::Io, "cannot read sequence-layer weights '" + path + "': " + e.what_without_backtrace());
  }
  torch::NoGradGuard guard;
  for (auto& p : named_parameters()) {
    torch::Tensor t;
    if (!archive.try_read(p.key(), t)) {
      throw Error(ErrorKind::Data, "sequence-layer checkpoint '" + path + "' lacks " + p.key());
    }
    if (!t.sizes().equals(p.value().sizes())) {
      throw Error(ErrorKind::Contract, "sequence-layer tensor " + p.key() + " has wrong shape");
    }
    p.value().copy_(t);
  }
}

std::shared_ptr<SequenceLayer> make_sequence_layer(Provenance provenance, const DecoderLayerConfig& cfg,
                                                   const std::string& checkpoint) {
  std::shared_ptr<SequenceLayer> layer;
  if (provenance == Provenance::IdentityStub) {
    layer = std::make_shared<IdentityLayer>(cfg.width);
  } else {
    auto decoder = std::make_shared<DecoderLayer>(cfg, provenance);
    if (provenance == Provenance::PretrainedFrozen || provenance == Provenance::PretrainedTrainable) {
      if (checkpoint.empty()) {
        throw Error(ErrorKind::Config, "pretrained sequence layer requires a checkpoint path");
      }
      decoder->load_weights(checkpoint);
    }
    layer = decoder;
  }
  if (is_frozen(provenance)) {
    for (auto& p : layer->parameters()) p.set_requires_grad(false);
  }
  return layer;
}

SemanticEnhancerImpl::SemanticEnhancerImpl(int channels, int projection_width,
                                           std::shared_ptr<SequenceLayer> seq)
    : layer(std::move(seq)) {
  if (!layer) throw Error(ErrorKind::Config, "semantic enhancer requires a sequence layer");
  if (projection_width != layer->width()) {
    throw Error(ErrorKind::Config, "projection width " + std::to_string(projection_width) +
                                       " does not match sequence-layer width " +
                                       std::to_string(layer->width()));
  }
  phi = register_module("phi", torch::nn::Linear(channels, projection_width));
  psi = register_module("psi", torch::nn::Linear(projection_width, channels));
  register_module("layer", layer);
}

torch::Tensor SemanticEnhancerImpl::forward(const torch::Tensor& x3) {
  if (x3.dim() != 4 || x3.size(1) != phi->options.in_features()) {
    throw Error(ErrorKind::Contract, "semantic enhancer expects [B, " +
                                         std::to_string(phi->options.in_features()) + ", h, w] input");
  }
  const auto h = x3.size(2);
  const auto w = x3.size(3);
  return from_tokens(psi(layer->forward(phi(to_tokens(x3)))), h, w);
}

torch::Tensor to_tokens(const torch::Tensor& x) { return x.flatten(2).transpose(1, 2); }

torch::Tensor from_tokens(const torch::Tensor& tokens, std::int64_t h, std::int64_t w) {
  return tokens.transpose(1, 2).reshape({tokens.size(0), tokens.size(2), h, w});
}

namespace {

constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& hash, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    hash ^= bytes[i];
    hash *= kFnvPrime;
  }
}

void fnv_tensor(std::uint64_t& hash, const torch::Tensor& t) {
  auto c = t.detach().cpu().contiguous();
  for (auto s : c.sizes()) fnv_mix(hash, &s, sizeof(s));
  fnv_mix(hash, c.data_ptr(), c.numel() * c.element_size());
}

}  // namespace

std::uint64_t parameter_checksum(const torch::nn::Module& module) {
  std::uint64_t hash = kEmptyChecksum;
  for (const auto& p : module.named_parameters()) {
    fnv_mix(hash, p.key().data(), p.key().size());
    fnv_tensor(hash, p.value());
  }
  return hash;
}

std::uint64_t parameter_checksum(const std::vector<torch::Tensor>& tensors) {
  std::uint64_t hash = kEmptyChecksum;
  for (const auto& t : tensors) fnv_tensor(hash, t);
  return hash;
}

std::uint64_t freeze_check(const SequenceLayer& layer) { return parameter_checksum(layer); }

}  // namespace diffattn
