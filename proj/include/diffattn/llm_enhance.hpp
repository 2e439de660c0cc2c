#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace diffattn {

enum class Provenance { IdentityStub, RandomFrozen, RandomTrainable, PretrainedFrozen, PretrainedTrainable };

std::string_view provenance_name(Provenance p);
Provenance parse_provenance(std::string_view name);
bool is_frozen(Provenance p);

/// Token-sequence layer [B, N, D] -> [B, N, D] borrowed from a language model.
class SequenceLayer : public torch::nn::Module {
 public:
  virtual ~SequenceLayer() = default;
  virtual torch::Tensor forward(const torch::Tensor& tokens) = 0;
  virtual int width() const = 0;
  virtual Provenance provenance() const = 0;
  bool trainable() const { return !is_frozen(provenance()); }
};

class IdentityLayer final : public SequenceLayer {
 public:
  explicit IdentityLayer(int width) : width_(width) {}
  torch::Tensor forward(const torch::Tensor& tokens) override { return tokens; }
  int width() const override { return width_; }
  Provenance provenance() const override { return Provenance::IdentityStub; }

 private:
  int width_;
};

/// Shape of a LLaMA-style decoder layer. Defaults match the 1B model's hidden layers.
struct DecoderLayerConfig {
  int width = 2048;
  int heads = 32;
  int kv_heads = 8;
  int ffn_width = 8192;
  double rope_theta = 500000.0;
  double norm_eps = 1e-5;
};

namespace detail {

class RmsNormImpl : public torch::nn::Module {
 public:
  RmsNormImpl(int width, double eps);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor weight;

 private:
  double eps_;
};
TORCH_MODULE(RmsNorm);

class SelfAttentionImpl : public torch::nn::Module {
 public:
  explicit SelfAttentionImpl(const DecoderLayerConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, o_proj{nullptr};

 private:
  torch::Tensor rotate(const torch::Tensor& x) const;
  DecoderLayerConfig cfg_;
};
TORCH_MODULE(SelfAttention);

class GatedMlpImpl : public torch::nn::Module {
 public:
  explicit GatedMlpImpl(const DecoderLayerConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Linear gate_proj{nullptr}, up_proj{nullptr}, down_proj{nullptr};
};
TORCH_MODULE(GatedMlp);

}  // namespace detail

/// Pre-norm decoder layer: RMSNorm -> grouped-query self-attention (rotary
/// positions, no causal mask over image tokens) -> residual -> RMSNorm -> SwiGLU
/// MLP -> residual. Parameter names follow the Hugging Face layout
/// (self_attn.q_proj.weight, mlp.down_proj.weight, input_layernorm.weight, ...).
class DecoderLayer final : public SequenceLayer {
 public:
  DecoderLayer(DecoderLayerConfig cfg, Provenance provenance);

  torch::Tensor forward(const torch::Tensor& tokens) override;
  int width() const override { return cfg_.width; }
  Provenance provenance() const override { return provenance_; }

  /// Copies tensors saved under the layer's parameter names from a torch archive.
  void load_weights(const std::string& path);

 private:
  DecoderLayerConfig cfg_;
  Provenance provenance_;
  detail::RmsNorm input_layernorm{nullptr};
  detail::SelfAttention self_attn{nullptr};
  detail::RmsNorm post_attention_layernorm{nullptr};
  detail::GatedMlp mlp{nullptr};
};

/// Builds a sequence layer for the given provenance. Pretrained variants read
/// `checkpoint`; frozen variants have requires_grad disabled on every parameter.
std::shared_ptr<SequenceLayer> make_sequence_layer(Provenance provenance, const DecoderLayerConfig& cfg,
                                                   const std::string& checkpoint = {});

/// Level-3 semantic enhancement: tokens = spatial positions, phi -> layer -> psi.
class SemanticEnhancerImpl : public torch::nn::Module {
 public:
  /// Throws ErrorKind::Config when projection_width differs from the layer width.
  SemanticEnhancerImpl(int channels, int projection_width, std::shared_ptr<SequenceLayer> layer);

  /// x3: [B, C, h, w] -> [B, C, h, w].
  torch::Tensor forward(const torch::Tensor& x3);

  torch::nn::Linear phi{nullptr};
  torch::nn::Linear psi{nullptr};
  std::shared_ptr<SequenceLayer> layer;
};
TORCH_MODULE(SemanticEnhancer);

/// Row-major flatten [B, C, h, w] -> [B, h*w, C] and its inverse.
torch::Tensor to_tokens(const torch::Tensor& x);
torch::Tensor from_tokens(const torch::Tensor& tokens, std::int64_t h, std::int64_t w);

/// Stable 64-bit FNV-1a hash over parameter names, shapes and raw bytes.
std::uint64_t parameter_checksum(const torch::nn::Module& module);
std::uint64_t parameter_checksum(const std::vector<torch::Tensor>& tensors);

/// Checksum reported for parameterless layers.
constexpr std::uint64_t kEmptyChecksum = 0xcbf29ce484222325ULL;

std::uint64_t freeze_check(const SequenceLayer& layer);

}  // namespace diffattn
