#include <cmath>

#include <doctest.h>
#include <torch/torch.h>

#include "diffattn/llm_enhance.hpp"
#include "helpers.hpp"

using namespace diffattn;

namespace {

DecoderLayerConfig small_cfg() {
  DecoderLayerConfig c;
  c.width = 16;
  c.heads = 4;
  c.kv_heads = 2;
  c.ffn_width = 24;
  c.rope_theta = 10000.0;
  c.norm_eps = 1e-6;
  return c;
}

std::map<std::string, torch::Tensor> params_of(const torch::nn::Module& m) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : m.named_parameters()) out[p.key()] = p.value();
  return out;
}

torch::Tensor rms(const torch::Tensor& x, const torch::Tensor& w, double eps) {
  return x / torch::sqrt(x.pow(2).mean(-1, true) + eps) * w;
}

// Position-by-position reference of the pre-norm grouped-query layer with rotary positions.
torch::Tensor layer_oracle(std::map<std::string, torch::Tensor> p, const DecoderLayerConfig& c, const torch::Tensor& x) {
  const auto n = x.size(0);
  const int hd = c.width / c.heads;
  const int half = hd / 2;
  auto rope = [&](torch::Tensor v) {  // v: [n, hd]
    auto out = v.clone();
    for (int pos = 0; pos < n; ++pos) {
      for (int i = 0; i < half; ++i) {
        const double ang = pos * std::pow(c.rope_theta, -2.0 * i / hd);
        const double a = v[pos][i].item<double>();
        const double b = v[pos][i + half].item<double>();
        out[pos][i] = a * std::cos(ang) - b * std::sin(ang);
        out[pos][i + half] = b * std::cos(ang) + a * std::sin(ang);
      }
    }
    return out;
  };
  auto h = rms(x, p["input_layernorm.weight"], c.norm_eps);
  auto q = torch::matmul(h, p["self_attn.q_proj.weight"].t());
  auto k = torch::matmul(h, p["self_attn.k_proj.weight"].t());
  auto v = torch::matmul(h, p["self_attn.v_proj.weight"].t());
  std::vector<torch::Tensor> heads;
  const int group = c.heads / c.kv_heads;
  for (int hh = 0; hh < c.heads; ++hh) {
    const int kv = hh / group;
    auto qh = rope(q.narrow(1, hh * hd, hd));
    auto kh = rope(k.narrow(1, kv * hd, hd));
    auto vh = v.narrow(1, kv * hd, hd);
    auto att = torch::softmax(torch::matmul(qh, kh.t()) / std::sqrt(static_cast<double>(hd)), -1);
    heads.push_back(torch::matmul(att, vh));
  }
  auto attn = torch::matmul(torch::cat(heads, 1), p["self_attn.o_proj.weight"].t());
  auto r = x + attn;
  auto m = rms(r, p["post_attention_layernorm.weight"], c.norm_eps);
  auto gate = torch::matmul(m, p["mlp.gate_proj.weight"].t());
  auto up = torch::matmul(m, p["mlp.up_proj.weight"].t());
  return r + torch::matmul(gate * torch::sigmoid(gate) * up, p["mlp.down_proj.weight"].t());
}

}  // namespace

TEST_CASE("provenance names round trip") {
  for (auto p : {Provenance::IdentityStub, Provenance::RandomFrozen, Provenance::RandomTrainable,
                 Provenance::PretrainedFrozen, Provenance::PretrainedTrainable}) {
    CHECK(parse_provenance(provenance_name(p)) == p);
  }
  CHECK(is_frozen(Provenance::PretrainedFrozen));
  CHECK_FALSE(is_frozen(Provenance::RandomTrainable));
  CHECK_ERROR_KIND(parse_provenance("llama"), ErrorKind::Config);
}

TEST_CASE("token flattening is row-major and invertible") {
  const auto x = testing::randn64({2, 5, 3, 4}, 1);
  const auto t = to_tokens(x);
  CHECK(t.sizes() == torch::IntArrayRef({2, 12, 5}));
  for (int y = 0; y < 3; ++y) {
    for (int xx = 0; xx < 4; ++xx) CHECK(torch::equal(t[1][y * 4 + xx], x[1].select(1, y).select(1, xx)));
  }
  CHECK(torch::equal(from_tokens(t, 3, 4), x));
}

TEST_CASE("decoder layer matches the reference computation") {
  torch::manual_seed(11);
  const auto cfg = small_cfg();
  DecoderLayer layer(cfg, Provenance::RandomTrainable);
  layer.to(torch::kFloat64);
  {
    torch::NoGradGuard g;
    for (auto& p : layer.named_parameters()) {
      if (p.key().find("layernorm") != std::string::npos) p.value().uniform_(0.5, 1.5);
      else p.value().normal_(0.0, 0.3);
    }
  }
  auto names = params_of(layer);
  CHECK(names.count("self_attn.q_proj.weight") == 1);
  CHECK(names.count("mlp.down_proj.weight") == 1);
  CHECK(names.size() == 9);
  CHECK(names["self_attn.k_proj.weight"].sizes() == torch::IntArrayRef({8, 16}));

  const auto x = testing::randn64({2, 7, 16}, 12);
  torch::NoGradGuard g;
  const auto out = layer.forward(x);
  for (int b = 0; b < 2; ++b) {
    CHECK((out[b] - layer_oracle(names, cfg, x[b])).abs().max().item<double>() < 1e-10);
  }
}

TEST_CASE("decoder layer configuration is validated") {
  auto cfg = small_cfg();
  cfg.heads = 3;
  CHECK_ERROR_KIND(DecoderLayer(cfg, Provenance::RandomFrozen), ErrorKind::Config);
  cfg = small_cfg();
  cfg.kv_heads = 3;
  CHECK_ERROR_KIND(DecoderLayer(cfg, Provenance::RandomFrozen), ErrorKind::Config);
}

TEST_CASE("identity stub with pseudo-inverse projections is the identity") {
  torch::manual_seed(13);
  const int c = 6;
  const int d = 10;
  SemanticEnhancer enh(c, d, make_sequence_layer(Provenance::IdentityStub, DecoderLayerConfig{d, 2, 1, 8}));
  enh->to(torch::kFloat64);
  {
    torch::NoGradGuard g;
    const auto pinv = torch::linalg_pinv(enh->phi->weight);
    enh->psi->weight.copy_(pinv);
    enh->psi->bias.copy_(-torch::matmul(pinv, enh->phi->bias));
  }
  const auto x = testing::randn64({2, c, 3, 5}, 14);
  CHECK((enh->forward(x) - x).abs().max().item<double>() < 1e-10);
  CHECK(freeze_check(*enh->layer) == kEmptyChecksum);
}

TEST_CASE("enhancer validates widths and input channels") {
  auto layer = make_sequence_layer(Provenance::IdentityStub, DecoderLayerConfig{8, 2, 1, 8});
  CHECK_ERROR_KIND(SemanticEnhancer(4, 16, layer), ErrorKind::Config);
  CHECK_ERROR_KIND(SemanticEnhancer(4, 8, nullptr), ErrorKind::Config);
  SemanticEnhancer enh(4, 8, layer);
  CHECK_ERROR_KIND(enh->forward(torch::zeros({1, 5, 2, 2})), ErrorKind::Contract);
  CHECK(enh->forward(torch::zeros({1, 4, 2, 3})).sizes() == torch::IntArrayRef({1, 4, 2, 3}));
}

TEST_CASE("frozen layers survive optimization while projections train") {
  for (auto prov : {Provenance::RandomFrozen, Provenance::RandomTrainable}) {
    torch::manual_seed(15);
    SemanticEnhancer enh(8, 16, make_sequence_layer(prov, small_cfg()));
    const auto layer_before = freeze_check(*enh->layer);
    const auto phi_before = enh->phi->weight.clone();
    std::vector<torch::Tensor> trainable;
    for (auto& p : enh->parameters()) {
      if (p.requires_grad()) trainable.push_back(p);
    }
    torch::optim::AdamW opt(trainable, torch::optim::AdamWOptions(1e-2));
    for (int i = 0; i < 3; ++i) {
      opt.zero_grad();
      enh->forward(torch::randn({2, 8, 2, 2})).square().mean().backward();
      opt.step();
    }
    CHECK_FALSE(torch::equal(enh->phi->weight, phi_before));
    if (prov == Provenance::RandomFrozen) {
      CHECK(freeze_check(*enh->layer) == layer_before);
      for (const auto& p : enh->layer->parameters()) CHECK_FALSE(p.requires_grad());
    } else {
      CHECK(freeze_check(*enh->layer) != layer_before);
    }
  }
}

TEST_CASE("pretrained weights load by parameter name") {
  const auto cfg = small_cfg();
  const auto dir = testing::scratch_dir("llm_weights");
  torch::manual_seed(16);
  DecoderLayer source(cfg, Provenance::RandomTrainable);
  torch::serialize::OutputArchive archive;
  for (const auto& p : source.named_parameters()) archive.write(p.key(), p.value().detach());
  const auto path = (dir / "layer.pt").string();
  archive.save_to(path);

  auto loaded = make_sequence_layer(Provenance::PretrainedFrozen, cfg, path);
  CHECK(freeze_check(*loaded) == freeze_check(source));
  CHECK_FALSE(loaded->trainable());
  auto trainable = make_sequence_layer(Provenance::PretrainedTrainable, cfg, path);
  CHECK(trainable->trainable());
  for (const auto& p : trainable->parameters()) CHECK(p.requires_grad());

  CHECK_ERROR_KIND(make_sequence_layer(Provenance::PretrainedFrozen, cfg), ErrorKind::Config);
  CHECK_ERROR_KIND(make_sequence_layer(Provenance::PretrainedFrozen, cfg, (dir / "none.pt").string()), ErrorKind::Io);

  torch::serialize::OutputArchive partial;
  partial.write("input_layernorm.weight", torch::ones({16}));
  partial.save_to((dir / "partial.pt").string());
  CHECK_ERROR_KIND(make_sequence_layer(Provenance::PretrainedFrozen, cfg, (dir / "partial.pt").string()),
                   ErrorKind::Data);

  auto wide = cfg;
  wide.ffn_width = 32;
  CHECK_ERROR_KIND(make_sequence_layer(Provenance::PretrainedFrozen, wide, path), ErrorKind::Contract);
}

TEST_CASE("checksums are sensitive to every byte") {
  torch::manual_seed(17);
  DecoderLayer layer(small_cfg(), Provenance::RandomFrozen);
  const auto before = parameter_checksum(layer);
  CHECK(parameter_checksum(layer) == before);
  {
    torch::NoGradGuard g;
    auto w = layer.named_parameters()["mlp.up_proj.weight"];
    w.view(-1)[5] += 1e-3f;
  }
  CHECK(parameter_checksum(layer) != before);
  CHECK(parameter_checksum(std::vector<torch::Tensor>{}) == kEmptyChecksum);
}
