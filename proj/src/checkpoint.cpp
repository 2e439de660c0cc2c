#include "diffattn/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "diffattn/error.hpp"

namespace diffattn {
namespace {

using Dict = c10::impl::GenericDict;

Dict make_dict() { return Dict(c10::StringType::get(), c10::AnyType::get()); }

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& model) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : model.named_parameters()) out.emplace_back(p.key(), p.value());
  for (const auto& b : model.named_buffers()) out.emplace_back("buffer:" + b.key(), b.value());
  return out;
}

Dict read_dict(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  c10::IValue root;
  try {
    root = torch::pickle_load(bytes);
  } catch (const c10::Error& e) {
    throw Error(ErrorKind::Version, "unreadable checkpoint " + path.string());
  }
  if (!root.isGenericDict()) throw Error(ErrorKind::Version, "unrecognized checkpoint layout in " + path.string());
  return root.toGenericDict();
}

CheckpointInfo info_of(const Dict& d, const std::filesystem::path& path) {
  if (!d.contains("format_version") || !d.contains("step") || !d.contains("config")) {
    throw Error(ErrorKind::Version, "checkpoint " + path.string() + " lacks header fields");
  }
  CheckpointInfo info;
  info.version = d.at("format_version").toInt();
  info.step = d.at("step").toInt();
  info.config = d.at("config").toStringRef();
  info.has_optimizer = d.contains("optimizer");
  if (info.version != kCheckpointVersion) {
    throw Error(ErrorKind::Version, "checkpoint " + path.string() + " has format version " +
                                        std::to_string(info.version) + ", expected " +
                                        std::to_string(kCheckpointVersion));
  }
  return info;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& model,
                     torch::optim::Optimizer* optimizer, std::int64_t step, const ExperimentConfig& cfg) {
  c10::List<std::string> names;
  c10::List<torch::Tensor> tensors;
  for (const auto& [name, t] : named_state(model)) {
    if (t.is_floating_point() && !torch::isfinite(t).all().item<bool>()) {
      throw Error(ErrorKind::Numeric, "refusing to write checkpoint: parameter " + name + " is not finite");
    }
    names.push_back(name);
    tensors.push_back(t.detach().to(torch::kCPU).clone());
  }
  Dict d = make_dict();
  d.insert("format_version", kCheckpointVersion);
  d.insert("step", step);
  d.insert("config", to_ini(cfg));
  d.insert("names", names);
  d.insert("tensors", tensors);
  if (optimizer != nullptr) {
    torch::serialize::OutputArchive archive;
    optimizer->save(archive);
    std::ostringstream buf;
    archive.save_to(buf);
    d.insert("optimizer", buf.str());
  }
  const auto bytes = torch::pickle_save(c10::IValue(d));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) { return info_of(read_dict(path), path); }

CheckpointInfo load_checkpoint(const std::filesystem::path& path, torch::nn::Module& model,
                               torch::optim::Optimizer* optimizer, const ExperimentConfig& cfg) {
  const auto d = read_dict(path);
  auto info = info_of(d, path);
  const auto saved_cfg = parse_ini(info.config);
  if (architecture_signature(saved_cfg) != architecture_signature(cfg)) {
    throw Error(ErrorKind::Version, "checkpoint " + path.string() + " was written for a different architecture");
  }
  const auto names = d.at("names").toList();
  const auto tensors = d.at("tensors").toList();
  std::map<std::string, torch::Tensor> stored;
  for (std::size_t i = 0; i < names.size(); ++i) {
    stored.emplace(names.get(i).toStringRef(), tensors.get(i).toTensor());
  }
  const auto state = named_state(model);
  if (state.size() != stored.size()) {
    throw Error(ErrorKind::Version, "checkpoint holds " + std::to_string(stored.size()) + " tensors, model has " +
                                        std::to_string(state.size()));
  }
  torch::NoGradGuard guard;
  for (const auto& [name, t] : state) {
    auto it = stored.find(name);
    if (it == stored.end()) throw Error(ErrorKind::Version, "checkpoint lacks tensor " + name);
    if (it->second.sizes() != t.sizes()) throw Error(ErrorKind::Version, "tensor " + name + " has a different shape");
    t.copy_(it->second);
  }
  if (optimizer != nullptr && info.has_optimizer) {
    torch::serialize::InputArchive archive;
    std::istringstream buf(d.at("optimizer").toStringRef());
    archive.load_from(buf);
    optimizer->load(archive);
  }
  return info;
}

}  // namespace diffattn
