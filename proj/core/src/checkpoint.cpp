#include "bdb/checkpoint.hpp"

#include "binary_io.hpp"
#include "bdb/error.hpp"
#include "bdb/hashing.hpp"

#include <algorithm>
#include <unordered_map>

namespace bdb {

namespace {

constexpr char kMagic[8] = {'B', 'D', 'B', 'C', 'K', 'P', 'T', '\0'};
constexpr size_t kDigestLen = 64;  // hex sha256 trailer

std::string dtype_tag(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw ArgumentError("checkpoint: unsupported tensor dtype");
  }
}

torch::ScalarType dtype_from_tag(const std::string& tag) {
  if (tag == "f32") return torch::kFloat32;
  if (tag == "f64") return torch::kFloat64;
  if (tag == "i64") return torch::kInt64;
  throw LoadError("checkpoint: unknown dtype tag '" + tag + "'");
}

ModelCheckpoint::NamedTensors state_of(Classifier& model) {
  ModelCheckpoint::NamedTensors out;
  for (const auto& p : model->named_parameters()) out.emplace_back(p.key(), p.value().detach().clone());
  for (const auto& b : model->named_buffers()) out.emplace_back(b.key(), b.value().detach().clone());
  return out;
}

}  // namespace

nlohmann::json to_json(const ModelSpec& spec) {
  return {{"arch", to_string(spec.arch)},
          {"n_classes", spec.n_classes},
          {"input", {spec.input.height, spec.input.width, spec.input.channels}}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.arch = arch_from_string(j.at("arch").get<std::string>());
  s.n_classes = j.at("n_classes").get<int64_t>();
  const auto& in = j.at("input");
  s.input = {in.at(0).get<int64_t>(), in.at(1).get<int64_t>(), in.at(2).get<int64_t>()};
  return s;
}

ModelCheckpoint::ModelCheckpoint(ModelSpec spec, NamedTensors params, std::vector<LineageEntry> lineage,
                                 uint64_t seed, nlohmann::json metadata)
    : spec_(spec), params_(std::move(params)), lineage_(std::move(lineage)), seed_(seed),
      metadata_(std::move(metadata)) {
  if (lineage_.empty()) throw ArgumentError("checkpoint lineage must not be empty");
  if (!metadata_.is_object()) metadata_ = nlohmann::json::object();
}

ModelCheckpoint ModelCheckpoint::capture(Classifier& model, std::vector<LineageEntry> lineage, uint64_t seed,
                                         nlohmann::json metadata) {
  return ModelCheckpoint(model->spec(), state_of(model), std::move(lineage), seed, std::move(metadata));
}

Classifier ModelCheckpoint::instantiate() const {
  auto model = make_classifier(spec_);
  std::unordered_map<std::string, const torch::Tensor*> by_name;
  for (const auto& [name, t] : params_) by_name.emplace(name, &t);
  torch::NoGradGuard guard;
  size_t matched = 0;
  auto assign = [&](const std::string& name, torch::Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw LoadError("checkpoint is missing tensor '" + name + "'");
    if (it->second->sizes() != dst.sizes())
      throw LoadError("checkpoint tensor '" + name + "' has the wrong shape for " + to_string(spec_.arch));
    dst.copy_(*it->second);
    ++matched;
  };
  for (auto& p : model->named_parameters()) assign(p.key(), p.value());
  for (auto& b : model->named_buffers()) assign(b.key(), b.value());
  if (matched != params_.size()) throw LoadError("checkpoint carries tensors unknown to " + to_string(spec_.arch));
  model->eval();
  return model;
}

ModelCheckpoint ModelCheckpoint::derive(Classifier& model, LineageEntry stage, nlohmann::json metadata_patch) const {
  auto lineage = lineage_;
  lineage.push_back(std::move(stage));
  auto meta = metadata_;
  if (metadata_patch.is_object()) meta.update(metadata_patch);
  return ModelCheckpoint(model->spec(), state_of(model), std::move(lineage), seed_, std::move(meta));
}

ModelCheckpoint ModelCheckpoint::with_metadata(nlohmann::json metadata_patch) const {
  auto copy = *this;
  if (metadata_patch.is_object()) copy.metadata_.update(metadata_patch);
  return copy;
}

bool ModelCheckpoint::params_equal(const ModelCheckpoint& other) const {
  if (!(spec_ == other.spec_) || params_.size() != other.params_.size()) return false;
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& [na, ta] = params_[i];
    const auto& [nb, tb] = other.params_[i];
    if (na != nb || ta.sizes() != tb.sizes() || ta.scalar_type() != tb.scalar_type() || !torch::equal(ta, tb))
      return false;
  }
  return true;
}

std::string encode_checkpoint(const ModelCheckpoint& ckpt) {
  nlohmann::json header;
  header["spec"] = to_json(ckpt.spec());
  header["seed"] = ckpt.seed();
  header["metadata"] = ckpt.metadata();
  auto lineage = nlohmann::json::array();
  for (const auto& e : ckpt.lineage()) lineage.push_back({{"stage", e.stage}, {"config_hash", e.config_hash}});
  header["lineage"] = lineage;
  auto tensors = nlohmann::json::array();
  std::vector<torch::Tensor> contiguous;
  uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.params()) {
    auto c = t.contiguous();
    const uint64_t nbytes = static_cast<uint64_t>(c.numel()) * c.element_size();
    tensors.push_back({{"name", name}, {"dtype", dtype_tag(c.scalar_type())}, {"shape", c.sizes().vec()},
                       {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
    contiguous.push_back(std::move(c));
  }
  header["tensors"] = tensors;
  const auto header_text = header.dump();

  detail::Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put<uint32_t>(kCheckpointFormatVersion);
  w.put_string(header_text);
  for (const auto& c : contiguous) w.put_bytes(c.data_ptr(), static_cast<size_t>(c.numel()) * c.element_size());
  const auto digest = sha256_hex(w.bytes());
  w.put_bytes(digest.data(), digest.size());
  return w.bytes();
}

ModelCheckpoint decode_checkpoint(std::string_view bytes, const std::string& context) {
  if (bytes.size() < sizeof(kMagic) + sizeof(uint32_t) + kDigestLen)
    throw LoadError("truncated checkpoint: " + context);
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw LoadError("not a checkpoint file: " + context);
  detail::Reader r(bytes, context);
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  const auto version = r.get<uint32_t>();
  if (version != kCheckpointFormatVersion)
    throw MigrationError("checkpoint " + context + " uses format v" + std::to_string(version) +
                         "; this build reads v" + std::to_string(kCheckpointFormatVersion) +
                         " only, re-export it with the matching release");
  const auto body = bytes.substr(0, bytes.size() - kDigestLen);
  const auto trailer = bytes.substr(bytes.size() - kDigestLen);
  if (sha256_hex(body) != trailer) throw LoadError("checkpoint digest mismatch (truncated or corrupt): " + context);

  detail::Reader br(body, context);
  br.get_bytes(magic, sizeof(magic));
  br.get<uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(br.get_string());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("corrupt checkpoint header in " + context + ": " + e.what());
  }
  const auto data_start = br.position();
  ModelCheckpoint::NamedTensors params;
  for (const auto& t : header.at("tensors")) {
    const auto offset = t.at("offset").get<uint64_t>();
    const auto nbytes = t.at("nbytes").get<uint64_t>();
    if (data_start + offset + nbytes > body.size()) throw LoadError("checkpoint tensor data out of range: " + context);
    auto tensor = torch::empty(t.at("shape").get<std::vector<int64_t>>(),
                               torch::TensorOptions().dtype(dtype_from_tag(t.at("dtype").get<std::string>())));
    if (static_cast<uint64_t>(tensor.numel()) * tensor.element_size() != nbytes)
      throw LoadError("checkpoint tensor size mismatch: " + context);
    std::memcpy(tensor.data_ptr(), body.data() + data_start + offset, nbytes);
    params.emplace_back(t.at("name").get<std::string>(), std::move(tensor));
  }
  std::vector<LineageEntry> lineage;
  for (const auto& e : header.at("lineage"))
    lineage.push_back({e.at("stage").get<std::string>(), e.at("config_hash").get<std::string>()});
  return ModelCheckpoint(model_spec_from_json(header.at("spec")), std::move(params), std::move(lineage),
                         header.at("seed").get<uint64_t>(), header.at("metadata"));
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_checkpoint(ckpt));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw LoadError("checkpoint not found: " + path.string());
  return decode_checkpoint(detail::read_file(path), path.string());
}

}  // namespace bdb
