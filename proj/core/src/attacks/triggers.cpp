#include "bdb/attacks/triggers.hpp"

#include "bdb/attacks/ssba.hpp"
#include "bdb/error.hpp"
#include "bdb/tensor_io.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>

namespace bdb::attacks {

namespace F = torch::nn::functional;

std::string to_string(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::BadNets: return "badnets";
    case TriggerKind::Blended: return "blended";
    case TriggerKind::LC: return "lc";
    case TriggerKind::SIG: return "sig";
    case TriggerKind::LF: return "lf";
    case TriggerKind::SSBA: return "ssba";
  }
  return "badnets";
}

TriggerKind trigger_kind_from_string(const std::string& name) {
  for (auto k : {TriggerKind::BadNets, TriggerKind::Blended, TriggerKind::LC, TriggerKind::SIG, TriggerKind::LF,
                 TriggerKind::SSBA})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown trigger kind '" + name + "' (badnets|blended|lc|sig|lf|ssba)");
}

bool is_clean_label(TriggerKind kind) { return kind == TriggerKind::LC || kind == TriggerKind::SIG; }

namespace {

void check_image(const torch::Tensor& image, const char* what) {
  if (!image.defined() || (image.dim() != 3 && image.dim() != 4))
    throw ArgumentError(std::string(what) + ": expected H x W x C or N x H x W x C image");
}

int64_t height_of(const torch::Tensor& image) { return image.size(image.dim() - 3); }
int64_t width_of(const torch::Tensor& image) { return image.size(image.dim() - 2); }

}  // namespace

torch::Tensor apply_badnets(const torch::Tensor& image, int64_t patch, float value) {
  check_image(image, "apply_badnets");
  const auto h = height_of(image), w = width_of(image);
  if (patch < 1 || h < patch || w < patch) throw ArgumentError("apply_badnets: image smaller than the patch");
  auto out = image.clone();
  using torch::indexing::Ellipsis;
  using torch::indexing::Slice;
  out.index_put_({Ellipsis, Slice(h - patch, h), Slice(w - patch, w), Slice()}, value);
  return out;
}

torch::Tensor apply_blended(const torch::Tensor& image, const torch::Tensor& pattern, double alpha) {
  check_image(image, "apply_blended");
  if (alpha < 0.0 || alpha > 1.0) throw ArgumentError("apply_blended: alpha must lie in [0, 1]");
  if (pattern.dim() != 3 || pattern.size(0) != height_of(image) || pattern.size(1) != width_of(image) ||
      pattern.size(2) != image.size(image.dim() - 1))
    throw ArgumentError("apply_blended: pattern must match the image shape (resize it first)");
  return (image * (1.0 - alpha) + pattern.to(image.dtype()) * alpha).clamp(0.0, 1.0);
}

torch::Tensor apply_sig(const torch::Tensor& image, double delta, int64_t freq, bool along_columns) {
  check_image(image, "apply_sig");
  const auto h = height_of(image), w = width_of(image);
  const auto n = along_columns ? w : h;
  auto idx = torch::arange(n, torch::kFloat64);
  auto wave = (idx * (2.0 * std::numbers::pi * static_cast<double>(freq) / static_cast<double>(n))).sin() * delta;
  wave = wave.to(image.dtype());
  // Broadcast to H x W x 1.
  wave = along_columns ? wave.view({1, w, 1}) : wave.view({h, 1, 1});
  return (image + wave).clamp(0.0, 1.0);
}

torch::Tensor apply_additive(const torch::Tensor& image, const torch::Tensor& trigger) {
  check_image(image, "apply_additive");
  if (trigger.dim() != 3 || trigger.size(0) != height_of(image) || trigger.size(1) != width_of(image))
    throw ArgumentError("apply_additive: trigger shape does not match the image");
  return (image + trigger.to(image.dtype())).clamp(0.0, 1.0);
}

torch::Tensor resize_pattern(const torch::Tensor& pattern, ImageShape shape) {
  if (pattern.dim() != 3) throw ArgumentError("resize_pattern: expected an h x w x c pattern");
  auto p = pattern.to(torch::kFloat32);
  if (p.size(2) == 1 && shape.channels == 3) p = p.expand({p.size(0), p.size(1), 3});
  if (p.size(2) == 3 && shape.channels == 1) p = p.mean(2, true);
  if (p.size(2) != shape.channels) throw ArgumentError("resize_pattern: channel count mismatch");
  if (p.size(0) == shape.height && p.size(1) == shape.width) return p.contiguous();
  auto nchw = p.permute({2, 0, 1}).unsqueeze(0);
  auto resized = F::interpolate(nchw, F::InterpolateFuncOptions()
                                          .size(std::vector<int64_t>{shape.height, shape.width})
                                          .mode(torch::kBilinear)
                                          .align_corners(false));
  return resized.squeeze(0).permute({1, 2, 0}).clamp(0.0, 1.0).contiguous();
}

torch::Tensor procedural_blend_pattern(ImageShape shape, uint64_t seed) {
  // Sum of oriented gratings per channel plus a few hard-edged discs, so the
  // pattern has both smooth and sharp structure across the whole image.
  std::mt19937_64 rng(seed ^ 0xb1e4dedULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto out = torch::empty({shape.height, shape.width, shape.channels}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  struct Wave { double fy, fx, phase; };
  std::vector<std::vector<Wave>> waves(static_cast<size_t>(shape.channels));
  for (auto& ch : waves)
    for (int i = 0; i < 3; ++i) {
      const double theta = unit(rng) * std::numbers::pi, f = 1.0 + 3.0 * unit(rng);
      ch.push_back({f * std::sin(theta), f * std::cos(theta), unit(rng) * 2.0 * std::numbers::pi});
    }
  struct Disc { double cy, cx, r; std::vector<double> colour; };
  std::vector<Disc> discs;
  for (int i = 0; i < 4; ++i) {
    Disc d{unit(rng), unit(rng), 0.08 + 0.12 * unit(rng), {}};
    for (int64_t c = 0; c < shape.channels; ++c) d.colour.push_back(unit(rng));
    discs.push_back(d);
  }
  for (int64_t y = 0; y < shape.height; ++y)
    for (int64_t x = 0; x < shape.width; ++x) {
      const double v = static_cast<double>(y) / shape.height, u = static_cast<double>(x) / shape.width;
      for (int64_t c = 0; c < shape.channels; ++c) {
        double s = 0.0;
        for (const auto& wv : waves[static_cast<size_t>(c)])
          s += std::sin(2.0 * std::numbers::pi * (wv.fy * v + wv.fx * u) + wv.phase);
        double val = 0.5 + s / 6.0;
        for (const auto& d : discs)
          if (std::hypot(v - d.cy, u - d.cx) <= d.r) val = d.colour[static_cast<size_t>(c)];
        acc[y][x][c] = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  return out;
}

nlohmann::json TriggerSpec::to_json() const {
  nlohmann::json j = {{"kind", attacks::to_string(kind)}, {"target_class", target_class}};
  switch (kind) {
    case TriggerKind::BadNets:
      j["patch_size"] = patch_size;
      j["patch_value"] = patch_value;
      break;
    case TriggerKind::Blended:
      j["alpha"] = alpha;
      j["pattern"] = pattern_file.empty() ? nlohmann::json{{"procedural_seed", pattern_seed}}
                                          : nlohmann::json{{"file", pattern_file}};
      break;
    case TriggerKind::LC:
      j["patch_size"] = patch_size;
      j["patch_value"] = patch_value;
      j["pgd"] = {{"steps", pgd.steps}, {"step_size", pgd.step_size}, {"eps", pgd.eps}};
      break;
    case TriggerKind::SIG:
      j["delta"] = sig_delta;
      j["freq"] = sig_freq;
      j["along_columns"] = sig_along_columns;
      break;
    case TriggerKind::LF:
      break;
    case TriggerKind::SSBA:
      j["message_bits"] = message_bits;
      break;
  }
  return j;
}

TriggerSpec TriggerSpec::from_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("attack spec must be an object");
  TriggerSpec s;
  s.kind = trigger_kind_from_string(j.value("kind", std::string("badnets")));
  static const std::set<std::string> known = {"kind",     "target_class", "patch_size", "patch_value",
                                               "alpha",    "pattern_file", "pattern_seed", "delta",
                                               "freq",     "along_columns", "steps",      "step_size",
                                               "eps",      "message_bits"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown trigger parameter '" + key + "'");
  try {
    s.target_class = j.value("target_class", s.target_class);
    s.patch_size = j.value("patch_size", s.patch_size);
    s.patch_value = j.value("patch_value", s.patch_value);
    s.alpha = j.value("alpha", s.alpha);
    s.pattern_file = j.value("pattern_file", s.pattern_file);
    s.pattern_seed = j.value("pattern_seed", s.pattern_seed);
    if (j.contains("delta")) s.sig_delta = j.at("delta").get<double>() / 255.0;
    s.sig_freq = j.value("freq", s.sig_freq);
    s.sig_along_columns = j.value("along_columns", s.sig_along_columns);
    s.pgd.steps = j.value("steps", s.pgd.steps);
    if (j.contains("step_size")) s.pgd.step_size = j.at("step_size").get<double>() / 255.0;
    if (j.contains("eps")) s.pgd.eps = j.at("eps").get<double>() / 255.0;
    s.message_bits = j.value("message_bits", s.message_bits);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed trigger parameter: ") + e.what());
  }
  if (s.target_class < 0) throw ConfigError("target_class must be non-negative");
  if (s.patch_size < 1) throw ConfigError("patch_size must be positive");
  if (s.alpha < 0.0 || s.alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
  if (s.sig_delta < 0.0) throw ConfigError("delta must be non-negative");
  if (s.pgd.steps < 0 || s.pgd.eps < 0.0 || s.pgd.step_size < 0.0) throw ConfigError("PGD parameters must be non-negative");
  if (s.message_bits.empty()) throw ConfigError("message_bits must not be empty");
  for (int b : s.message_bits)
    if (b != 0 && b != 1) throw ConfigError("message_bits entries must be 0 or 1");
  return s;
}

void TriggerSpec::validate(ImageShape shape, int64_t n_classes) const {
  if (target_class >= n_classes)
    throw ConfigError("target_class " + std::to_string(target_class) + " is out of range for " +
                      std::to_string(n_classes) + " classes");
  switch (kind) {
    case TriggerKind::BadNets:
    case TriggerKind::LC:
      if (patch_size > shape.height || patch_size > shape.width) throw ConfigError("patch larger than the image");
      if (kind == TriggerKind::LC && !surrogate)
        throw PrerequisiteError("label-consistent poisoning needs a surrogate checkpoint");
      break;
    case TriggerKind::Blended:
      if (!pattern.defined() || pattern.dim() != 3 || pattern.size(0) != shape.height ||
          pattern.size(1) != shape.width || pattern.size(2) != shape.channels)
        throw PrerequisiteError("blended trigger pattern missing or not resized to the image shape");
      break;
    case TriggerKind::LF:
      if (!lf_trigger.defined() || lf_trigger.dim() != 3 || lf_trigger.size(0) != shape.height ||
          lf_trigger.size(1) != shape.width)
        throw PrerequisiteError("low-frequency trigger has not been generated");
      break;
    case TriggerKind::SSBA:
      if (!ssba) throw PrerequisiteError("SSBA poisoning needs a trained encoder");
      if (static_cast<int64_t>(message_bits.size()) != ssba->message_length())
        throw ConfigError("message length does not match the SSBA encoder");
      break;
    case TriggerKind::SIG:
      break;
  }
}

TriggerFn make_trigger_fn(const TriggerSpec& spec) {
  switch (spec.kind) {
    case TriggerKind::BadNets:
    case TriggerKind::LC:
      return [p = spec.patch_size, v = spec.patch_value](const torch::Tensor& x) { return apply_badnets(x, p, v); };
    case TriggerKind::Blended:
      return [pat = spec.pattern, a = spec.alpha](const torch::Tensor& x) { return apply_blended(x, pat, a); };
    case TriggerKind::SIG:
      return [d = spec.sig_delta, f = spec.sig_freq, c = spec.sig_along_columns](const torch::Tensor& x) {
        return apply_sig(x, d, f, c);
      };
    case TriggerKind::LF:
      return [t = spec.lf_trigger](const torch::Tensor& x) { return apply_additive(x, t); };
    case TriggerKind::SSBA:
      return [codec = spec.ssba, bits = spec.message_bits](const torch::Tensor& x) {
        return apply_ssba(x, *codec, bits);
      };
  }
  throw ArgumentError("unhandled trigger kind");
}

}  // namespace bdb::attacks
