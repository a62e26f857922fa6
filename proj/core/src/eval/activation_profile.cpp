#include "bdb/eval/analysis.hpp"

#include "bdb/error.hpp"

namespace bdb::eval {

torch::Tensor activation_profile(Classifier& model, const torch::Tensor& images_nhwc, const std::string& layer) {
  if (images_nhwc.dim() != 4) throw ArgumentError("activation_profile expects N x H x W x C images");
  if (images_nhwc.size(0) == 0) throw ArgumentError("activation_profile: empty batch");
  const auto idx = model->stage_index(layer);
  torch::NoGradGuard guard;
  model->eval();
  torch::Tensor sum;
  for (int64_t s = 0; s < images_nhwc.size(0); s += 500) {
    auto x = to_nchw(images_nhwc.slice(0, s, std::min(images_nhwc.size(0), s + 500)));
    torch::Tensor a;
    if (idx >= 0) {
      a = model->trace(x).stages[static_cast<size_t>(idx)].mean({2, 3});
    } else {
      a = model->features(x, layer);
    }
    auto part = a.to(torch::kFloat64).sum(0);
    sum = sum.defined() ? sum + part : part;
  }
  return sum / static_cast<double>(images_nhwc.size(0));
}

}  // namespace bdb::eval
