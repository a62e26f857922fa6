#include "bdb/eval/analysis.hpp"

#include "bdb/error.hpp"

namespace bdb::eval {

SaliencyMap grad_cam(Classifier& model, const torch::Tensor& image_hwc, int64_t target_class, const std::string& layer) {
  if (image_hwc.dim() != 3) throw ArgumentError("grad_cam expects one H x W x C image");
  const auto idx = model->stage_index(layer);
  if (idx < 0) throw ArgumentError("grad_cam needs a convolutional stage, not '" + layer + "'");
  if (target_class < 0 || target_class >= model->spec().n_classes) throw ArgumentError("grad_cam: class out of range");
  model->eval();
  torch::AutoGradMode grad_on(true);
  auto x = to_nchw(image_hwc.unsqueeze(0).to(torch::kFloat32));
  auto t = model->trace(x);
  auto act = t.stages[static_cast<size_t>(idx)];
  auto score = t.logits.index({0, target_class});
  auto grads = torch::autograd::grad({score}, {act}, {}, false, false, true)[0];
  SaliencyMap m;
  m.method = "gradcam";
  m.target_class = target_class;
  m.layer = layer;
  const auto h = image_hwc.size(0), w = image_hwc.size(1);
  if (!grads.defined()) {
    m.values = torch::zeros({h, w}, torch::kFloat64);
    return m;
  }
  auto weights = grads.mean({2, 3}, true);
  auto cam = torch::relu((weights * act).sum(1, true)).detach();
  cam = torch::nn::functional::interpolate(
      cam, torch::nn::functional::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kBilinear).align_corners(false));
  cam = cam.squeeze(0).squeeze(0).to(torch::kFloat64).clamp_min(0.0);
  const double peak = cam.max().item<double>();
  m.values = peak > 0.0 ? cam / peak : cam;
  return m;
}

}  // namespace bdb::eval
