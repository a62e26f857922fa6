#include "bdb/defenses/detection.hpp"

#include "bdb/error.hpp"

#include <algorithm>
#include <cmath>

namespace bdb::defenses {

torch::Tensor spectral_scores(const torch::Tensor& features) {
  auto f = features.to(torch::kFloat64);
  auto centred = f - f.mean(0, true);
  if (centred.abs().max().item<double>() == 0.0) return torch::zeros({f.size(0)}, torch::kFloat64);
  auto svd = torch::linalg_svd(centred, false);
  auto top = std::get<2>(svd)[0];
  return torch::matmul(centred, top).pow(2);
}

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ArgumentError("percentile of an empty sample");
  if (p < 0.0 || p > 100.0) throw ArgumentError("percentile must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<int64_t>(std::ceil(p / 100.0 * n - 1e-9));
  rank = std::clamp<int64_t>(rank, 1, static_cast<int64_t>(values.size()));
  return values[static_cast<size_t>(rank - 1)];
}

SuspicionReport spectral_detect_features(const torch::Tensor& features, const torch::Tensor& labels,
                                         const std::vector<int64_t>& ids, const SpectralConfig& cfg) {
  if (features.dim() != 2 || features.size(0) != labels.size(0) || static_cast<int64_t>(ids.size()) != labels.size(0))
    throw ArgumentError("spectral_detect: features, labels, and ids must align");
  SuspicionReport rep;
  rep.method = "spectral";
  rep.params = {{"percentile", cfg.percentile}, {"layer", cfg.layer}, {"percentile_rule", "nearest-rank, inclusive"}};
  rep.n_total = labels.size(0);
  auto classes = std::get<0>(torch::_unique(labels));
  for (int64_t ci = 0; ci < classes.size(0); ++ci) {
    const auto c = classes[ci].item<int64_t>();
    auto idx = labels.eq(c).nonzero().flatten();
    auto scores = spectral_scores(features.index_select(0, idx)).contiguous();
    const auto* s = scores.data_ptr<double>();
    std::vector<double> v(s, s + scores.numel());
    const bool flat = std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    for (int64_t i = 0; i < idx.size(0); ++i) rep.scores[ids[static_cast<size_t>(idx[i].item<int64_t>())]] = v[static_cast<size_t>(i)];
    if (flat) {
      warn("spectral signature: class " + std::to_string(c) + " has zero feature spread, skipped");
      rep.notes.push_back("class " + std::to_string(c) + " skipped (rank 0)");
      continue;
    }
    const double cut = nearest_rank_percentile(v, cfg.percentile);
    for (int64_t i = 0; i < idx.size(0); ++i)
      if (v[static_cast<size_t>(i)] >= cut) rep.suspected_ids.push_back(ids[static_cast<size_t>(idx[i].item<int64_t>())]);
  }
  std::sort(rep.suspected_ids.begin(), rep.suspected_ids.end());
  return rep;
}

SuspicionReport spectral_detect(const ModelCheckpoint& model, const LabeledDataset& poisoned_train,
                                const SpectralConfig& cfg) {
  auto feats = forward_features(model, poisoned_train.images(), cfg.layer);
  return spectral_detect_features(feats, poisoned_train.labels(), poisoned_train.id_vector(), cfg);
}

ModelCheckpoint retrain_without(const LabeledDataset& poisoned_train, const std::vector<int64_t>& suspected, Arch arch,
                                const TrainConfig& cfg, const std::string& method, const LabeledDataset* test) {
  auto filtered = poisoned_train.without_ids({suspected.begin(), suspected.end()});
  if (filtered.empty()) throw ArgumentError("every sample is suspected; nothing left to retrain on");
  auto ckpt = train_classifier(filtered, arch, cfg, test, "retrain-without:" + method);
  return ckpt.with_metadata({{"defense", method},
                             {"removed_samples", poisoned_train.size() - filtered.size()},
                             {"retrain_samples", filtered.size()}});
}

}  // namespace bdb::defenses
