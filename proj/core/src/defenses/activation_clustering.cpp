#include "bdb/defenses/detection.hpp"

#include "bdb/error.hpp"

#include <algorithm>
#include <random>

namespace bdb::defenses {

TwoMeans two_means(const torch::Tensor& x_in, const std::vector<int64_t>& ids, int64_t max_iter) {
  const auto n = x_in.size(0);
  if (n < 2) throw ArgumentError("two_means needs at least two rows");
  if (static_cast<int64_t>(ids.size()) != n) throw ArgumentError("two_means: one id per row required");
  auto x = x_in.to(torch::kFloat64).contiguous();
  std::vector<int64_t> by_id(static_cast<size_t>(n));
  std::iota(by_id.begin(), by_id.end(), int64_t{0});
  std::sort(by_id.begin(), by_id.end(), [&](int64_t a, int64_t b) { return ids[a] < ids[b]; });

  auto argbest = [&](const torch::Tensor& d, bool largest) {
    const auto* p = d.data_ptr<double>();
    int64_t best = by_id[0];
    for (auto i : by_id)
      if (largest ? p[i] > p[best] : p[i] < p[best]) best = i;
    return best;
  };
  auto mean = x.mean(0, true);
  const auto c0 = argbest((x - mean).pow(2).sum(1).contiguous(), false);
  const auto c1 = argbest((x - x[c0]).pow(2).sum(1).contiguous(), true);
  auto centers = torch::stack({x[c0], x[c1]});

  TwoMeans r;
  r.assignment.assign(static_cast<size_t>(n), 0);
  for (int64_t it = 0; it < max_iter; ++it) {
    auto d0 = (x - centers[0]).pow(2).sum(1).contiguous();
    auto d1 = (x - centers[1]).pow(2).sum(1).contiguous();
    const auto* p0 = d0.data_ptr<double>();
    const auto* p1 = d1.data_ptr<double>();
    bool changed = false;
    for (int64_t i = 0; i < n; ++i) {
      const int a = p1[i] < p0[i] ? 1 : 0;
      if (a != r.assignment[static_cast<size_t>(i)] || it == 0) changed = changed || a != r.assignment[static_cast<size_t>(i)];
      r.assignment[static_cast<size_t>(i)] = a;
    }
    r.iterations = static_cast<int>(it + 1);
    auto assign = torch::tensor(std::vector<int64_t>(r.assignment.begin(), r.assignment.end()), torch::kInt64);
    for (int c = 0; c < 2; ++c) {
      auto members = assign.eq(c).nonzero().flatten();
      if (members.size(0) > 0) centers[c] = x.index_select(0, members).mean(0);
    }
    if (!changed && it > 0) break;
  }
  r.size1 = std::count(r.assignment.begin(), r.assignment.end(), 1);
  r.size0 = n - r.size1;
  return r;
}

namespace {

/// Whitened top-k principal components (N x k) of centred data.
torch::Tensor whiten(const torch::Tensor& xc, int64_t k) {
  const auto n = static_cast<double>(xc.size(0));
  auto cov = torch::matmul(xc.t(), xc) / std::max(1.0, n - 1.0);
  auto [evals, evecs] = torch::linalg_eigh(cov);
  auto order = torch::argsort(evals, 0, true);
  evals = evals.index_select(0, order).slice(0, 0, k);
  evecs = evecs.index_select(1, order).slice(1, 0, k);
  return torch::matmul(xc, evecs) / evals.clamp_min(1e-12).sqrt();
}

torch::Tensor sym_decorrelate(const torch::Tensor& w) {
  auto [s, u] = torch::linalg_eigh(torch::matmul(w, w.t()));
  return torch::matmul(torch::matmul(u * s.clamp_min(1e-12).rsqrt(), u.t()), w);
}

}  // namespace

IcaResult fast_ica(const torch::Tensor& x_in, int64_t k, uint64_t seed, int64_t max_iter, double tol) {
  auto x = x_in.to(torch::kFloat64);
  auto xc = x - x.mean(0, true);
  const auto rank = torch::linalg_matrix_rank(xc).item<int64_t>();
  IcaResult r;
  r.components = std::max<int64_t>(1, std::min({k, rank, x.size(1), x.size(0) - 1}));
  auto z = whiten(xc, r.components);  // N x k
  std::mt19937_64 rng(seed ^ 0x1cafULL);
  std::normal_distribution<double> g(0.0, 1.0);
  auto w = torch::empty({r.components, r.components}, torch::kFloat64);
  auto* pw = w.data_ptr<double>();
  for (int64_t i = 0; i < w.numel(); ++i) pw[i] = g(rng);
  w = sym_decorrelate(w);
  const auto n = static_cast<double>(z.size(0));
  for (int64_t it = 0; it < max_iter; ++it) {
    auto wx = torch::matmul(z, w.t());  // N x k
    auto gx = torch::tanh(wx);
    auto gpx = 1.0 - gx.pow(2);
    auto w_new = torch::matmul(gx.t(), z) / n - gpx.mean(0).unsqueeze(1) * w;
    w_new = sym_decorrelate(w_new);
    const double lim = (torch::matmul(w_new, w.t()).diagonal().abs() - 1.0).abs().max().item<double>();
    w = w_new;
    if (lim < tol) {
      r.converged = true;
      break;
    }
  }
  if (r.converged) {
    r.sources = torch::matmul(z, w.t());
  } else {
    r.sources = z;
    r.used_pca = true;
  }
  return r;
}

SuspicionReport ac_detect_features(const torch::Tensor& features, const torch::Tensor& labels,
                                   const std::vector<int64_t>& ids, const AcConfig& cfg) {
  if (features.dim() != 2 || features.size(0) != labels.size(0) || static_cast<int64_t>(ids.size()) != labels.size(0))
    throw ArgumentError("ac_detect: features, labels, and ids must align");
  SuspicionReport rep;
  rep.method = "ac";
  rep.params = {{"n_dims", cfg.n_dims}, {"size_threshold", cfg.size_threshold}, {"layer", cfg.layer}};
  rep.n_total = labels.size(0);
  auto classes = std::get<0>(torch::_unique(labels));
  for (int64_t ci = 0; ci < classes.size(0); ++ci) {
    const auto c = classes[ci].item<int64_t>();
    auto idx = labels.eq(c).nonzero().flatten();
    const auto m = idx.size(0);
    if (m < 2) {
      warn("activation clustering: class " + std::to_string(c) + " has fewer than 2 samples, skipped");
      rep.notes.push_back("class " + std::to_string(c) + " skipped (< 2 samples)");
      continue;
    }
    std::vector<int64_t> cls_ids;
    for (int64_t i = 0; i < m; ++i) cls_ids.push_back(ids[static_cast<size_t>(idx[i].item<int64_t>())]);
    auto f = features.index_select(0, idx).to(torch::kFloat64);
    auto ica = fast_ica(f, cfg.n_dims, cfg.seed + static_cast<uint64_t>(c), cfg.ica_max_iter, cfg.ica_tol);
    if (ica.used_pca) rep.notes.push_back("class " + std::to_string(c) + ": ICA did not converge, used PCA");
    auto km = two_means(ica.sources, cls_ids, cfg.kmeans_max_iter);
    const int small = km.size1 < km.size0 ? 1 : 0;
    const auto small_size = small ? km.size1 : km.size0;
    const double share = static_cast<double>(small_size) / static_cast<double>(m);
    const bool flag = km.size0 != km.size1 && share < cfg.size_threshold;
    for (int64_t i = 0; i < m; ++i) {
      const bool in_small = km.assignment[static_cast<size_t>(i)] == small;
      rep.scores[cls_ids[static_cast<size_t>(i)]] = in_small ? 1.0 - share : share;
      if (flag && in_small) rep.suspected_ids.push_back(cls_ids[static_cast<size_t>(i)]);
    }
  }
  std::sort(rep.suspected_ids.begin(), rep.suspected_ids.end());
  return rep;
}

SuspicionReport ac_detect(const ModelCheckpoint& model, const LabeledDataset& poisoned_train, const AcConfig& cfg) {
  auto feats = forward_features(model, poisoned_train.images(), cfg.layer);
  return ac_detect_features(feats, poisoned_train.labels(), poisoned_train.id_vector(), cfg);
}

}  // namespace bdb::defenses
