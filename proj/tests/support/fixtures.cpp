#include "fixtures.hpp"

#include <numeric>
#include <random>

namespace bdb::testing {

namespace {

torch::Tensor random_unit(int64_t dims, torch::Generator& gen) {
  auto v = torch::randn({dims}, gen, torch::kFloat64);
  return v / v.norm();
}

}  // namespace

PlantedClusters planted_gaussians(int64_t n_major, int64_t n_minor, int64_t dims, double separation, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  PlantedClusters fx;
  fx.mean_major = torch::zeros({dims}, torch::kFloat64);
  fx.mean_minor = separation * random_unit(dims, gen);
  auto major = torch::randn({n_major, dims}, gen, torch::kFloat64);
  auto minor = torch::randn({n_minor, dims}, gen, torch::kFloat64) + fx.mean_minor;
  // Interleave so the minor rows are not a contiguous block.
  const int64_t n = n_major + n_minor;
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), int64_t{0});
  std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
  auto all = torch::cat({major, minor});
  fx.features = torch::empty_like(all);
  for (int64_t row = 0; row < n; ++row) {
    const auto src = order[static_cast<size_t>(row)];
    fx.features[row] = all[src];
    fx.ids.push_back(1000 + row);
    if (src >= n_major) fx.planted_ids.push_back(1000 + row);
  }
  fx.labels = torch::zeros({n}, torch::kInt64);
  return fx;
}

std::vector<int64_t> nearest_centre_oracle(const PlantedClusters& fx) {
  auto d_major = (fx.features - fx.mean_major).pow(2).sum(1);
  auto d_minor = (fx.features - fx.mean_minor).pow(2).sum(1);
  auto minor = d_minor.lt(d_major);
  std::vector<int64_t> out;
  for (int64_t i = 0; i < fx.features.size(0); ++i)
    if (minor[i].item<bool>()) out.push_back(fx.ids[static_cast<size_t>(i)]);
  return out;
}

PlantedOutliers planted_outliers(int64_t n_in, int64_t n_out, int64_t dims, double shift, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  PlantedOutliers fx;
  auto axis = random_unit(dims, gen);
  auto inliers = torch::randn({n_in, dims}, gen, torch::kFloat64);
  auto outliers = torch::randn({n_out, dims}, gen, torch::kFloat64) + shift * axis;
  fx.features = torch::cat({inliers, outliers});
  fx.labels = torch::zeros({n_in + n_out}, torch::kInt64);
  for (int64_t i = 0; i < n_in + n_out; ++i) {
    fx.ids.push_back(i);
    if (i >= n_in) fx.outlier_ids.push_back(i);
  }
  return fx;
}

torch::Tensor eigen_outlier_scores(const torch::Tensor& features) {
  auto x = features.to(torch::kFloat64);
  auto centred = x - x.mean(0, true);
  auto cov = centred.t().matmul(centred);
  auto [values, vectors] = torch::linalg_eigh(cov);
  auto top = vectors.select(1, vectors.size(1) - 1);  // eigenvalues ascend
  return centred.matmul(top).pow(2);
}

torch::Tensor AdditiveGame::value(const torch::Tensor& coalitions) const {
  const auto n = static_cast<int64_t>(a.size());
  auto s = coalitions.to(torch::kFloat64).contiguous();
  auto out = torch::zeros({s.size(0)}, torch::kFloat64);
  auto sa = s.accessor<double, 2>();
  auto o = out.accessor<double, 1>();
  for (int64_t k = 0; k < s.size(0); ++k) {
    double v = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const bool in = sa[k][i] > 0.5;
      v += in ? a[static_cast<size_t>(i)] : b[static_cast<size_t>(i)];
      if (!in) continue;
      for (int64_t j = i + 1; j < n; ++j)
        if (sa[k][j] > 0.5) v += c[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
    o[k] = v;
  }
  return out;
}

std::vector<double> AdditiveGame::exact_shapley() const {
  std::vector<double> phi(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    phi[i] = a[i] - b[i];
    for (size_t j = 0; j < a.size(); ++j) phi[i] += 0.5 * c[i][j];
  }
  return phi;
}

double AdditiveGame::full() const {
  auto all = torch::ones({1, static_cast<int64_t>(a.size())});
  return value(all).item<double>();
}

double AdditiveGame::empty() const {
  auto none = torch::zeros({1, static_cast<int64_t>(a.size())});
  return value(none).item<double>();
}

AdditiveGame random_game(int64_t players, double interaction_scale, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  AdditiveGame g;
  const auto n = static_cast<size_t>(players);
  g.a.resize(n);
  g.b.resize(n);
  g.c.assign(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    g.a[i] = normal(rng);
    g.b[i] = 0.3 * normal(rng);
  }
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) g.c[i][j] = g.c[j][i] = interaction_scale * normal(rng);
  return g;
}

torch::Tensor fixture_images(int64_t n, uint64_t seed) {
  std::vector<int64_t> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), int64_t{0});
  return synthetic_images("test", ids, seed);
}

}  // namespace bdb::testing
