#include "bdb/eval/analysis.hpp"
#include "bdb/eval/svg_plot.hpp"

#include "bdb/error.hpp"

#include <cmath>
#include <map>

namespace bdb::eval {

namespace {

/// Row-conditional Gaussian affinities whose entropy matches log(perplexity),
/// found by bisection on the precision of each row.
torch::Tensor conditional_affinities(const torch::Tensor& d2, double perplexity) {
  const auto n = d2.size(0);
  auto p = torch::zeros({n, n}, torch::kFloat64);
  const double target = std::log(perplexity);
  auto* pp = p.data_ptr<double>();
  auto dc = d2.contiguous();
  const auto* dd = dc.data_ptr<double>();
  std::vector<double> row(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 64; ++it) {
      double sum = 0.0, dsum = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        row[static_cast<size_t>(j)] = j == i ? 0.0 : std::exp(-beta * dd[i * n + j]);
        sum += row[static_cast<size_t>(j)];
      }
      sum = std::max(sum, 1e-300);
      for (int64_t j = 0; j < n; ++j) dsum += dd[i * n + j] * row[static_cast<size_t>(j)];
      const double entropy = std::log(sum) + beta * dsum / sum;
      for (int64_t j = 0; j < n; ++j) pp[i * n + j] = row[static_cast<size_t>(j)] / sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
  }
  return p;
}

}  // namespace

torch::Tensor tsne_embed(const torch::Tensor& features, const TsneConfig& cfg) {
  if (features.dim() != 2) throw ArgumentError("tsne_embed expects an N x D matrix");
  const auto n = features.size(0);
  if (n < 10) throw ArgumentError("tsne_embed needs at least 10 points");
  auto x = features.to(torch::kFloat64);
  if (!torch::isfinite(x).all().item<bool>()) throw ArgumentError("tsne_embed: non-finite features");
  const double perplexity = std::min(cfg.perplexity, (static_cast<double>(n) - 1.0) / 3.0);

  auto sq = x.pow(2).sum(1, true);
  auto d2 = (sq + sq.t() - 2.0 * torch::matmul(x, x.t())).clamp_min(0.0);
  auto p = conditional_affinities(d2, perplexity);
  p = (p + p.t()) / (2.0 * static_cast<double>(n));
  p = p.clamp_min(1e-12);

  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(cfg.seed);
  auto y = torch::randn({n, 2}, gen, torch::kFloat64) * 1e-4;
  auto update = torch::zeros_like(y);
  auto gains = torch::ones_like(y);
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    const double exag = it < cfg.exaggeration_iters ? cfg.exaggeration : 1.0;
    const double momentum = it < cfg.exaggeration_iters ? 0.5 : 0.8;
    auto ysq = y.pow(2).sum(1, true);
    auto num = 1.0 / (1.0 + (ysq + ysq.t() - 2.0 * torch::matmul(y, y.t())).clamp_min(0.0));
    num.fill_diagonal_(0.0);
    auto q = (num / num.sum()).clamp_min(1e-12);
    auto w = (exag * p - q) * num;
    auto grad = 4.0 * (torch::diag(w.sum(1)) - w).matmul(y);
    auto same = (grad > 0).eq(update > 0);
    gains = torch::where(same, gains * 0.8, gains + 0.2).clamp_min(0.01);
    update = momentum * update - cfg.learning_rate * gains * grad;
    y = y + update;
    y = y - y.mean(0, true);
  }
  return y;
}

void save_tsne_plot(const torch::Tensor& points, const torch::Tensor& labels, const torch::Tensor& poison_flags,
                    const std::filesystem::path& path, const std::string& title) {
  if (points.dim() != 2 || points.size(1) != 2 || labels.size(0) != points.size(0))
    throw ArgumentError("save_tsne_plot: points must be N x 2 with one label each");
  auto pts = points.to(torch::kFloat64).contiguous();
  auto lab = labels.to(torch::kInt64).contiguous();
  auto flags = poison_flags.defined() ? poison_flags.to(torch::kBool).contiguous()
                                      : torch::zeros({points.size(0)}, torch::kBool);
  std::map<int64_t, Series> clean;
  Series poisoned{"poisoned", {}, {}, "#000000", false, true, "cross"};
  for (int64_t i = 0; i < pts.size(0); ++i) {
    const double px = pts[i][0].item<double>(), py = pts[i][1].item<double>();
    if (flags[i].item<bool>()) {
      poisoned.x.push_back(px);
      poisoned.y.push_back(py);
      continue;
    }
    const auto c = lab[i].item<int64_t>();
    auto& s = clean[c];
    s.label = "class " + std::to_string(c);
    s.colour = palette()[static_cast<size_t>(c) % palette().size()];
    s.x.push_back(px);
    s.y.push_back(py);
  }
  Chart chart;
  chart.title = title;
  chart.x_label = "t-SNE 1";
  chart.y_label = "t-SNE 2";
  for (auto& [c, s] : clean) chart.series.push_back(std::move(s));
  if (!poisoned.x.empty()) chart.series.push_back(std::move(poisoned));
  save_svg(chart, path);
}

}  // namespace bdb::eval
