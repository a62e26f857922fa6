#include "checks.hpp"

#include "fixtures.hpp"

#include "bdb/attacks/triggers.hpp"
#include "bdb/attacks/wanet.hpp"
#include "bdb/defenses/detection.hpp"
#include "bdb/eval/analysis.hpp"
#include <numeric>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace bdb::testing {

namespace {

bool in_unit_range(const torch::Tensor& t) {
  return t.min().item<double>() >= 0.0 && t.max().item<double>() <= 1.0;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace

Verdict check_trigger_algebra() {
  using namespace attacks;
  const ImageShape shape{32, 32, 3};
  auto images = fixture_images(16, 7);
  auto pattern = procedural_blend_pattern(shape, 3);
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };

  expect(torch::equal(apply_blended(images, pattern, 0.0), images), "blend(alpha=0) != identity");
  expect(torch::allclose(apply_blended(images, pattern, 1.0), pattern.expand_as(images), 0.0, 1e-6),
         "blend(alpha=1) != pattern");
  auto blended = apply_blended(images, pattern, 0.2);
  expect(in_unit_range(blended), "blend output outside [0,1]");

  const double delta = 40.0 / 255.0;
  auto sig = apply_sig(images, delta, 6);
  expect((sig - images).abs().max().item<double>() <= delta + 1e-6, "SIG change exceeds delta");
  expect(in_unit_range(sig), "SIG output outside [0,1]");

  auto once = apply_badnets(images);
  expect(torch::equal(apply_badnets(once), once), "BadNets not idempotent");
  expect(in_unit_range(once), "BadNets output outside [0,1]");
  // Footprint on a canvas that differs from the patch value everywhere.
  auto grey = torch::full({32, 32, 3}, 0.5f);
  auto changed = apply_badnets(grey).ne(grey).any(2);
  expect(changed.sum().item<int64_t>() == 9, "BadNets footprint is not 9 pixels");
  expect(changed.slice(0, 29, 32).slice(1, 29, 32).all().item<bool>(), "BadNets patch not at rows/cols 29-31");

  auto warped = wanet_warp(images, WarpField::identity(shape));
  expect(torch::allclose(warped, images, 0.0, 1e-5), "WaNet identity field changes the image");
  auto field = WarpField::random(shape, 4, 0.5, 11);
  auto w = wanet_warp(images, field);
  expect(in_unit_range(w), "WaNet output outside [0,1]");
  expect((w - images).abs().mean().item<double>() > 0.0, "WaNet random field is a no-op");

  Verdict v;
  v.pass = failed.empty();
  if (v.pass) {
    v.detail = "blend/SIG/BadNets/WaNet properties hold on 16 fixture images";
  } else {
    for (const auto& f : failed) v.detail += (v.detail.empty() ? "" : "; ") + f;
  }
  return v;
}

Verdict check_spectral_fixture() {
  auto fx = planted_outliers(50, 10, 20, 8.0, 5);
  defenses::SpectralConfig cfg;
  auto report = defenses::spectral_detect_features(fx.features, fx.labels, fx.ids, cfg);
  std::set<int64_t> flagged(report.suspected_ids.begin(), report.suspected_ids.end());
  int64_t found = 0;
  for (auto id : fx.outlier_ids) found += flagged.count(id);

  // Reference: the 10 outliers are exactly the top-10 under an eigh-based score.
  auto ref = eigen_outlier_scores(fx.features);
  auto top = std::get<1>(ref.topk(10));
  std::set<int64_t> ref_top;
  for (int64_t i = 0; i < 10; ++i) ref_top.insert(fx.ids[static_cast<size_t>(top[i].item<int64_t>())]);
  const bool ref_ok = ref_top == std::set<int64_t>(fx.outlier_ids.begin(), fx.outlier_ids.end());
  const auto ours = defenses::spectral_scores(fx.features);
  const bool scores_match = torch::allclose(ours.to(torch::kFloat64), ref, 1e-6, 1e-8);

  Verdict v;
  v.pass = found == 10 && ref_ok && scores_match;
  v.detail = std::to_string(found) + "/10 outliers flagged (" + std::to_string(flagged.size()) +
             " flagged total), reference eigh top-10 " + (ref_ok ? "agrees" : "disagrees") + ", scores " +
             (scores_match ? "match" : "differ from") + " the reference";
  return v;
}

Verdict check_ac_fixture() {
  auto fx = planted_gaussians(450, 50, 32, 10.0, 9);
  defenses::AcConfig cfg;
  auto report = defenses::ac_detect_features(fx.features, fx.labels, fx.ids, cfg);
  const std::set<int64_t> planted(fx.planted_ids.begin(), fx.planted_ids.end());
  const std::set<int64_t> got(report.suspected_ids.begin(), report.suspected_ids.end());
  const auto oracle = nearest_centre_oracle(fx);
  const bool oracle_ok = std::set<int64_t>(oracle.begin(), oracle.end()) == planted;
  Verdict v;
  v.pass = got == planted && oracle_ok;
  v.detail = "flagged " + std::to_string(got.size()) + " of 500, planted 50, exact match " +
             (got == planted ? "yes" : "no") + ", nearest-centre oracle " + (oracle_ok ? "agrees" : "disagrees");
  return v;
}

Verdict check_shapley_additive() {
  // f(x) = sum over 4x4 patches of tanh(<w_p, x_p>): additive across patches,
  // so patch p's exact attribution is g_p(x_p) - g_p(baseline_p).
  const int64_t grid = 4, players = grid * grid;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(21);
  auto image = fixture_images(1, 4)[0].to(torch::kFloat64);
  auto baseline = torch::full_like(image, 0.5);
  auto weights = torch::randn({32, 32, 3}, gen, torch::kFloat64) * 0.05;
  auto pidx = eval::patch_index(32, 32, grid);
  auto onehot = torch::one_hot(pidx.flatten(), players).to(torch::kFloat64);  // HW x P
  auto g = [&](const torch::Tensor& imgs) {  // K x H x W x C -> K x P
    auto per_pixel = (imgs * weights).sum(3).view({imgs.size(0), -1});
    return torch::tanh(per_pixel.matmul(onehot));
  };
  auto value = [&](const torch::Tensor& coalitions) {
    auto on = coalitions.to(torch::kFloat64).matmul(onehot.t()).view({-1, 32, 32, 1});
    auto mixed = on * image.unsqueeze(0) + (1.0 - on) * baseline.unsqueeze(0);
    return g(mixed).sum(1);
  };
  auto est = eval::shapley_sample(value, players, 200, 3);
  auto exact = (g(image.unsqueeze(0)) - g(baseline.unsqueeze(0))).squeeze(0);
  auto err = (est.values - exact).abs();
  auto allowed = 3.0 * est.stderr_ + 1e-9;
  const auto within = err.le(allowed).sum().item<int64_t>();
  Verdict v;
  v.pass = within == players;
  v.detail = std::to_string(within) + "/" + std::to_string(players) + " patches within 3 SE, max |error| " +
             fmt(err.max().item<double>());
  return v;
}

Verdict check_shapley_efficiency() {
  // A game with pairwise interactions, so marginals vary between orderings.
  auto game = random_game(12, 0.5, 17);
  auto est = eval::shapley_sample([&](const torch::Tensor& c) { return game.value(c); }, 12, 400, 8);
  const double total = est.values.sum().item<double>();
  const double target = game.full() - game.empty();
  const double sigma = std::sqrt(est.stderr_.pow(2).sum().item<double>());
  const auto exact = game.exact_shapley();
  int64_t within = 0;
  for (int64_t i = 0; i < 12; ++i)
    within += std::abs(est.values[i].item<double>() - exact[static_cast<size_t>(i)]) <=
              3.0 * est.stderr_[i].item<double>() + 1e-9;
  Verdict v;
  v.pass = std::abs(total - target) <= 3.0 * sigma + 1e-9 && within >= 11;
  v.detail = "sum phi - (v(N) - v(0)) = " + fmt(total - target) + " (3 sigma " + fmt(3.0 * sigma) + "), " +
             std::to_string(within) + "/12 interaction-game values within 3 SE of closed form";
  return v;
}

Verdict check_tsne_purity() {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(13);
  const int64_t per = 60, dims = 50;
  auto shift = torch::zeros({dims}, torch::kFloat64);
  shift[0] = 12.0;
  auto x = torch::cat({torch::randn({per, dims}, gen, torch::kFloat64),
                       torch::randn({per, dims}, gen, torch::kFloat64) + shift});
  eval::TsneConfig cfg;
  cfg.perplexity = 20.0;
  cfg.seed = 2;
  auto emb = eval::tsne_embed(x, cfg);
  std::vector<int64_t> ids(2 * per);
  std::iota(ids.begin(), ids.end(), int64_t{0});
  auto km = defenses::two_means(emb.to(torch::kFloat64), ids);
  int64_t agree = 0;
  for (int64_t i = 0; i < 2 * per; ++i) agree += (km.assignment[static_cast<size_t>(i)] == (i < per ? 0 : 1));
  const double purity = std::max(agree, 2 * per - agree) / static_cast<double>(2 * per);
  Verdict v;
  v.pass = purity >= 0.95;
  v.detail = "2-means purity on the embedding " + fmt(purity);
  return v;
}

OcclusionStats gradcam_occlusion(Classifier& model, const torch::Tensor& images, const torch::Tensor& classes,
                                 const std::string& layer, uint64_t seed) {
  OcclusionStats s;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const auto fill = images.mean({0, 1, 2});  // per-channel mean
  model->eval();
  for (int64_t i = 0; i < images.size(0); ++i) {
    auto img = images[i];
    const auto cls = classes[i].item<int64_t>();
    auto cam = eval::grad_cam(model, img, cls, layer).values.flatten();
    const auto n = cam.size(0);
    const auto k = n / 10;
    auto top = std::get<1>(cam.topk(k));
    auto rnd = torch::randperm(n, gen).slice(0, 0, k);
    auto masked = [&](const torch::Tensor& pixels) {
      auto flat = img.reshape({n, -1}).clone();
      flat.index_put_({pixels}, fill.unsqueeze(0).expand({k, fill.size(0)}));
      return flat.view(img.sizes());
    };
    torch::NoGradGuard guard;
    auto batch = torch::stack({img, masked(top), masked(rnd)});
    auto logit = model->forward(to_nchw(batch)).select(1, cls);
    const double base = logit[0].item<double>();
    const double d_top = std::abs(base - logit[1].item<double>());
    const double d_rnd = std::abs(base - logit[2].item<double>());
    ++s.fixtures;
    s.passed += d_top > d_rnd;
  }
  return s;
}

}  // namespace bdb::testing
