#include "../support/checks.hpp"
#include "../support/fixtures.hpp"

#include "bdb/attacks/poisoned_dataset.hpp"
#include "bdb/error.hpp"
#include "bdb/eval/analysis.hpp"
#include "bdb/eval/metrics.hpp"
#include "bdb/eval/svg_plot.hpp"
#include "bdb/training.hpp"

#include "doctest_torch.hpp"

#include <filesystem>

using namespace bdb;
using namespace bdb::eval;

TEST_CASE("metric law is enforced on construction") {
  const auto before = metric_audit();
  auto m = MetricTriple::make(90.0, 60.0, 40.0, 100, 90, 0);
  CHECK(m.asr + m.r_acc <= 100.0);
  CHECK_THROWS_AS(MetricTriple::make(90.0, 70.0, 40.0, 100, 90, 0), InvariantViolation);
  CHECK_THROWS_AS(MetricTriple::make(101.0, 0.0, 0.0, 100, 90, 0), InvariantViolation);
  const auto after = metric_audit();
  CHECK(after.emitted == before.emitted + 1);
  CHECK(after.violations == before.violations + 2);
  CHECK_THROWS_AS(MetricTriple::from_json({{"c_acc", 50}, {"asr", 80}, {"r_acc", 30}, {"n_clean_eval", 1},
                                           {"n_poison_eval", 1}, {"target_class", 0}}),
                  InvariantViolation);
}

TEST_CASE("evaluation counts ASR against the target and R-Acc against the original label") {
  torch::manual_seed(0);
  std::vector<int64_t> ids(30);
  std::iota(ids.begin(), ids.end(), int64_t{0});
  auto test = synthetic_dataset("test", ids, 0);
  auto pt = attacks::build_poisoned_testset(test, attacks::TriggerSpec::from_config({{"kind", "badnets"}}));
  auto model = make_classifier({Arch::SmallCNN, 10, {32, 32, 3}});
  auto m = evaluate(model, test, pt);
  auto pred = predict_labels(model, pt.data.images());
  const double asr = 100.0 * pred.eq(0).sum().item<double>() / pt.data.size();
  const double racc = 100.0 * pred.eq(pt.original_label_tensor()).sum().item<double>() / pt.data.size();
  CHECK(m.asr == doctest::Approx(asr));
  CHECK(m.r_acc == doctest::Approx(racc));
  CHECK(m.n_poison_eval == 27);  // target-class originals excluded
  CHECK(m.asr + m.r_acc <= 100.0);
}

TEST_CASE("shapley matches the additive closed form") {
  const auto v = testing::check_shapley_additive();
  INFO(v.detail);
  CHECK(v.pass);
}

TEST_CASE("shapley efficiency and interaction game") {
  const auto v = testing::check_shapley_efficiency();
  INFO(v.detail);
  CHECK(v.pass);
}

TEST_CASE("shapley map on a network satisfies efficiency") {
  torch::manual_seed(2);
  auto model = make_classifier({Arch::SmallCNN, 10, {32, 32, 3}});
  auto img = testing::fixture_images(1, 1)[0];
  auto base = torch::zeros_like(img);
  auto map = shapley_map(model, img, 3, 30, 4, base, 5);
  CHECK(map.values.sizes() == torch::IntArrayRef{32, 32});
  auto logits = predict_logits(model, torch::stack({img, base}));
  const double target = (logits[0][3] - logits[1][3]).item<double>();
  CHECK(map.patch_values.sum().item<double>() == doctest::Approx(target).epsilon(1e-4));
}

TEST_CASE("grad-cam is a normalised non-negative map") {
  torch::manual_seed(4);
  auto model = make_classifier({Arch::SmallCNN, 10, {32, 32, 3}});
  auto img = testing::fixture_images(1, 2)[0];
  auto cam = grad_cam(model, img, 1, model->stage_names().back());
  CHECK(cam.values.sizes() == torch::IntArrayRef{32, 32});
  CHECK(cam.values.min().item<double>() >= 0.0);
  CHECK(cam.values.max().item<double>() <= 1.0 + 1e-12);
  CHECK_THROWS(grad_cam(model, img, 1, "penultimate"));
}

TEST_CASE("t-sne separates two blobs") {
  const auto v = testing::check_tsne_purity();
  INFO(v.detail);
  CHECK(v.pass);
}

TEST_CASE("t-sne rejects too few or non-finite points") {
  CHECK_THROWS(tsne_embed(torch::rand({5, 3})));
  auto bad = torch::rand({20, 3});
  bad[0][0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS(tsne_embed(bad));
}

TEST_CASE("activation profile has one value per channel") {
  torch::manual_seed(0);
  auto model = make_classifier({Arch::SmallCNN, 10, {32, 32, 3}});
  auto prof = activation_profile(model, testing::fixture_images(3, 0), model->stage_names().back());
  CHECK(prof.dim() == 1);
  CHECK(prof.size(0) == model->last_stage_channels());
}

TEST_CASE("svg chart honours explicit ticks") {
  Chart c;
  c.title = "t";
  Series s;
  s.label = "a";
  s.x = {0, 1, 2};
  s.y = {1, 2, 3};
  c.series.push_back(s);
  c.x_ticks = {0, 1, 2};
  c.x_tick_labels = {"0.01", "0.05", "0.1"};
  const auto svg = render_svg(c);
  size_t count = 0;
  for (size_t pos = svg.find("class=\"xtick\""); pos != std::string::npos; pos = svg.find("class=\"xtick\"", pos + 1))
    ++count;
  CHECK(count == 3);
  CHECK(svg.find("0.05") != std::string::npos);
  c.x_tick_labels.pop_back();
  CHECK_THROWS_AS(render_svg(c), ArgumentError);
}
