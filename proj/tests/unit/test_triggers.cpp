#include "../support/checks.hpp"
#include "../support/fixtures.hpp"

#include "bdb/attacks/poisoned_dataset.hpp"
#include "bdb/attacks/schedule.hpp"
#include "bdb/attacks/triggers.hpp"
#include "bdb/attacks/wanet.hpp"
#include "bdb/error.hpp"

#include "doctest_torch.hpp"

using namespace bdb;
using namespace bdb::attacks;

TEST_CASE("trigger algebra property suite") {
  const auto v = testing::check_trigger_algebra();
  INFO(v.detail);
  CHECK(v.pass);
}

TEST_CASE("badnets patch sits in the bottom-right corner with no margin") {
  auto img = torch::zeros({32, 32, 3});
  auto out = apply_badnets(img);
  CHECK(out.sum().item<double>() == doctest::Approx(27.0));
  CHECK(out.slice(0, 29, 32).slice(1, 29, 32).eq(1.0).all().item<bool>());
  CHECK(torch::equal(img, torch::zeros({32, 32, 3})));  // input untouched
}

TEST_CASE("blend interpolates linearly") {
  auto img = torch::full({4, 4, 3}, 0.2f);
  auto pat = torch::full({4, 4, 3}, 1.0f);
  CHECK(apply_blended(img, pat, 0.5)[0][0][0].item<float>() == doctest::Approx(0.6f));
}

TEST_CASE("sig perturbation follows the column sinusoid") {
  auto img = torch::full({32, 32, 3}, 0.5f);
  const double delta = 40.0 / 255.0;
  auto out = apply_sig(img, delta, 6);
  for (int64_t j : {0, 3, 11, 20}) {
    const double expected = 0.5 + delta * std::sin(2.0 * M_PI * j * 6 / 32.0);
    CHECK(out[5][j][1].item<double>() == doctest::Approx(expected).epsilon(1e-5));
  }
}

TEST_CASE("trigger config converts 0-255 units") {
  auto spec = TriggerSpec::from_config({{"kind", "sig"}, {"delta", 40}});
  CHECK(spec.sig_delta == doctest::Approx(40.0 / 255.0));
  CHECK_THROWS_AS(TriggerSpec::from_config({{"kind", "badnets"}, {"bogus", 1}}), ConfigError);
}

TEST_CASE("poison schedule draws floor(ratio * N) ids from the eligible pool") {
  auto data = synthetic_dataset("train", std::vector<int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16,
                                                              17, 18, 19},
                                0);
  auto dirty = make_poison_schedule(data, 0.5, 0, false, 3);
  CHECK(dirty.size() == 10);
  for (auto id : dirty.poisoned_ids) CHECK(id % 10 != 0);
  auto clean = make_poison_schedule(data, 0.1, 0, true, 3);
  CHECK(clean.size() == 2);
  for (auto id : clean.poisoned_ids) CHECK(id % 10 == 0);
  CHECK_THROWS_AS(make_poison_schedule(data, 0.2, 0, true, 3), CapacityError);
  CHECK(make_poison_schedule(data, 0.5, 0, false, 3).poisoned_ids == dirty.poisoned_ids);
  CHECK(poison_count(0.29, 100) == 29);
}

TEST_CASE("poisoned dataset relabels exactly the scheduled ids") {
  std::vector<int64_t> ids(40);
  std::iota(ids.begin(), ids.end(), int64_t{0});
  auto data = synthetic_dataset("train", ids, 0);
  auto sched = make_poison_schedule(data, 0.25, 3, false, 1);
  auto spec = TriggerSpec::from_config({{"kind", "badnets"}, {"target_class", 3}});
  auto pd = build_poisoned_dataset(data, sched, spec);
  auto poisoned = pd.poisoned_set();
  CHECK(poisoned.size() == 10);
  for (int64_t i = 0; i < pd.data.size(); ++i) {
    const auto id = pd.data.ids()[i].item<int64_t>();
    const auto label = pd.data.labels()[i].item<int64_t>();
    if (poisoned.count(id)) {
      CHECK(label == 3);
      CHECK(pd.original_labels.at(id) == id % 10);
    } else {
      CHECK(label == id % 10);
      CHECK(torch::equal(pd.data.images()[i], data.images()[i]));
    }
  }
}

TEST_CASE("warp field round-trips through json") {
  const ImageShape shape{32, 32, 3};
  auto field = WarpField::random(shape, 4, 0.5, 2);
  auto back = WarpField::from_json(field.to_json(), shape);
  CHECK(torch::allclose(back.flow, field.flow));
  CHECK(field.max_displacement_pixels() > 0.0);
  CHECK(WarpField::identity(shape).max_displacement_pixels() == doctest::Approx(0.0));
}
