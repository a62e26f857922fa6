#include "../support/checks.hpp"
#include "../support/fixtures.hpp"

#include "bdb/defenses/detection.hpp"
#include "bdb/defenses/fine_tuning.hpp"
#include "bdb/defenses/in_training.hpp"
#include "bdb/defenses/neural_cleanse.hpp"
#include "bdb/defenses/suspicion.hpp"
#include "bdb/error.hpp"

#include "doctest_torch.hpp"

#include <set>

using namespace bdb;
using namespace bdb::defenses;

TEST_CASE("spectral flags the planted outliers") {
  const auto v = testing::check_spectral_fixture();
  INFO(v.detail);
  CHECK(v.pass);
}

TEST_CASE("activation clustering recovers the planted cluster") {
  const auto v = testing::check_ac_fixture();
  INFO(v.detail);
  CHECK(v.pass);
}

TEST_CASE("nearest-rank percentile") {
  std::vector<double> v{15, 20, 35, 40, 50};
  CHECK(nearest_rank_percentile(v, 30) == 20);
  CHECK(nearest_rank_percentile(v, 40) == 20);
  CHECK(nearest_rank_percentile(v, 50) == 35);
  CHECK(nearest_rank_percentile(v, 100) == 50);
  std::vector<double> sixty(60);
  std::iota(sixty.begin(), sixty.end(), 0.0);
  CHECK(nearest_rank_percentile(sixty, 85) == 50);  // 10 values at or above
}

TEST_CASE("two-means seeds and ties are deterministic") {
  auto x = torch::tensor({0.0, 0.1, 0.2, 10.0, 10.1}, torch::kFloat64).unsqueeze(1);
  auto r = two_means(x, {5, 6, 7, 8, 9});
  CHECK(r.size0 + r.size1 == 5);
  std::set<int> small_side;
  const int minority = r.size0 < r.size1 ? 0 : 1;
  CHECK(std::min(r.size0, r.size1) == 2);
  CHECK(r.assignment[3] == minority);
  CHECK(r.assignment[4] == minority);
  CHECK(two_means(x, {5, 6, 7, 8, 9}).assignment == r.assignment);
}

TEST_CASE("spectral skips a class without spread") {
  auto f = torch::ones({5, 3}, torch::kFloat64);
  auto report = spectral_detect_features(f, torch::zeros({5}, torch::kInt64), {0, 1, 2, 3, 4}, {});
  CHECK(report.suspected_ids.empty());
  CHECK(torch::equal(spectral_scores(f), torch::zeros({5}, torch::kFloat64)));
}

TEST_CASE("suspicion report scores against ground truth") {
  SuspicionReport r;
  r.suspected_ids = {1, 2, 3};
  r.score_against({0, 1, 2, 3, 4, 5}, {2, 3, 4});
  REQUIRE(r.confusion);
  CHECK(r.confusion->tp == 2);
  CHECK(r.confusion->fp == 1);
  CHECK(r.confusion->fn == 1);
  CHECK(r.confusion->tn == 2);
  auto back = SuspicionReport::from_json(r.to_json());
  CHECK(back.suspected_ids == r.suspected_ids);
}

TEST_CASE("neural cleanse anomaly index on a hand-computed fixture") {
  // One class at l1 = 9, nine near 200: median 200, MAD = 1 * 1.4826.
  std::vector<double> l1{9, 199, 200, 201, 200, 199, 201, 200, 200, 200};
  auto det = nc_detect(l1, 2.0);
  CHECK(det.median == doctest::Approx(200.0));
  CHECK(det.mad == doctest::Approx(1.4826 * 0.5));  // deviations 0,0,0,0,0,1,1,1,1,191
  REQUIRE(det.flagged.size() == 1);
  CHECK(det.flagged.front() == 0);
  std::vector<double> spread{9, 190, 195, 200, 205, 210, 200, 198, 202, 204};
  auto d2 = nc_detect(spread, 2.0);
  std::vector<double> dev;
  for (auto v : spread) dev.push_back(std::abs(v - 200.0));
  std::sort(dev.begin(), dev.end());
  const double mad = 1.4826 * 0.5 * (dev[4] + dev[5]);
  CHECK(d2.mad == doctest::Approx(mad));
  CHECK(d2.anomaly_index[0] == doctest::Approx(191.0 / mad));
  CHECK(d2.flagged == std::vector<int64_t>{0});
}

TEST_CASE("flooding loss identity") {
  auto l = torch::tensor({0.2, 0.5, 0.9}, torch::kFloat64);
  auto f = flooding_loss(l, 0.5);
  CHECK(f[0].item<double>() == doctest::Approx(0.8));  // 2b - L below the floor
  CHECK(f[1].item<double>() == doctest::Approx(0.5));
  CHECK(f[2].item<double>() == doctest::Approx(0.9));
}

TEST_CASE("nt-xent is low for matching views and high for shuffled ones") {
  torch::manual_seed(0);
  auto z = torch::randn({16, 8});
  auto same = nt_xent(z, z + 0.01 * torch::randn({16, 8}), 0.5).item<double>();
  auto shuffled = nt_xent(z, z.roll(1, 0), 0.5).item<double>();
  CHECK(same < shuffled);
}

TEST_CASE("simclr augmentation keeps pixels in range") {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
  auto x = torch::rand({4, 3, 32, 32});
  auto a = simclr_augment(x, gen);
  CHECK(a.sizes() == x.sizes());
  CHECK(a.min().item<float>() >= 0.0f);
  CHECK(a.max().item<float>() <= 1.0f);
}

TEST_CASE("nad default betas follow the trailing taps") {
  CHECK(default_nad_betas(3) == std::vector<double>{500, 1000, 1000});
  CHECK(default_nad_betas(2) == std::vector<double>{1000, 1000});
}

TEST_CASE("retrain_without guards the empty set") {
  std::vector<int64_t> ids{0, 1, 2};
  auto data = synthetic_dataset("train", ids, 0);
  CHECK_THROWS_AS(retrain_without(data, ids, Arch::SmallCNN, defense_train_config(1), "oracle"), ArgumentError);
}
