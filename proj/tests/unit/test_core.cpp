#include "bdb/checkpoint.hpp"
#include "bdb/dataset.hpp"
#include "bdb/error.hpp"
#include "bdb/hashing.hpp"
#include "bdb/models.hpp"
#include "bdb/training.hpp"

#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>
#include <numeric>
#include <unistd.h>
#include <set>

using namespace bdb;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("bdb-unit-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("desk subset is class balanced and deterministic") {
  auto a = load_dataset("desk-synthetic-cifar10-subset", "unused");
  CHECK(a.train.size() == 10000);
  for (auto c : a.train.class_counts()) CHECK(c == 1000);
  CHECK(a.train.image_shape() == ImageShape{32, 32, 3});
  CHECK(a.train.images().min().item<float>() >= 0.0f);
  CHECK(a.train.images().max().item<float>() <= 1.0f);
  auto b = load_dataset("desk-synthetic-cifar10-subset", "unused");
  CHECK(torch::equal(a.train.images().slice(0, 0, 50), b.train.images().slice(0, 0, 50)));
  CHECK(torch::equal(a.train.ids(), b.train.ids()));
}

TEST_CASE("clean reserve is stratified and disjoint") {
  auto d = load_dataset("desk-synthetic-cifar10-subset", "unused");
  auto r = split_clean_reserve(d.train, 0.05, 4);
  CHECK(r.reserve.size() == 500);
  CHECK(r.train.size() == 9500);
  for (auto c : r.reserve.class_counts()) CHECK(c == 50);
  std::set<int64_t> reserve_ids;
  for (auto id : r.reserve.id_vector()) reserve_ids.insert(id);
  for (auto id : r.train.id_vector()) CHECK(reserve_ids.count(id) == 0);
  CHECK(split_clean_reserve(d.train, 0.05, 4).reserve.id_vector() == r.reserve.id_vector());
  CHECK_THROWS_AS(split_clean_reserve(d.train, 0.0, 4), ArgumentError);
  CHECK_THROWS_AS(split_clean_reserve(d.train, 1.0, 4), ArgumentError);
  CHECK_THROWS_AS(split_clean_reserve(d.train, 0.0001, 4), ArgumentError);
}

TEST_CASE("full-scale reserve quota matches 2,500 of 50,000") {
  std::vector<int64_t> counts(10, 5000);
  auto q = stratified_quota(counts, 0.05);
  CHECK(std::accumulate(q.begin(), q.end(), int64_t{0}) == 2500);
}

TEST_CASE("checkpoint round trip is byte identical") {
  torch::manual_seed(0);
  auto model = make_classifier({Arch::SmallCNN, 10, {32, 32, 3}});
  auto ckpt = ModelCheckpoint::capture(model, {{"clean-train", "abc"}}, 7, {{"note", "x"}});
  const auto dir = scratch("ckpt");
  save_checkpoint(ckpt, dir / "a.ckpt");
  auto back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.params_equal(ckpt));
  CHECK(back.seed() == 7);
  CHECK(back.lineage().size() == 1);
  CHECK(encode_checkpoint(back) == encode_checkpoint(ckpt));

  auto bytes = encode_checkpoint(ckpt);
  bytes[8] = static_cast<char>(kCheckpointFormatVersion + 1);
  CHECK_THROWS_AS(decode_checkpoint(bytes, "patched"), MigrationError);
  auto truncated = encode_checkpoint(ckpt).substr(0, 200);
  CHECK_THROWS_AS(decode_checkpoint(truncated, "truncated"), LoadError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), LoadError);
  fs::remove_all(dir);
}

TEST_CASE("forward features are deterministic and validate the layer") {
  torch::manual_seed(1);
  auto model = make_classifier({Arch::SmallCNN, 10, {32, 32, 3}});
  auto ckpt = ModelCheckpoint::capture(model, {{"init", "0"}}, 1);
  auto batch = torch::rand({4, 32, 32, 3});
  auto a = forward_features(ckpt, batch, "penultimate");
  auto b = forward_features(ckpt, batch, "penultimate");
  CHECK(torch::equal(a, b));
  CHECK(torch::isfinite(forward_features(ckpt, torch::zeros({2, 32, 32, 3}), "penultimate")).all().item<bool>());
  CHECK_THROWS_AS(forward_features(ckpt, batch, "no-such-layer"), ArgumentError);
  CHECK_THROWS_AS(forward_features(ckpt, torch::rand({2, 16, 16, 3}), "penultimate"), ArgumentError);
}

TEST_CASE("preact resnet penultimate width is 512") {
  torch::manual_seed(0);
  auto model = make_classifier({Arch::PreActResNet18, 10, {32, 32, 3}});
  model->eval();
  torch::NoGradGuard g;
  CHECK(model->features(torch::rand({1, 3, 32, 32}), "penultimate").size(1) == 512);
}

TEST_CASE("one-sample dataset is memorised") {
  auto data = synthetic_dataset("train", std::vector<int64_t>{3}, 0);
  TrainConfig cfg;
  cfg.epochs = 1;
  auto ckpt = train_classifier(data, Arch::SmallCNN, cfg);
  CHECK(ckpt.lineage().front().stage == "clean-train");
  CHECK(ckpt.metadata().at("final_train_accuracy").get<double>() == doctest::Approx(100.0));
}

TEST_CASE("config hash ignores key order") {
  CHECK(config_hash({{"a", 1}, {"b", {1, 2}}}) == config_hash({{"b", {1, 2}}, {"a", 1}}));
  CHECK(config_hash({{"a", 1}}) != config_hash({{"a", 2}}));
  CHECK(sha256_hex(std::string_view("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("training config rejects unavailable devices") {
  CHECK_THROWS_AS(TrainConfig::from_json({{"device", "cuda"}}), ConfigError);
  CHECK(scheduled_lr(TrainConfig{}, 0) == doctest::Approx(0.01));
  TrainConfig c;
  c.epochs = 10;
  CHECK(scheduled_lr(c, 5) == doctest::Approx(0.005));
}
