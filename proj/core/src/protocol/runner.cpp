#include "bdb/protocol/runner.hpp"

#include "bdb/attacks/input_aware.hpp"
#include "bdb/attacks/low_frequency.hpp"
#include "bdb/attacks/ssba.hpp"
#include "bdb/attacks/wanet.hpp"
#include "bdb/defenses/anp.hpp"
#include "bdb/defenses/detection.hpp"
#include "bdb/defenses/fine_tuning.hpp"
#include "bdb/defenses/in_training.hpp"
#include "bdb/defenses/neural_cleanse.hpp"
#include "bdb/error.hpp"
#include "bdb/tensor_io.hpp"
#include "../binary_io.hpp"

#include <chrono>
#include <iostream>
#include <set>

namespace bdb::protocol {

namespace fs = std::filesystem;
using nlohmann::json;

CleanData load_clean_data(const ExperimentConfig& cfg) {
  auto splits = load_dataset(cfg.dataset, cfg.data_root);
  if (cfg.target_class >= splits.train.n_classes())
    throw ConfigError("target_class " + std::to_string(cfg.target_class) + " is out of range for " + cfg.dataset);
  auto rs = split_clean_reserve(splits.train, cfg.reserve_ratio, cfg.seed);
  return {std::move(rs.train), std::move(rs.reserve), std::move(splits.test)};
}

namespace {

void write_json(const fs::path& path, const json& j) { detail::write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw LoadError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// Pulls `key` out of a parameter document, returning it (or `fallback`).
json take(json& params, const std::string& key, json fallback = json::object()) {
  if (!params.contains(key)) return fallback;
  auto v = params.at(key);
  params.erase(key);
  return v;
}

/// `defaults` patched by `user`; keys unknown to the defaults are rejected.
json merge_params(const json& defaults, const json& user, const std::string& what) {
  for (const auto& [k, v] : user.items())
    if (!defaults.contains(k)) throw ConfigError("unknown " + what + " parameter '" + k + "'");
  auto out = defaults;
  out.merge_patch(user);
  return out;
}

ModelCheckpoint train_surrogate(const ExperimentConfig& cfg, const CleanData& data, int64_t epochs,
                                const fs::path& dir) {
  const auto path = dir / "surrogate.ckpt";
  if (fs::exists(path)) return load_checkpoint(path);
  auto tcfg = cfg.attack_train_config();
  tcfg.epochs = epochs;
  auto ckpt = train_classifier(data.train, cfg.arch, tcfg, &data.test, "surrogate-train");
  save_checkpoint(ckpt, path);
  return ckpt;
}

struct Built {
  ModelCheckpoint model;
  attacks::PoisonedDataset train;
  attacks::PoisonedDataset test;
  json info;
};

Built build_trigger_attack(const ExperimentConfig& cfg, const CleanData& data, const fs::path& dir) {
  auto params = cfg.attack_params;
  const auto lf_json = take(params, "lf");
  const auto ssba_json = take(params, "ssba");
  const auto surrogate_epochs = take(params, "surrogate_epochs", cfg.attack_train_config().epochs).get<int64_t>();
  params["kind"] = cfg.attack;
  params["target_class"] = cfg.target_class;
  auto spec = attacks::TriggerSpec::from_config(params);
  const auto shape = data.train.image_shape();
  json info = json::object();
  switch (spec.kind) {
    case attacks::TriggerKind::Blended:
      spec.pattern = spec.pattern_file.empty() ? attacks::procedural_blend_pattern(shape, spec.pattern_seed)
                                               : attacks::resize_pattern(load_ppm(spec.pattern_file), shape);
      save_ppm(spec.pattern, dir / "pattern.ppm");
      break;
    case attacks::TriggerKind::LC:
      spec.surrogate = std::make_shared<const ModelCheckpoint>(train_surrogate(cfg, data, surrogate_epochs, dir));
      break;
    case attacks::TriggerKind::LF: {
      auto surrogate = train_surrogate(cfg, data, surrogate_epochs, dir);
      auto net = surrogate.instantiate();
      auto lcfg = attacks::LfConfig::from_json(lf_json);
      lcfg.seed = cfg.seed;
      auto lf = attacks::generate_lf_trigger(net, data.train, lcfg);
      spec.lf_trigger = lf.trigger;
      save_tensor(lf.trigger, dir / "lf_trigger.bdbt");
      info["lf"] = {{"fooling_rate", lf.fooling_rate}, {"reached", lf.reached}, {"passes", lf.passes}};
      break;
    }
    case attacks::TriggerKind::SSBA: {
      auto scfg = attacks::SsbaConfig::from_json(ssba_json);
      scfg.seed = cfg.seed;
      auto trained = attacks::train_ssba_encoder(data.train, scfg);
      spec.ssba = trained.codec;
      attacks::save_ssba_codec(*trained.codec, dir / "ssba_codec.pt");
      info["ssba"] = {{"held_out_bit_accuracy", trained.held_out_bit_accuracy}};
      break;
    }
    default: break;
  }
  auto schedule = attacks::make_poison_schedule(data.train, cfg.ratio, cfg.target_class, spec.clean_label(), cfg.seed);
  auto train = attacks::build_poisoned_dataset(data.train, schedule, spec);
  auto test = attacks::build_poisoned_testset(data.test, spec);
  auto model = train_classifier(train.data, cfg.arch, cfg.attack_train_config(), &data.test, "attack-train:" + cfg.attack);
  info["trigger"] = spec.to_json();
  return {std::move(model), std::move(train), std::move(test), info};
}

Built build_wanet(const ExperimentConfig& cfg, const CleanData& data, const fs::path& dir) {
  auto p = cfg.attack_params;
  auto wcfg = attacks::WanetConfig::from_json(p);
  wcfg.poison_ratio = cfg.ratio;
  wcfg.target_class = cfg.target_class;
  wcfg.seed = cfg.seed;
  if (!p.contains("train")) wcfg.train = cfg.attack_train_config();
  auto result = attacks::train_wanet(data.train, cfg.arch, wcfg, &data.test);
  write_json(dir / "warp_field.json", result.field.to_json());
  const auto field = result.field;
  attacks::TriggerFn warp = [field](const torch::Tensor& x) { return attacks::wanet_warp(x, field); };
  auto schedule = attacks::make_poison_schedule(data.train, cfg.ratio, cfg.target_class, false, cfg.seed);
  auto train = attacks::apply_schedule(data.train, schedule, warp, true, {{"kind", "wanet"}});
  auto test = attacks::build_poisoned_testset(data.test, warp, cfg.target_class, {{"kind", "wanet"}});
  return {std::move(result.model), std::move(train), std::move(test), {{"wanet", wcfg.to_json()}}};
}

Built build_input_aware(const ExperimentConfig& cfg, const CleanData& data, const fs::path& dir) {
  auto icfg = attacks::InputAwareConfig::from_json(cfg.attack_params);
  icfg.attack_ratio = cfg.ratio;
  icfg.target_class = cfg.target_class;
  icfg.seed = cfg.seed;
  if (cfg.scale == Scale::Desk && !cfg.attack_params.contains("epochs")) icfg.epochs = cfg.attack_train_config().epochs;
  if (cfg.scale == Scale::Desk && !cfg.attack_params.contains("mask_epochs")) icfg.mask_epochs = 10;
  auto result = attacks::train_input_aware(data.train, cfg.arch, icfg, &data.test);
  attacks::save_bundle(result.bundle, dir / "generators");
  auto bundle = std::make_shared<attacks::GeneratorBundle>(result.bundle);
  attacks::TriggerFn trig = [bundle](const torch::Tensor& x) {
    return x.dim() == 3 ? bundle->apply(x.unsqueeze(0)).squeeze(0) : bundle->apply(x);
  };
  auto schedule = attacks::make_poison_schedule(data.train, cfg.ratio, cfg.target_class, false, cfg.seed);
  auto train = attacks::apply_schedule(data.train, schedule, trig, true, {{"kind", "inputaware"}});
  auto test = attacks::build_poisoned_testset(data.test, trig, cfg.target_class, {{"kind", "inputaware"}});
  return {*result.bundle.classifier, std::move(train), std::move(test),
          {{"inputaware", icfg.to_json()}, {"final_mask_density", result.final_mask_density}}};
}

}  // namespace

std::optional<AttackArtifacts> load_attack_artifacts(const ExperimentConfig& cfg) {
  const auto dir = cfg.attack_dir();
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) return std::nullopt;
  auto manifest = read_json(manifest_path);
  if (manifest.value("attack_hash", std::string()) != cfg.attack_hash()) return std::nullopt;
  return AttackArtifacts{dir,
                         load_checkpoint(dir / "model.ckpt"),
                         attacks::load_poisoned_dataset(dir / "poisoned_train"),
                         attacks::load_poisoned_dataset(dir / "poisoned_test"),
                         eval::MetricTriple::from_json(manifest.at("metrics")),
                         manifest.value("info", json::object()),
                         false};
}

AttackArtifacts prepare_attack(const ExperimentConfig& cfg, const CleanData& data) {
  if (auto cached = load_attack_artifacts(cfg)) return std::move(*cached);
  const auto dir = cfg.attack_dir();
  fs::create_directories(dir);
  fs::remove(dir / "manifest.json");
  Built built = cfg.attack == "wanet"        ? build_wanet(cfg, data, dir)
                : cfg.attack == "inputaware" ? build_input_aware(cfg, data, dir)
                                             : build_trigger_attack(cfg, data, dir);
  auto metrics = eval::evaluate(built.model, data.test, built.test);
  save_checkpoint(built.model, dir / "model.ckpt");
  attacks::save_poisoned_dataset(built.train, dir / "poisoned_train");
  attacks::save_poisoned_dataset(built.test, dir / "poisoned_test");
  json manifest = {{"attack_hash", cfg.attack_hash()}, {"attack_identity", cfg.attack_identity()},
                   {"metrics", metrics.to_json()},    {"info", built.info},
                   {"built_at", utc_timestamp()},      {"framework_version", BDB_VERSION}};
  write_json(dir / "manifest.json", manifest);
  // Every build appends one line; the grid counts attack trainings from it.
  {
    std::ofstream log(dir / "trainings.log", std::ios::app);
    log << utc_timestamp() << " " << cfg.attack_hash() << "\n";
  }
  return {dir, std::move(built.model), std::move(built.train), std::move(built.test), metrics, built.info, true};
}

json default_defense_params(const std::string& defense, Scale scale) {
  const bool desk = scale == Scale::Desk;
  if (defense == "none") return json::object();
  if (defense == "ft") return {{"epochs", 20}, {"lr", 0.01}, {"batch_size", 256}};
  if (defense == "fp") return {{"tolerance", 0.1}, {"epochs", 10}, {"lr", 0.01}, {"batch_size", 256}};
  if (defense == "nad")
    return {{"betas", json::array()}, {"power", 2.0}, {"teacher_epochs", 10}, {"epochs", 20}, {"lr", 0.01},
            {"batch_size", 256}};
  if (defense == "nc")
    return {{"epochs", desk ? 20 : 80},   {"batch_size", 128},          {"lr", 0.1},
            {"init_lambda", 1e-3},        {"lambda_factor", 1.5},       {"success_threshold", 0.99},
            {"patience", 5},              {"early_stop_patience", desk ? 10 : 25},
            {"anomaly_threshold", 2.0},   {"unlearning_ratio", 0.2},    {"mitigate_epochs", 10},
            {"mitigate_lr", 0.01}};
  if (defense == "anp")
    return {{"eps", 0.4},     {"alpha", 0.2},   {"iters", desk ? 500 : 2000}, {"threshold", 0.2},
            {"inner_steps", 1}, {"mask_lr", 0.2}, {"batch_size", 128}};
  if (defense == "ac") return {{"n_dims", 10}, {"size_threshold", 0.35}, {"layer", "penultimate"}};
  if (defense == "spectral") return {{"percentile", 85.0}, {"layer", "penultimate"}};
  if (defense == "abl")
    return {{"tuning_epochs", 20},     {"flooding", 0.5},  {"iso_ratio", 0.01},
            {"finetune_epochs", desk ? 20 : 60}, {"unlearn_epochs", 20}, {"unlearn_lr", 5e-4},
            {"unlearn_batch", 64},     {"lr", 0.01},       {"batch_size", 128}};
  if (defense == "dbd") {
    defenses::DbdConfig d;
    if (desk) {
      d.ssl_epochs = 30;
      d.semi_epochs = 10;
    }
    auto j = d.to_json();
    j.erase("seed");
    return j;
  }
  throw ConfigError("unknown defense '" + defense + "'");
}

void check_routing(const std::string& defense, const DefenseArtifacts& in) {
  const auto kind = defenses::defense_kind_from_string(defense);
  const auto need = defenses::required_inputs(kind);
  const bool ok = (!need.backdoored_model || in.model) && (!need.poisoned_data || in.poisoned_train) &&
                  (!need.clean_reserve || in.reserve);
  if (!ok)
    throw RoutingError("defense '" + defense + "' requires: " + defenses::describe(need) +
                       "; missing inputs cannot be substituted");
}

namespace {

json detection_details(defenses::SuspicionReport& report, const attacks::PoisonedDataset& poisoned,
                       const fs::path& out_dir) {
  report.score_against(poisoned.data.id_vector(), poisoned.schedule.poisoned_ids);
  defenses::save_suspicion(report, out_dir / "suspicion.json");
  json d = {{"suspected", report.suspected_ids.size()}, {"notes", report.notes}};
  if (report.confusion) {
    const auto& c = *report.confusion;
    d["confusion"] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn},
                      {"precision", c.precision()}, {"recall", c.recall()}};
  }
  return d;
}

TrainConfig recipe(const json& p, uint64_t seed, const std::string& epochs_key = "epochs") {
  auto t = defenses::defense_train_config(p.at(epochs_key).get<int64_t>(), p.value("lr", 0.01), seed);
  t.batch_size = p.value("batch_size", t.batch_size);
  return t;
}

}  // namespace

DefenseOutcome apply_defense(const ExperimentConfig& cfg, const DefenseArtifacts& in, const CleanData& data,
                             const fs::path& out_dir) {
  check_routing(cfg.defense, in);
  const auto p = merge_params(default_defense_params(cfg.defense, cfg.scale), cfg.defense_params, cfg.defense);
  fs::create_directories(out_dir);
  const auto seed = cfg.seed;
  const auto& d = cfg.defense;
  if (d == "none") return {*in.model, {}};
  if (d == "ft") return {defenses::defend_ft(*in.model, *in.reserve, recipe(p, seed)), {}};
  if (d == "fp") {
    defenses::FpConfig c;
    c.tolerance = p.at("tolerance").get<double>();
    c.finetune = recipe(p, seed);
    auto r = defenses::defend_fp(*in.model, *in.reserve, c);
    return {std::move(r.model),
            {{"pruned_channels", r.pruned_channels.size()},
             {"reserve_accuracy_before", r.reserve_accuracy_before},
             {"reserve_accuracy_pruned", r.reserve_accuracy_pruned}}};
  }
  if (d == "nad") {
    defenses::NadConfig c;
    c.betas = p.at("betas").get<std::vector<double>>();
    c.power = p.at("power").get<double>();
    c.teacher_epochs = p.at("teacher_epochs").get<int64_t>();
    c.train = recipe(p, seed);
    return {defenses::defend_nad(*in.model, *in.reserve, c), {}};
  }
  if (d == "nc") {
    defenses::NcConfig c;
    c.epochs = p.at("epochs");
    c.batch_size = p.at("batch_size");
    c.lr = p.at("lr");
    c.init_lambda = p.at("init_lambda");
    c.lambda_factor = p.at("lambda_factor");
    c.success_threshold = p.at("success_threshold");
    c.patience = p.at("patience");
    c.early_stop_patience = p.at("early_stop_patience");
    c.anomaly_threshold = p.at("anomaly_threshold");
    c.unlearning_ratio = p.at("unlearning_ratio");
    c.mitigate = defenses::defense_train_config(p.at("mitigate_epochs"), p.at("mitigate_lr"), seed);
    c.seed = seed;
    auto r = defenses::defend_nc(*in.model, *in.reserve, c);
    return {std::move(r.model),
            {{"action", r.acted ? "unlearn" : "none"},
             {"flagged", r.detection.flagged},
             {"anomaly_index", r.detection.anomaly_index},
             {"l1_norms", r.detection.l1_norms}}};
  }
  if (d == "anp") {
    defenses::AnpConfig c;
    c.eps = p.at("eps");
    c.alpha = p.at("alpha");
    c.iters = p.at("iters");
    c.threshold = p.at("threshold");
    c.inner_steps = p.at("inner_steps");
    c.mask_lr = p.at("mask_lr");
    c.batch_size = p.at("batch_size");
    c.seed = seed;
    auto r = defenses::defend_anp(*in.model, *in.reserve, c);
    return {std::move(r.model), {{"pruned_neurons", r.pruned.size()}, {"total_neurons", r.mask.size()}}};
  }
  if (d == "ac" || d == "spectral") {
    defenses::SuspicionReport report;
    if (d == "ac") {
      defenses::AcConfig c;
      c.n_dims = p.at("n_dims");
      c.size_threshold = p.at("size_threshold");
      c.layer = p.at("layer");
      c.seed = seed;
      report = defenses::ac_detect(*in.model, in.poisoned_train->data, c);
    } else {
      defenses::SpectralConfig c;
      c.percentile = p.at("percentile");
      c.layer = p.at("layer");
      report = defenses::spectral_detect(*in.model, in.poisoned_train->data, c);
    }
    auto details = detection_details(report, *in.poisoned_train, out_dir);
    auto model = defenses::retrain_without(in.poisoned_train->data, report.suspected_ids, cfg.arch,
                                           cfg.attack_train_config(), d, &data.test);
    return {std::move(model), details};
  }
  if (d == "abl") {
    defenses::AblConfig c;
    c.tuning_epochs = p.at("tuning_epochs");
    c.flooding = p.at("flooding");
    c.iso_ratio = p.at("iso_ratio");
    c.finetune_epochs = p.at("finetune_epochs");
    c.unlearn_epochs = p.at("unlearn_epochs");
    c.unlearn_lr = p.at("unlearn_lr");
    c.unlearn_batch = p.at("unlearn_batch");
    c.train = defenses::defense_train_config(c.tuning_epochs, p.at("lr"), seed);
    c.train.batch_size = p.at("batch_size");
    auto iso = defenses::abl_isolate(in.poisoned_train->data, cfg.arch, c);
    auto details = detection_details(iso.report, *in.poisoned_train, out_dir);
    auto model = defenses::abl_unlearn(iso.warm, in.poisoned_train->data, iso.report.suspected_ids, c);
    return {std::move(model), details};
  }
  if (d == "dbd") {
    auto j = p;
    j["seed"] = seed;
    auto c = defenses::DbdConfig::from_json(j);
    auto r = defenses::dbd_pipeline(in.poisoned_train->data, cfg.arch, c);
    auto details = detection_details(r.report, *in.poisoned_train, out_dir);
    return {std::move(r.model), details};
  }
  throw ConfigError("unknown defense '" + d + "'");
}

namespace {

ResultRecord base_record(const ExperimentConfig& cfg) {
  ResultRecord r;
  r.config = cfg.to_json();
  r.config_hash = cfg.config_hash();
  r.attack_hash = cfg.attack_hash();
  return r;
}

DefenseArtifacts explicit_inputs(const ExperimentConfig& cfg, const RunOptions& o, const CleanData& data,
                                 std::optional<attacks::PoisonedDataset>& poisoned_test) {
  DefenseArtifacts in;
  in.reserve = data.reserve;
  if (o.model_path) in.model = load_checkpoint(*o.model_path);
  if (o.poisoned_train_dir) in.poisoned_train = attacks::load_poisoned_dataset(*o.poisoned_train_dir);
  if (o.poisoned_test_dir) poisoned_test = attacks::load_poisoned_dataset(*o.poisoned_test_dir);
  if (!o.model_path && !o.poisoned_train_dir) {
    if (auto cached = load_attack_artifacts(cfg)) {
      in.model = cached->model;
      in.poisoned_train = cached->poisoned_train;
      poisoned_test = cached->poisoned_test;
    }
  }
  return in;
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  const auto run_dir = cfg.mode == Mode::Attack ? cfg.cell_dir() / "none" : cfg.run_dir();
  if (!options.force)
    if (auto done = find_completed(run_dir, cfg.config_hash())) return {*done, run_dir / "record.json", true, false};

  auto record = base_record(cfg);
  if (cfg.mode == Mode::Attack) {
    record.config["defense"] = "none";
  }
  const auto t0 = std::chrono::steady_clock::now();
  bool trained = false;
  try {
    auto data = load_clean_data(cfg);
    if (cfg.mode == Mode::Defense) {
      std::optional<attacks::PoisonedDataset> poisoned_test;
      auto in = explicit_inputs(cfg, options, data, poisoned_test);
      check_routing(cfg.defense, in);
      if (!poisoned_test) throw PrerequisiteError("defense mode needs the poisoned test set of the attack run");
      auto out = apply_defense(cfg, in, data, run_dir);
      if (in.model) record.pre = eval::evaluate(*in.model, data.test, *poisoned_test);
      record.post = eval::evaluate(out.model, data.test, *poisoned_test);
      record.details = out.details;
      save_checkpoint(out.model, run_dir / "model.ckpt");
    } else {
      auto art = prepare_attack(cfg, data);
      trained = art.trained_now;
      record.pre = art.metrics;
      record.details["attack"] = art.info;
      if (cfg.mode == Mode::Attack || cfg.defense == "none") {
        record.post = art.metrics;
      } else {
        DefenseArtifacts in{art.model, art.poisoned_train, data.reserve};
        auto out = apply_defense(cfg, in, data, run_dir);
        record.post = eval::evaluate(out.model, data.test, art.poisoned_test);
        record.details["defense"] = out.details;
        save_checkpoint(out.model, run_dir / "model.ckpt");
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const RoutingError&) {
    throw;
  } catch (const Error& e) {
    record.status = "failed";
    record.error = e.what();
    record.exit_code = e.exit_code();
  } catch (const std::exception& e) {
    record.status = "failed";
    record.error = e.what();
    record.exit_code = 3;
  }
  record.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  record.created_at = utc_timestamp();
  fs::create_directories(run_dir);
  write_json(run_dir / "config.json", cfg.to_json());
  auto path = write_record(record, run_dir);
  return {record, path, false, trained};
}

}  // namespace bdb::protocol
