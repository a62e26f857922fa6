#include "bdb/defenses/fine_tuning.hpp"

#include "bdb/error.hpp"

namespace bdb::defenses {

ModelCheckpoint defend_ft(const ModelCheckpoint& model, const LabeledDataset& reserve, const TrainConfig& cfg) {
  auto net = fine_tune(model, reserve, cfg);
  return model.derive(net, {"ft", stage_hash("ft", cfg.to_json())}, {{"defense", "ft"}});
}

}  // namespace bdb::defenses
