#pragma once

#include "bdb/attacks/triggers.hpp"
#include "bdb/models.hpp"

#include <torch/torch.h>

namespace bdb::attacks {

/// Untargeted L-inf PGD from the clean point (no random start): ascend the
/// cross-entropy of `labels`, project to the eps-ball and to [0,1].
/// Images are N x H x W x C.
torch::Tensor pgd_untargeted(Classifier& model, const torch::Tensor& images, const torch::Tensor& labels,
                             const PgdConfig& cfg, int64_t batch_size = 256);

/// PGD perturbation followed by the BadNets patch.
torch::Tensor craft_lc_samples(Classifier& surrogate, const torch::Tensor& images, const torch::Tensor& labels,
                               const PgdConfig& cfg, int64_t patch = 3, float value = 1.0f);

}  // namespace bdb::attacks
