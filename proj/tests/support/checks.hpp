#pragma once

#include "bdb/models.hpp"

#include <torch/torch.h>

#include <string>

namespace bdb::testing {

// Each check returns a verdict plus the numbers behind it, so the unit
// suite and the acceptance report share one implementation.
struct Verdict {
  bool pass = false;
  std::string detail;
};

Verdict check_trigger_algebra();
Verdict check_spectral_fixture();
Verdict check_ac_fixture();
Verdict check_shapley_additive();
Verdict check_shapley_efficiency();
Verdict check_tsne_purity();

// Masking the top-decile Grad-CAM pixels must move the explained logit more
// than masking an equal number of random pixels. `images` is N x H x W x C,
// `classes` the class explained for each image.
struct OcclusionStats {
  int64_t fixtures = 0;
  int64_t passed = 0;
};
OcclusionStats gradcam_occlusion(Classifier& model, const torch::Tensor& images, const torch::Tensor& classes,
                                 const std::string& layer, uint64_t seed);

}  // namespace bdb::testing
