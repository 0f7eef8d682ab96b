#pragma once

// Reconstruction quality when each soft assignment keeps only its S largest weights.

#include <vector>

#include "scq/dataset.hpp"
#include "scq/trainer.hpp"

namespace scq::train {

struct TopSRow {
  std::size_t s = 0;
  double mse = 0.0;         // decoded image vs input, mean over pixels
  double latent_mse = 0.0;  // Z_e vs C P_S, mean over latent entries
};

struct TopSReport {
  std::vector<TopSRow> rows;
  double unrestricted_mse = 0.0;
  double unrestricted_latent_mse = 0.0;
};

/// Uses the first `limit` images of `images` (all if 0), processed in the
/// model's batch size. Throws ContractViolation for hard quantizers or S > K.
TopSReport analyze_tops(const LoadedModel& m, const data::Dataset& images, std::size_t max_s,
                        std::size_t limit);

}  // namespace scq::train
