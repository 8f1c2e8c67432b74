#pragma once

#include <cstdint>
#include <span>

#include "scan/numkit.hpp"

namespace scan {

struct BceLoss {
  double value = 0.0;
  double grad_logit = 0.0;
};

// Numerically stable binary cross entropy on a raw logit; label is 0 or 1.
BceLoss bce_with_logit(double logit, int label);

// Lookup table of one prototype per identity, rows kept at unit norm once
// written. Excluded from gradient descent; refreshed by oim_update instead.
struct OimTable {
  Matrix prototypes;  // num_identities x width
  double momentum = 0.5;
  double temperature = 0.1;

  std::size_t num_identities() const { return prototypes.rows; }
  std::size_t width() const { return prototypes.cols; }
};

OimTable make_oim_table(std::size_t num_identities, std::size_t width, double momentum = 0.5,
                        double temperature = 0.1);

struct OimLoss {
  double value = 0.0;
  Vector grad_feature;
};

// Cross entropy of the normalized feature against all prototypes at the
// table's temperature. Gradient flows to the feature only.
OimLoss oim_forward(const Vector& feature, std::uint32_t identity, const OimTable& table);

// prototype <- normalize(momentum * prototype + (1 - momentum) * normalize(feature))
void oim_update(OimTable& table, const Vector& feature, std::uint32_t identity);

// verification loss plus lambda times the mean of the identity losses
double total_loss(double bce_value, std::span<const double> oim_values, double lambda_id);

}  // namespace scan
