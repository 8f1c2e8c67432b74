#include "scan/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace scan {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

BceLoss bce_with_logit(double logit, int label) {
  require(label == 0 || label == 1, "bce_with_logit: label must be 0 or 1");
  BceLoss out;
  // softplus(logit) - label * logit, evaluated without overflow
  out.value = std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::fabs(logit)));
  out.grad_logit = 1.0 / (1.0 + std::exp(-logit)) - label;
  return out;
}

OimTable make_oim_table(std::size_t num_identities, std::size_t width, double momentum,
                        double temperature) {
  require(num_identities > 0 && width > 0, "make_oim_table: empty table");
  require(temperature > 0.0, "make_oim_table: temperature must be positive");
  OimTable t;
  t.prototypes = Matrix(num_identities, width, 0.0);
  t.momentum = momentum;
  t.temperature = temperature;
  return t;
}

OimLoss oim_forward(const Vector& feature, std::uint32_t identity, const OimTable& table) {
  require(identity < table.num_identities(), "oim_forward: identity " + std::to_string(identity) +
                                                 " out of range");
  require(feature.size() == table.width(), "oim_forward: feature size mismatch");
  double norm = l2_norm(feature);
  require(norm > 0.0, "oim_forward: zero-norm feature");

  Vector unit(feature.size());
  for (std::size_t d = 0; d < feature.size(); ++d) unit[d] = feature[d] / norm;

  const std::size_t L = table.num_identities();
  Vector logits(L);
  double mx = -1e300;
  for (std::size_t i = 0; i < L; ++i) {
    double s = 0.0;
    const double* p = table.prototypes.row(i);
    for (std::size_t d = 0; d < unit.size(); ++d) s += p[d] * unit[d];
    logits[i] = s / table.temperature;
    mx = std::max(mx, logits[i]);
  }
  double sum = 0.0;
  Vector probs(L);
  for (std::size_t i = 0; i < L; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (std::size_t i = 0; i < L; ++i) probs[i] /= sum;

  OimLoss out;
  out.value = -(logits[identity] - mx - std::log(sum));

  // d value / d unit = P' (probs - onehot) / temperature
  Vector grad_unit(unit.size(), 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    double c = (probs[i] - (i == identity ? 1.0 : 0.0)) / table.temperature;
    if (c == 0.0) continue;
    const double* p = table.prototypes.row(i);
    for (std::size_t d = 0; d < unit.size(); ++d) grad_unit[d] += c * p[d];
  }
  // through the normalization: (g - (g . unit) unit) / norm
  double gu = dot(grad_unit, unit);
  out.grad_feature.resize(unit.size());
  for (std::size_t d = 0; d < unit.size(); ++d)
    out.grad_feature[d] = (grad_unit[d] - gu * unit[d]) / norm;
  return out;
}

void oim_update(OimTable& table, const Vector& feature, std::uint32_t identity) {
  require(identity < table.num_identities(), "oim_update: identity out of range");
  require(feature.size() == table.width(), "oim_update: feature size mismatch");
  double norm = l2_norm(feature);
  require(norm > 0.0, "oim_update: zero-norm feature");

  double* row = table.prototypes.row(identity);
  Vector blend(feature.size());
  for (std::size_t d = 0; d < feature.size(); ++d)
    blend[d] = table.momentum * row[d] + (1.0 - table.momentum) * feature[d] / norm;
  double bn = l2_norm(blend);
  if (bn == 0.0) return;  // degenerate cancellation, keep the old prototype
  for (std::size_t d = 0; d < feature.size(); ++d) row[d] = blend[d] / bn;
}

double total_loss(double bce_value, std::span<const double> oim_values, double lambda_id) {
  if (oim_values.empty()) return bce_value;
  double s = 0.0;
  for (double v : oim_values) s += v;
  return bce_value + lambda_id * s / static_cast<double>(oim_values.size());
}

}  // namespace scan
