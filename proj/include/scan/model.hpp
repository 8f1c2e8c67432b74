#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scan/attention.hpp"
#include "scan/gradcheck.hpp"
#include "scan/losses.hpp"
#include "scan/numkit.hpp"
#include "scan/rng.hpp"
#include "scan/similarity.hpp"

namespace scan {

// Table V rows 1-8.
enum class Variant {
  avg_pool = 1,
  max_pool = 2,
  san_only = 3,
  can_only = 4,
  single_path = 5,
  shared_fc = 6,
  dot_product = 7,
  full = 8,
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
const std::vector<Variant>& all_variants();

struct ModelParams {
  std::size_t feature_dim = 0;
  std::size_t width = 128;
  Variant variant = Variant::full;
  LinearLayer fc0;  // frame content projection
  LinearLayer fc1;  // self-attention projection
  LinearLayer fc2;  // collaborative-attention projection (empty when shared)
  LinearLayer fc3;  // similarity feature -> match logit

  bool shares_fc() const { return variant == Variant::shared_fc; }
  bool uses_san() const {
    return variant == Variant::san_only || variant == Variant::single_path ||
           variant == Variant::shared_fc || variant == Variant::dot_product ||
           variant == Variant::full;
  }
  bool uses_can() const {
    return variant == Variant::can_only || variant == Variant::single_path ||
           variant == Variant::shared_fc || variant == Variant::dot_product ||
           variant == Variant::full;
  }
  bool uses_pooling() const {
    return variant == Variant::avg_pool || variant == Variant::max_pool ||
           variant == Variant::can_only || variant == Variant::single_path;
  }
  PoolMode pool_mode() const {
    return variant == Variant::max_pool ? PoolMode::max : PoolMode::avg;
  }
  CorrelationMode correlation() const {
    return variant == Variant::dot_product ? CorrelationMode::dot : CorrelationMode::hadamard;
  }
  const LinearLayer& can_layer() const { return shares_fc() ? fc1 : fc2; }
};

// Weights uniform in +-sqrt(1/in_dim), biases zero.
ModelParams init_model(std::size_t feature_dim, std::size_t width, Variant variant, Rng& rng);

// Trainable scalars: the fc layers only, the attention stage owns none.
std::size_t parameter_count(const ModelParams& m);

struct LayerGrads {
  Matrix weight;
  Vector bias;
};

struct ModelGrads {
  LayerGrads fc0, fc1, fc2, fc3;

  static ModelGrads zeros_like(const ModelParams& m);
  void scale(double a);
  bool finite() const;
};

// Everything computed once per clip and reused across the pairs that touch
// it. `identity_desc` is the per-clip descriptor the identity loss and the
// prototype updates attach to: the self-attended descriptor when the
// variant runs SAN, the pooled stand-in otherwise.
struct ClipEncoding {
  Matrix raw;
  ProjectedClip proj;
  SequenceDescriptor san_desc;
  SequenceDescriptor pooled_desc;
  AttendRecord san_record;
  PoolRecord pool_record;
  bool captured = false;

  const SequenceDescriptor& identity_desc(const ModelParams& m) const {
    return m.uses_san() ? san_desc : pooled_desc;
  }
};

ClipEncoding encode_clip(const Matrix& raw, const ModelParams& m, bool capture = false);

// Forward-only matching probability for an encoded pair (first argument is
// the probe side, which matters for the asymmetric single-path variant).
MatchScore score_pair(const ClipEncoding& probe, const ClipEncoding& gallery,
                      const ModelParams& m);

struct BatchClip {
  Matrix raw;
  std::uint32_t oim_row = 0;  // row in the prototype table (remapped identity)
};

struct PairDef {
  std::size_t probe = 0;
  std::size_t gallery = 0;
  int label = 0;
};

struct BatchResult {
  double total = 0.0;      // mean over pairs of bce + lambda * mean(two oim terms)
  double mean_bce = 0.0;
  double mean_oim = 0.0;
  double accuracy = 0.0;   // fraction of pairs with (probability > 0.5) == label
};

// One shared forward (and optional backward) over a batch of pairs. When
// `grads` is given it receives d(total)/d(params); `identity_descs`, when
// given, receives each clip's identity descriptor for prototype updates.
// `oim` may be null (or lambda_id zero) to drop the identity branch.
BatchResult batch_loss(const std::vector<BatchClip>& clips, const std::vector<PairDef>& pairs,
                       const ModelParams& m, const OimTable* oim, double lambda_id,
                       ModelGrads* grads = nullptr,
                       std::vector<Vector>* identity_descs = nullptr);

// Finite-difference check of the whole pair graph (projections, attention,
// similarity, match head, both losses) on a three-clip, three-pair instance.
// Defaults keep the instance small so every live coordinate's true gradient
// stays well above the fd rounding floor (~3e-11 at h=1e-5 for a loss near 1).
GradReport model_gradcheck(std::uint64_t seed, Variant variant, std::size_t feature_dim = 8,
                           std::size_t width = 8, std::size_t frames = 3,
                           const GradCheckOptions& opt = {1e-5, 1e-4});

}  // namespace scan
