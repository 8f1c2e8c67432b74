#pragma once

#include "scan/attention.hpp"
#include "scan/numkit.hpp"

namespace scan {

struct SimilarityFeature {
  Vector s;
};

// s[d] = (x_self[d] - y_self[d]) * (x_collab[d] - y_collab[d])
SimilarityFeature similarity_feature(const SequenceDescriptor& x_self,
                                     const SequenceDescriptor& y_self,
                                     const SequenceDescriptor& x_collab,
                                     const SequenceDescriptor& y_collab);

struct SimilarityFeatureGrads {
  Vector x_self;
  Vector y_self;
  Vector x_collab;
  Vector y_collab;
};

SimilarityFeatureGrads similarity_feature_backward(const SequenceDescriptor& x_self,
                                                   const SequenceDescriptor& y_self,
                                                   const SequenceDescriptor& x_collab,
                                                   const SequenceDescriptor& y_collab,
                                                   const Vector& grad_s);

struct MatchScore {
  double logit = 0.0;
  double probability = 0.0;
};

// Final verification head: a single linear unit over the similarity
// feature followed by a sigmoid. fc3.weight is width x 1.
MatchScore match_score(const SimilarityFeature& s, const LinearLayer& fc3);

struct MatchScoreGrads {
  Vector s;
  Matrix weight;
  Vector bias;
};

MatchScoreGrads match_score_backward(const SimilarityFeature& s, const LinearLayer& fc3,
                                     double grad_logit);

enum class PoolMode { avg, max };

struct PoolRecord {
  PoolMode mode = PoolMode::avg;
  std::size_t rows = 0;
  std::vector<std::size_t> argmax_rows;
};

// Attention-free baseline descriptor over the frame features.
SequenceDescriptor pool_baseline(const ProjectedClip& clip, PoolMode mode,
                                 PoolRecord* record = nullptr);

Matrix pool_baseline_backward(const PoolRecord& record, const Vector& grad_desc);

// Low-rank factors of the bilinear forms in the generalized similarity
// s~(x, y) = x'Ax - y'Dx + y'By - x'Cy with A = a_half' a_half,
// B = b_half' b_half, C = cx_half' cy_half, D = dy_half' dx_half.
struct GeneralizedLinearParams {
  Matrix a_half;
  Matrix b_half;
  Matrix cx_half;
  Matrix cy_half;
  Matrix dx_half;
  Matrix dy_half;
};

double generalized_similarity(const Vector& x, const Vector& y,
                              const GeneralizedLinearParams& p);

// (x - y)' M (x - y); M need not be PSD, callers wanting a metric must
// pass one.
double mahalanobis(const Vector& x, const Vector& y, const Matrix& m);

}  // namespace scan
