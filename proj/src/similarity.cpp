#include "scan/similarity.hpp"

#include <cmath>
#include <stdexcept>

namespace scan {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_same_size(const Vector& a, const Vector& b, const char* where) {
  require(a.size() == b.size(), std::string(where) + ": descriptor sizes " +
                                    std::to_string(a.size()) + " vs " + std::to_string(b.size()));
}

Vector matvec(const Matrix& m, const Vector& v) {
  require(m.cols == v.size(), "matvec: shape mismatch " + shape_str(m) + " vs vector " +
                                  std::to_string(v.size()));
  Vector out(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* mr = m.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) s += mr[c] * v[c];
    out[r] = s;
  }
  return out;
}

}  // namespace

SimilarityFeature similarity_feature(const SequenceDescriptor& x_self,
                                     const SequenceDescriptor& y_self,
                                     const SequenceDescriptor& x_collab,
                                     const SequenceDescriptor& y_collab) {
  require_same_size(x_self.vec, y_self.vec, "similarity_feature");
  require_same_size(x_self.vec, x_collab.vec, "similarity_feature");
  require_same_size(x_self.vec, y_collab.vec, "similarity_feature");
  require(x_self.role == DescriptorRole::self_attended &&
              y_self.role == DescriptorRole::self_attended &&
              x_collab.role == DescriptorRole::collab_attended &&
              y_collab.role == DescriptorRole::collab_attended,
          "similarity_feature: slots need two self-attended then two collab-attended descriptors");
  SimilarityFeature f;
  f.s.resize(x_self.vec.size());
  for (std::size_t d = 0; d < f.s.size(); ++d)
    f.s[d] = (x_self.vec[d] - y_self.vec[d]) * (x_collab.vec[d] - y_collab.vec[d]);
  return f;
}

SimilarityFeatureGrads similarity_feature_backward(const SequenceDescriptor& x_self,
                                                   const SequenceDescriptor& y_self,
                                                   const SequenceDescriptor& x_collab,
                                                   const SequenceDescriptor& y_collab,
                                                   const Vector& grad_s) {
  require(grad_s.size() == x_self.vec.size(), "similarity_feature_backward: grad size mismatch");
  std::size_t n = grad_s.size();
  SimilarityFeatureGrads g;
  g.x_self.resize(n);
  g.y_self.resize(n);
  g.x_collab.resize(n);
  g.y_collab.resize(n);
  for (std::size_t d = 0; d < n; ++d) {
    double self_diff = x_self.vec[d] - y_self.vec[d];
    double collab_diff = x_collab.vec[d] - y_collab.vec[d];
    g.x_self[d] = grad_s[d] * collab_diff;
    g.y_self[d] = -g.x_self[d];
    g.x_collab[d] = grad_s[d] * self_diff;
    g.y_collab[d] = -g.x_collab[d];
  }
  return g;
}

MatchScore match_score(const SimilarityFeature& s, const LinearLayer& fc3) {
  require(fc3.out_dim() == 1, "match_score: head must have one output");
  require(fc3.in_dim() == s.s.size(), "match_score: feature size " + std::to_string(s.s.size()) +
                                          " vs head " + shape_str(fc3.weight));
  double logit = fc3.bias[0];
  for (std::size_t d = 0; d < s.s.size(); ++d) logit += s.s[d] * fc3.weight(d, 0);
  MatchScore m;
  m.logit = logit;
  m.probability = 1.0 / (1.0 + std::exp(-logit));
  return m;
}

MatchScoreGrads match_score_backward(const SimilarityFeature& s, const LinearLayer& fc3,
                                     double grad_logit) {
  require(fc3.out_dim() == 1 && fc3.in_dim() == s.s.size(), "match_score_backward: shape mismatch");
  MatchScoreGrads g;
  g.s.resize(s.s.size());
  g.weight = Matrix(fc3.weight.rows, 1);
  g.bias = Vector(1, grad_logit);
  for (std::size_t d = 0; d < s.s.size(); ++d) {
    g.s[d] = grad_logit * fc3.weight(d, 0);
    g.weight(d, 0) = grad_logit * s.s[d];
  }
  return g;
}

SequenceDescriptor pool_baseline(const ProjectedClip& clip, PoolMode mode, PoolRecord* record) {
  require(clip.f_feat.rows > 0, "pool_baseline: empty clip");
  SequenceDescriptor d;
  // Stands in for an attended descriptor in the pooling baselines, so it
  // carries the role downstream consumers expect.
  d.role = DescriptorRole::self_attended;
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::avg) {
    d.vec = column_mean(clip.f_feat);
  } else {
    d.vec = column_max(clip.f_feat, &argmax);
  }
  if (record) {
    record->mode = mode;
    record->rows = clip.f_feat.rows;
    record->argmax_rows = std::move(argmax);
  }
  return d;
}

Matrix pool_baseline_backward(const PoolRecord& record, const Vector& grad_desc) {
  if (record.mode == PoolMode::avg) return column_mean_backward(record.rows, grad_desc);
  require(record.argmax_rows.size() == grad_desc.size(),
          "pool_baseline_backward: argmax record size mismatch");
  Matrix g(record.rows, grad_desc.size());
  for (std::size_t d = 0; d < grad_desc.size(); ++d) g(record.argmax_rows[d], d) = grad_desc[d];
  return g;
}

double generalized_similarity(const Vector& x, const Vector& y,
                              const GeneralizedLinearParams& p) {
  Vector ax = matvec(p.a_half, x);
  Vector by = matvec(p.b_half, y);
  Vector cx = matvec(p.cx_half, x);
  Vector cy = matvec(p.cy_half, y);
  Vector dx = matvec(p.dx_half, x);
  Vector dy = matvec(p.dy_half, y);
  return dot(ax, ax) - dot(dy, dx) + dot(by, by) - dot(cx, cy);
}

double mahalanobis(const Vector& x, const Vector& y, const Matrix& m) {
  require(x.size() == y.size(), "mahalanobis: size mismatch");
  require(m.rows == x.size() && m.cols == x.size(), "mahalanobis: matrix shape " + shape_str(m));
  Vector d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - y[i];
  return dot(d, matvec(m, d));
}

}  // namespace scan
