#include "scan/attention.hpp"

#include <stdexcept>

namespace scan {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

Matrix hadamard_logits(const Matrix& frames, const Vector& query) {
  Matrix logits(frames.rows, frames.cols);
  for (std::size_t t = 0; t < frames.rows; ++t)
    for (std::size_t d = 0; d < frames.cols; ++d) logits(t, d) = frames(t, d) * query[d];
  return logits;
}

Vector dot_logits(const Matrix& frames, const Vector& query) {
  Vector logits(frames.rows, 0.0);
  for (std::size_t t = 0; t < frames.rows; ++t) {
    const double* fr = frames.row(t);
    double s = 0.0;
    for (std::size_t d = 0; d < frames.cols; ++d) s += fr[d] * query[d];
    logits[t] = s;
  }
  return logits;
}

}  // namespace

ProjectedClip project_clip(const Matrix& raw, const LinearLayer& fc0, const LinearLayer& fc1,
                           const LinearLayer& fc2) {
  ProjectedClip p;
  p.f_feat = linear_forward(raw, fc0);
  p.s_feat = linear_forward(raw, fc1);
  p.c_feat = linear_forward(raw, fc2);
  return p;
}

AttentionWeights correlate(const Matrix& frames, const Vector& query, CorrelationMode mode) {
  require(frames.cols == query.size(), "correlate: query size " + std::to_string(query.size()) +
                                           " vs frames " + shape_str(frames));
  require(frames.rows > 0, "correlate: empty clip");
  AttentionWeights w;
  if (mode == CorrelationMode::hadamard) {
    w.coeffs = softmax_temporal(hadamard_logits(frames, query));
  } else {
    Vector logits = dot_logits(frames, query);
    Matrix col(frames.rows, 1);
    for (std::size_t t = 0; t < frames.rows; ++t) col(t, 0) = logits[t];
    Matrix sm = softmax_temporal(col);
    w.coeffs = Matrix(frames.rows, frames.cols);
    for (std::size_t t = 0; t < frames.rows; ++t)
      for (std::size_t d = 0; d < frames.cols; ++d) w.coeffs(t, d) = sm(t, 0);
  }
  return w;
}

static AttendResult attend(const Matrix& logit_src, const Matrix& f_feat, const Vector& query,
                           CorrelationMode mode, bool self, AttendRecord* record) {
  require(logit_src.same_shape(f_feat), "attend: projection shapes differ " +
                                            shape_str(logit_src) + " vs " + shape_str(f_feat));
  AttendResult res;
  res.weights = correlate(logit_src, query, mode);
  res.desc.vec = weighted_sum(res.weights.coeffs, f_feat);
  res.desc.role = self ? DescriptorRole::self_attended : DescriptorRole::collab_attended;
  if (record) {
    record->mode = mode;
    record->self = self;
    record->f_feat = f_feat;
    record->logit_src = logit_src;
    record->query = query;
    record->weights = res.weights.coeffs;
  }
  return res;
}

AttendResult self_attend(const ProjectedClip& clip, CorrelationMode mode, AttendRecord* record) {
  Vector query = column_mean(clip.s_feat);
  return attend(clip.s_feat, clip.f_feat, query, mode, true, record);
}

AttendResult collab_attend(const ProjectedClip& clip, const SequenceDescriptor& partner,
                           CorrelationMode mode, AttendRecord* record) {
  require(partner.role == DescriptorRole::self_attended,
          "collab_attend: partner descriptor must be self-attended");
  require(partner.vec.size() == clip.c_feat.cols, "collab_attend: partner descriptor size " +
                                                      std::to_string(partner.vec.size()) +
                                                      " vs c_feat " + shape_str(clip.c_feat));
  return attend(clip.c_feat, clip.f_feat, partner.vec, mode, false, record);
}

AttendGrads attend_backward(const AttendRecord& rec, const Vector& grad_desc) {
  require(grad_desc.size() == rec.f_feat.cols, "attend_backward: grad size mismatch");
  const std::size_t T = rec.f_feat.rows;
  const std::size_t D = rec.f_feat.cols;
  AttendGrads g;
  g.query = Vector(D, 0.0);

  WeightedSumGrads ws = weighted_sum_backward(rec.weights, rec.f_feat, grad_desc);
  g.f_feat = std::move(ws.frames);

  if (rec.mode == CorrelationMode::hadamard) {
    Matrix grad_logits = softmax_temporal_backward(rec.weights, ws.weights);
    g.logit_src = Matrix(T, D);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) {
        g.logit_src(t, d) = grad_logits(t, d) * rec.query[d];
        g.query[d] += grad_logits(t, d) * rec.logit_src(t, d);
      }
  } else {
    // Collapse the broadcast columns back to one logit per frame.
    Matrix w_col(T, 1);
    Matrix gw_col(T, 1);
    for (std::size_t t = 0; t < T; ++t) {
      w_col(t, 0) = rec.weights(t, 0);
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += ws.weights(t, d);
      gw_col(t, 0) = s;
    }
    Matrix grad_logit = softmax_temporal_backward(w_col, gw_col);
    g.logit_src = Matrix(T, D);
    for (std::size_t t = 0; t < T; ++t) {
      double gl = grad_logit(t, 0);
      for (std::size_t d = 0; d < D; ++d) {
        g.logit_src(t, d) = gl * rec.query[d];
        g.query[d] += gl * rec.logit_src(t, d);
      }
    }
  }

  if (rec.self) {
    // query = column_mean(logit_src): fold that path into the source grad.
    Matrix fold = column_mean_backward(T, g.query);
    axpy(1.0, fold, g.logit_src);
    g.query.assign(D, 0.0);
  }
  return g;
}

}  // namespace scan
