#pragma once

#include <cstdint>

#include "scan/numkit.hpp"

namespace scan {

enum class CorrelationMode { hadamard, dot };

enum class DescriptorRole { pooled_self, self_attended, collab_attended };

struct ClipFeatures {
  Matrix raw;  // T x feature_dim
  std::uint32_t identity = 0;
  std::uint32_t camera = 0;
};

// Per-clip projections: f carries the content that gets aggregated, s
// drives self attention, c drives collaborative attention. All T x width.
struct ProjectedClip {
  Matrix f_feat;
  Matrix s_feat;
  Matrix c_feat;
};

ProjectedClip project_clip(const Matrix& raw, const LinearLayer& fc0, const LinearLayer& fc1,
                           const LinearLayer& fc2);

struct AttentionWeights {
  Matrix coeffs;  // T x width, each column sums to 1
};

struct SequenceDescriptor {
  Vector vec;
  DescriptorRole role = DescriptorRole::pooled_self;
};

// Parameter-free frame/query correlation followed by a temporal softmax.
// hadamard: logits[t, d] = frames[t, d] * query[d], softmax per column.
// dot: one logit per frame, sum_d frames[t, d] * query[d], softmaxed over
// time and broadcast across columns.
AttentionWeights correlate(const Matrix& frames, const Vector& query, CorrelationMode mode);

// Everything the backward pass needs from one attention application.
struct AttendRecord {
  CorrelationMode mode = CorrelationMode::hadamard;
  bool self = false;
  Matrix f_feat;
  Matrix logit_src;
  Vector query;
  Matrix weights;
};

struct AttendResult {
  SequenceDescriptor desc;
  AttentionWeights weights;
};

// Self attention: the query is the temporal mean of s_feat, weights come
// from correlating s_feat with it, the descriptor aggregates f_feat.
AttendResult self_attend(const ProjectedClip& clip, CorrelationMode mode,
                         AttendRecord* record = nullptr);

// Collaborative attention: the query is the partner clip's self-attended
// descriptor and the weights come from correlating c_feat with it.
AttendResult collab_attend(const ProjectedClip& clip, const SequenceDescriptor& partner,
                           CorrelationMode mode, AttendRecord* record = nullptr);

struct AttendGrads {
  Matrix f_feat;
  Matrix logit_src;  // for self records this already folds in the query path
  Vector query;      // collab records only: gradient w.r.t. the partner descriptor
};

AttendGrads attend_backward(const AttendRecord& record, const Vector& grad_desc);

}  // namespace scan
