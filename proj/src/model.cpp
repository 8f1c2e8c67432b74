#include "scan/model.hpp"

#include <cmath>
#include <stdexcept>

namespace scan {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

LinearLayer init_layer(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
  LinearLayer l;
  l.weight = Matrix(in_dim, out_dim);
  double bound = std::sqrt(1.0 / static_cast<double>(in_dim));
  for (auto& w : l.weight.data) w = rng.uniform(-bound, bound);
  l.bias = Vector(out_dim, 0.0);
  return l;
}

bool layer_finite(const Matrix& w, const Vector& b) {
  for (double v : w.data)
    if (!std::isfinite(v)) return false;
  for (double v : b)
    if (!std::isfinite(v)) return false;
  return true;
}

void accumulate(LayerGrads& dst, const LinearGrads& src) {
  axpy(1.0, src.weight, dst.weight);
  axpy(1.0, src.bias, dst.bias);
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::avg_pool: return "avg-pool";
    case Variant::max_pool: return "max-pool";
    case Variant::san_only: return "san-only";
    case Variant::can_only: return "can-only";
    case Variant::single_path: return "single-path";
    case Variant::shared_fc: return "shared-fc";
    case Variant::dot_product: return "dot-product";
    case Variant::full: return "full";
  }
  throw std::invalid_argument("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
  for (Variant v : all_variants())
    if (variant_name(v) == name) return v;
  throw std::invalid_argument("unknown variant '" + name +
                              "' (expected avg-pool, max-pool, san-only, can-only, single-path, "
                              "shared-fc, dot-product or full)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {
      Variant::avg_pool,   Variant::max_pool,  Variant::san_only,    Variant::can_only,
      Variant::single_path, Variant::shared_fc, Variant::dot_product, Variant::full};
  return v;
}

ModelParams init_model(std::size_t feature_dim, std::size_t width, Variant variant, Rng& rng) {
  require(feature_dim > 0 && width > 0, "init_model: dimensions must be positive");
  ModelParams m;
  m.feature_dim = feature_dim;
  m.width = width;
  m.variant = variant;
  m.fc0 = init_layer(feature_dim, width, rng);
  m.fc1 = init_layer(feature_dim, width, rng);
  if (!m.shares_fc()) m.fc2 = init_layer(feature_dim, width, rng);
  m.fc3 = init_layer(width, 1, rng);
  return m;
}

std::size_t parameter_count(const ModelParams& m) {
  auto count = [](const LinearLayer& l) { return l.weight.data.size() + l.bias.size(); };
  return count(m.fc0) + count(m.fc1) + count(m.fc2) + count(m.fc3);
}

ModelGrads ModelGrads::zeros_like(const ModelParams& m) {
  ModelGrads g;
  auto zero = [](const LinearLayer& l) {
    return LayerGrads{Matrix(l.weight.rows, l.weight.cols), Vector(l.bias.size(), 0.0)};
  };
  g.fc0 = zero(m.fc0);
  g.fc1 = zero(m.fc1);
  g.fc2 = zero(m.fc2);
  g.fc3 = zero(m.fc3);
  return g;
}

void ModelGrads::scale(double a) {
  for (LayerGrads* l : {&fc0, &fc1, &fc2, &fc3}) {
    for (auto& v : l->weight.data) v *= a;
    for (auto& v : l->bias) v *= a;
  }
}

bool ModelGrads::finite() const {
  return layer_finite(fc0.weight, fc0.bias) && layer_finite(fc1.weight, fc1.bias) &&
         layer_finite(fc2.weight, fc2.bias) && layer_finite(fc3.weight, fc3.bias);
}

ClipEncoding encode_clip(const Matrix& raw, const ModelParams& m, bool capture) {
  require(raw.rows > 0, "encode_clip: empty clip");
  require(raw.cols == m.feature_dim, "encode_clip: feature dim " + std::to_string(raw.cols) +
                                         " vs model " + std::to_string(m.feature_dim));
  ClipEncoding e;
  e.raw = raw;
  e.captured = capture;
  e.proj.f_feat = linear_forward(raw, m.fc0);
  if (m.uses_san()) {
    e.proj.s_feat = linear_forward(raw, m.fc1);
    auto res = self_attend(e.proj, m.correlation(), capture ? &e.san_record : nullptr);
    e.san_desc = std::move(res.desc);
  }
  if (m.uses_can())
    e.proj.c_feat = m.shares_fc() ? e.proj.s_feat : linear_forward(raw, m.fc2);
  if (m.uses_pooling())
    e.pooled_desc = pool_baseline(e.proj, m.pool_mode(), capture ? &e.pool_record : nullptr);
  return e;
}

namespace {

SequenceDescriptor as_role(const SequenceDescriptor& d, DescriptorRole role) {
  SequenceDescriptor out = d;
  out.role = role;
  return out;
}

// The four Eq. 3 slots for one pair, with the attention records needed to
// differentiate the pair-specific collaborative descriptors.
struct PairForward {
  SequenceDescriptor x_self, y_self, x_collab, y_collab;
  bool has_can_x = false, has_can_y = false;
  AttendRecord can_x, can_y;
  SimilarityFeature s;
  MatchScore score;
};

PairForward pair_forward(const ClipEncoding& x, const ClipEncoding& y, const ModelParams& m,
                         bool capture) {
  PairForward p;
  const CorrelationMode mode = m.correlation();
  switch (m.variant) {
    case Variant::avg_pool:
    case Variant::max_pool:
      p.x_self = x.pooled_desc;
      p.y_self = y.pooled_desc;
      p.x_collab = as_role(x.pooled_desc, DescriptorRole::collab_attended);
      p.y_collab = as_role(y.pooled_desc, DescriptorRole::collab_attended);
      break;
    case Variant::san_only:
      p.x_self = x.san_desc;
      p.y_self = y.san_desc;
      p.x_collab = as_role(x.san_desc, DescriptorRole::collab_attended);
      p.y_collab = as_role(y.san_desc, DescriptorRole::collab_attended);
      break;
    case Variant::can_only: {
      auto cx = collab_attend(x.proj, y.pooled_desc, mode, capture ? &p.can_x : nullptr);
      auto cy = collab_attend(y.proj, x.pooled_desc, mode, capture ? &p.can_y : nullptr);
      p.has_can_x = p.has_can_y = capture;
      p.x_self = as_role(cx.desc, DescriptorRole::self_attended);
      p.y_self = as_role(cy.desc, DescriptorRole::self_attended);
      p.x_collab = cx.desc;
      p.y_collab = cy.desc;
      break;
    }
    case Variant::single_path: {
      auto cy = collab_attend(y.proj, x.san_desc, mode, capture ? &p.can_y : nullptr);
      p.has_can_y = capture;
      p.x_self = x.san_desc;
      p.y_self = y.pooled_desc;
      p.x_collab = as_role(x.pooled_desc, DescriptorRole::collab_attended);
      p.y_collab = cy.desc;
      break;
    }
    case Variant::shared_fc:
    case Variant::dot_product:
    case Variant::full: {
      auto cx = collab_attend(x.proj, y.san_desc, mode, capture ? &p.can_x : nullptr);
      auto cy = collab_attend(y.proj, x.san_desc, mode, capture ? &p.can_y : nullptr);
      p.has_can_x = p.has_can_y = capture;
      p.x_self = x.san_desc;
      p.y_self = y.san_desc;
      p.x_collab = cx.desc;
      p.y_collab = cy.desc;
      break;
    }
  }
  p.s = similarity_feature(p.x_self, p.y_self, p.x_collab, p.y_collab);
  p.score = match_score(p.s, m.fc3);
  return p;
}

}  // namespace

MatchScore score_pair(const ClipEncoding& probe, const ClipEncoding& gallery,
                      const ModelParams& m) {
  return pair_forward(probe, gallery, m, false).score;
}

BatchResult batch_loss(const std::vector<BatchClip>& clips, const std::vector<PairDef>& pairs,
                       const ModelParams& m, const OimTable* oim, double lambda_id,
                       ModelGrads* grads, std::vector<Vector>* identity_descs) {
  require(!clips.empty() && !pairs.empty(), "batch_loss: empty batch");
  for (const auto& p : pairs)
    require(p.probe < clips.size() && p.gallery < clips.size(), "batch_loss: pair index out of range");

  const bool capture = grads != nullptr;
  const bool with_oim = oim != nullptr && lambda_id != 0.0;
  const std::size_t n = clips.size();
  const double inv_pairs = 1.0 / static_cast<double>(pairs.size());

  std::vector<ClipEncoding> enc;
  enc.reserve(n);
  for (const auto& c : clips) enc.push_back(encode_clip(c.raw, m, capture));

  if (identity_descs) {
    identity_descs->clear();
    for (const auto& e : enc) identity_descs->push_back(e.identity_desc(m).vec);
  }

  // Per-clip identity-loss terms, shared by every pair touching the clip.
  std::vector<OimLoss> oim_terms(with_oim ? n : 0);
  if (with_oim)
    for (std::size_t i = 0; i < n; ++i)
      oim_terms[i] = oim_forward(enc[i].identity_desc(m).vec, clips[i].oim_row, *oim);

  // Pending descriptor gradients, folded back per clip after the pair loop.
  std::vector<Vector> g_san(n), g_pool(n);
  if (capture)
    for (std::size_t i = 0; i < n; ++i) {
      if (m.uses_san()) g_san[i] = Vector(m.width, 0.0);
      if (m.uses_pooling()) g_pool[i] = Vector(m.width, 0.0);
    }
  std::vector<Matrix> g_f(n), g_c(n);

  BatchResult out;
  double total = 0.0, bce_sum = 0.0, oim_sum = 0.0;
  std::size_t correct = 0;

  for (const auto& pd : pairs) {
    const std::size_t a = pd.probe, b = pd.gallery;
    PairForward pf = pair_forward(enc[a], enc[b], m, capture);
    BceLoss bce = bce_with_logit(pf.score.logit, pd.label);
    double pair_loss = bce.value;
    if (with_oim) pair_loss += lambda_id * 0.5 * (oim_terms[a].value + oim_terms[b].value);
    total += pair_loss;
    bce_sum += bce.value;
    if (with_oim) oim_sum += 0.5 * (oim_terms[a].value + oim_terms[b].value);
    if ((pf.score.probability > 0.5) == (pd.label == 1)) ++correct;

    if (!capture) continue;

    double glogit = bce.grad_logit * inv_pairs;
    MatchScoreGrads mg = match_score_backward(pf.s, m.fc3, glogit);
    axpy(1.0, mg.weight, grads->fc3.weight);
    axpy(1.0, mg.bias, grads->fc3.bias);
    SimilarityFeatureGrads sg =
        similarity_feature_backward(pf.x_self, pf.y_self, pf.x_collab, pf.y_collab, mg.s);

    Vector g_can_x, g_can_y;
    switch (m.variant) {
      case Variant::avg_pool:
      case Variant::max_pool:
        axpy(1.0, sg.x_self, g_pool[a]);
        axpy(1.0, sg.x_collab, g_pool[a]);
        axpy(1.0, sg.y_self, g_pool[b]);
        axpy(1.0, sg.y_collab, g_pool[b]);
        break;
      case Variant::san_only:
        axpy(1.0, sg.x_self, g_san[a]);
        axpy(1.0, sg.x_collab, g_san[a]);
        axpy(1.0, sg.y_self, g_san[b]);
        axpy(1.0, sg.y_collab, g_san[b]);
        break;
      case Variant::can_only:
        g_can_x = sg.x_self;
        axpy(1.0, sg.x_collab, g_can_x);
        g_can_y = sg.y_self;
        axpy(1.0, sg.y_collab, g_can_y);
        break;
      case Variant::single_path:
        axpy(1.0, sg.x_self, g_san[a]);
        axpy(1.0, sg.y_self, g_pool[b]);
        axpy(1.0, sg.x_collab, g_pool[a]);
        g_can_y = sg.y_collab;
        break;
      case Variant::shared_fc:
      case Variant::dot_product:
      case Variant::full:
        axpy(1.0, sg.x_self, g_san[a]);
        axpy(1.0, sg.y_self, g_san[b]);
        g_can_x = sg.x_collab;
        g_can_y = sg.y_collab;
        break;
    }

    auto apply_can = [&](std::size_t clip_idx, std::size_t partner_idx, const AttendRecord& rec,
                         const Vector& g_desc) {
      AttendGrads ag = attend_backward(rec, g_desc);
      if (g_f[clip_idx].rows == 0) g_f[clip_idx] = Matrix(ag.f_feat.rows, ag.f_feat.cols);
      axpy(1.0, ag.f_feat, g_f[clip_idx]);
      if (g_c[clip_idx].rows == 0) g_c[clip_idx] = Matrix(ag.logit_src.rows, ag.logit_src.cols);
      axpy(1.0, ag.logit_src, g_c[clip_idx]);
      // The query is the partner's descriptor: SAN output for the
      // full-style variants, the pooled stand-in for can-only. In the
      // single-path variant the gallery's query is the probe's SAN output.
      if (m.variant == Variant::can_only)
        axpy(1.0, ag.query, g_pool[partner_idx]);
      else
        axpy(1.0, ag.query, g_san[partner_idx]);
    };
    if (pf.has_can_x && !g_can_x.empty()) apply_can(a, b, pf.can_x, g_can_x);
    if (pf.has_can_y && !g_can_y.empty()) apply_can(b, a, pf.can_y, g_can_y);
  }

  out.total = total * inv_pairs;
  out.mean_bce = bce_sum * inv_pairs;
  out.mean_oim = oim_sum * inv_pairs;
  out.accuracy = static_cast<double>(correct) * inv_pairs;
  if (!capture) return out;

  if (with_oim) {
    // Each clip's identity term appears in every pair touching the clip,
    // weighted lambda/2 inside the pair and 1/P across pairs.
    std::vector<std::size_t> mult(n, 0);
    for (const auto& pd : pairs) {
      ++mult[pd.probe];
      ++mult[pd.gallery];
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (mult[i] == 0) continue;
      double w = lambda_id * 0.5 * static_cast<double>(mult[i]) * inv_pairs;
      Vector& dst = m.uses_san() ? g_san[i] : g_pool[i];
      axpy(w, oim_terms[i].grad_feature, dst);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (m.uses_san() && !g_san[i].empty()) {
      AttendGrads ag = attend_backward(enc[i].san_record, g_san[i]);
      if (g_f[i].rows == 0) g_f[i] = Matrix(ag.f_feat.rows, ag.f_feat.cols);
      axpy(1.0, ag.f_feat, g_f[i]);
      LinearGrads lg = linear_backward(enc[i].raw, m.fc1, ag.logit_src);
      accumulate(grads->fc1, lg);
    }
    if (m.uses_pooling() && !g_pool[i].empty()) {
      Matrix gp = pool_baseline_backward(enc[i].pool_record, g_pool[i]);
      if (g_f[i].rows == 0) g_f[i] = Matrix(gp.rows, gp.cols);
      axpy(1.0, gp, g_f[i]);
    }
    if (g_f[i].rows > 0) {
      LinearGrads lg = linear_backward(enc[i].raw, m.fc0, g_f[i]);
      accumulate(grads->fc0, lg);
    }
    if (g_c[i].rows > 0) {
      LinearGrads lg = linear_backward(enc[i].raw, m.can_layer(), g_c[i]);
      accumulate(m.shares_fc() ? grads->fc1 : grads->fc2, lg);
    }
  }
  return out;
}

GradReport model_gradcheck(std::uint64_t seed, Variant variant, std::size_t feature_dim,
                           std::size_t width, std::size_t frames, const GradCheckOptions& opt) {
  Rng rng(seed);
  ModelParams m = init_model(feature_dim, width, variant, rng);

  auto random_clip = [&](std::size_t t, std::uint32_t row) {
    BatchClip c;
    c.raw = Matrix(t, feature_dim);
    for (auto& v : c.raw.data) v = rng.normal();
    c.oim_row = row;
    return c;
  };
  std::vector<BatchClip> clips = {random_clip(frames, 0), random_clip(frames + 1, 1),
                                  random_clip(frames + 2, 2)};
  std::vector<PairDef> pairs = {{0, 1, static_cast<int>(rng.uniform_index(2))},
                                {0, 2, static_cast<int>(rng.uniform_index(2))},
                                {1, 2, static_cast<int>(rng.uniform_index(2))}};

  OimTable oim = make_oim_table(3, width);
  for (std::size_t i = 0; i < oim.num_identities(); ++i) {
    Vector row(width);
    for (auto& v : row) v = rng.normal();
    double nrm = l2_norm(row);
    for (std::size_t d = 0; d < width; ++d) oim.prototypes(i, d) = row[d] / nrm;
  }
  const double lambda_id = 0.7;

  ModelGrads grads = ModelGrads::zeros_like(m);
  batch_loss(clips, pairs, m, &oim, lambda_id, &grads);

  std::vector<ParamBinding> bindings;
  auto bind = [&](const char* name, LinearLayer& l, LayerGrads& g, bool with_bias) {
    bindings.push_back({std::string(name) + ".weight", l.weight.data.data(),
                        l.weight.data.size(), g.weight.data.data()});
    if (with_bias)
      bindings.push_back({std::string(name) + ".bias", l.bias.data(), l.bias.size(),
                          g.bias.data()});
  };
  // Bind only parameters the variant actually reads. The collaborative
  // projection's bias is excluded even when the layer is live: it shifts every
  // frame's logit in a column by the same amount, and the temporal softmax is
  // invariant to per-column shifts, so its true gradient is identically zero
  // and a finite difference there measures only rounding dust.
  bind("fc0", m.fc0, grads.fc0, true);
  if (m.uses_san()) bind("fc1", m.fc1, grads.fc1, true);
  if (m.uses_can() && !m.shares_fc()) bind("fc2", m.fc2, grads.fc2, false);
  bind("fc3", m.fc3, grads.fc3, true);

  auto loss = [&]() { return batch_loss(clips, pairs, m, &oim, lambda_id).total; };
  GradReport report = check_gradients("pair-graph/" + variant_name(variant), bindings, loss, opt);
  return report;
}

}  // namespace scan
