#include "scan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "scan/log.hpp"

namespace scan {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::vector<ClipEncoding> encode_sequence(const SequenceRecord& seq, const ModelParams& m,
                                          const EvalConfig& cfg) {
  std::vector<ClipEncoding> out;
  Dataset one = {seq};
  for (const auto& ci : segment(seq.features.rows, cfg.clip_len, cfg.stride))
    out.push_back(encode_clip(clip_matrix(one, ci), m));
  return out;
}

double score_encoded(const std::vector<ClipEncoding>& probe,
                     const std::vector<ClipEncoding>& gallery, const ModelParams& m,
                     const EvalConfig& cfg) {
  std::vector<double> scores;
  scores.reserve(probe.size() * gallery.size());
  for (const auto& p : probe)
    for (const auto& g : gallery) scores.push_back(score_pair(p, g, m).probability);
  return ensemble_score(scores, cfg.ensemble_rate);
}

// Gallery ranks of one probe row under descending score, ties broken by
// gallery index ascending.
std::vector<std::size_t> ranked_galleries(const ScoreMatrix& sm, std::size_t p) {
  std::vector<std::size_t> order(sm.galleries);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sm.at(p, a) != sm.at(p, b)) return sm.at(p, a) > sm.at(p, b);
    return a < b;
  });
  return order;
}

}  // namespace

double ensemble_score(const std::vector<double>& clip_scores, double rate) {
  require(!clip_scores.empty(), "ensemble_score: empty score list");
  require(rate > 0.0 && rate <= 1.0, "ensemble_score: rate must lie in (0,1]");
  std::size_t k = static_cast<std::size_t>(
      std::ceil(rate * static_cast<double>(clip_scores.size())));
  k = std::max<std::size_t>(1, std::min(k, clip_scores.size()));
  std::vector<double> sorted = clip_scores;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += sorted[i];
  return sum / static_cast<double>(k);
}

double sequence_score(const SequenceRecord& probe, const SequenceRecord& gallery,
                      const ModelParams& m, const EvalConfig& cfg) {
  require(probe.features.rows >= 1 && gallery.features.rows >= 1,
          "sequence_score: empty sequence");
  auto pe = encode_sequence(probe, m, cfg);
  auto ge = encode_sequence(gallery, m, cfg);
  return score_encoded(pe, ge, m, cfg);
}

ScoreMatrix score_sequences(const std::vector<SequenceRecord>& probes,
                            const std::vector<SequenceRecord>& galleries, const ModelParams& m,
                            const EvalConfig& cfg) {
  require(!probes.empty() && !galleries.empty(), "score_sequences: empty probe or gallery list");
  ScoreMatrix sm;
  sm.probes = probes.size();
  sm.galleries = galleries.size();
  sm.scores.assign(sm.probes * sm.galleries, 0.0);
  for (const auto& p : probes) sm.probe_ids.push_back(p.identity);
  for (const auto& g : galleries) sm.gallery_ids.push_back(g.identity);

  std::vector<std::vector<ClipEncoding>> genc;
  genc.reserve(galleries.size());
  for (const auto& g : galleries) genc.push_back(encode_sequence(g, m, cfg));

  for (std::size_t p = 0; p < probes.size(); ++p) {
    auto penc = encode_sequence(probes[p], m, cfg);
    for (std::size_t g = 0; g < galleries.size(); ++g)
      sm.at(p, g) = score_encoded(penc, genc[g], m, cfg);
  }
  return sm;
}

std::vector<double> cmc(const ScoreMatrix& sm, std::size_t max_rank) {
  require(max_rank >= 1, "cmc: max_rank must be positive");
  require(sm.probes >= 1 && sm.galleries >= 1, "cmc: empty score matrix");
  std::vector<double> curve(max_rank, 0.0);
  std::size_t counted = 0;
  for (std::size_t p = 0; p < sm.probes; ++p) {
    auto order = ranked_galleries(sm, p);
    std::size_t best_rank = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (sm.gallery_ids[order[r]] == sm.probe_ids[p]) {
        best_rank = r + 1;
        break;
      }
    }
    if (best_rank == 0) {
      log_info("cmc: probe " + std::to_string(p) + " has no same-identity gallery, excluded");
      continue;
    }
    ++counted;
    for (std::size_t r = best_rank - 1; r < max_rank; ++r) curve[r] += 1.0;
  }
  require(counted > 0, "cmc: no probe has a same-identity gallery entry");
  for (auto& v : curve) v /= static_cast<double>(counted);
  return curve;
}

double average_precision(const std::vector<int>& relevance) {
  double total_relevant = 0.0;
  for (int r : relevance) {
    require(r == 0 || r == 1, "average_precision: relevance entries must be 0 or 1");
    total_relevant += r;
  }
  require(total_relevant > 0.0, "average_precision: no relevant item");
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    if (relevance[i] == 1) {
      hits += 1.0;
      sum += hits / static_cast<double>(i + 1);
    }
  }
  return sum / total_relevant;
}

double mean_average_precision(const ScoreMatrix& sm) {
  require(sm.probes >= 1 && sm.galleries >= 1, "mean_average_precision: empty score matrix");
  double sum = 0.0;
  for (std::size_t p = 0; p < sm.probes; ++p) {
    auto order = ranked_galleries(sm, p);
    std::vector<int> relevance(order.size());
    for (std::size_t r = 0; r < order.size(); ++r)
      relevance[r] = sm.gallery_ids[order[r]] == sm.probe_ids[p] ? 1 : 0;
    sum += average_precision(relevance);
  }
  return sum / static_cast<double>(sm.probes);
}

MetricsReport compute_metrics(const ScoreMatrix& sm, const EvalConfig& cfg) {
  MetricsReport rep;
  rep.cmc_curve = cmc(sm, cfg.max_rank);
  auto rank = [&](std::size_t r) {
    return rep.cmc_curve[std::min(r, rep.cmc_curve.size()) - 1];
  };
  rep.top1 = rank(1);
  rep.top5 = rank(5);
  rep.top10 = rank(10);
  rep.top20 = rank(20);
  rep.map = mean_average_precision(sm);
  rep.ensemble_rate = cfg.ensemble_rate;
  return rep;
}

EvalSplit eval_split(const Dataset& ds, const std::vector<std::uint32_t>& identities) {
  require(!ds.empty(), "eval_split: empty dataset");
  auto keep = [&](std::uint32_t id) {
    return identities.empty() ||
           std::find(identities.begin(), identities.end(), id) != identities.end();
  };
  std::set<std::uint32_t> cameras;
  for (const auto& r : ds)
    if (keep(r.identity)) cameras.insert(r.camera);
  require(cameras.size() >= 2,
          "eval_split: need at least two cameras to form probe and gallery sets");
  std::uint32_t gallery_camera = *cameras.rbegin();

  EvalSplit split;
  std::map<std::uint32_t, bool> has_gallery;
  for (const auto& r : ds) {
    if (!keep(r.identity) || r.camera != gallery_camera) continue;
    if (has_gallery[r.identity]) continue;  // first sequence per identity
    has_gallery[r.identity] = true;
    split.galleries.push_back(r);
  }
  for (const auto& r : ds) {
    if (!keep(r.identity) || r.camera == gallery_camera) continue;
    if (!has_gallery[r.identity]) {
      log_info("eval_split: identity " + std::to_string(r.identity) +
               " has no gallery-camera sequence, skipping its probes");
      continue;
    }
    split.probes.push_back(r);
  }
  require(!split.probes.empty() && !split.galleries.empty(),
          "eval_split: empty probe or gallery set");
  return split;
}

MetricsReport evaluate(const Dataset& ds, const std::vector<std::uint32_t>& identities,
                       const ModelParams& m, const EvalConfig& cfg) {
  EvalSplit split = eval_split(ds, identities);
  ScoreMatrix sm = score_sequences(split.probes, split.galleries, m, cfg);
  return compute_metrics(sm, cfg);
}

std::string metrics_json(const MetricsReport& report, const std::string& config_json) {
  nlohmann::json config = nlohmann::json::object();
  if (!config_json.empty()) config = nlohmann::json::parse(config_json);
  nlohmann::json j = {{"top1", report.top1},
                      {"top5", report.top5},
                      {"top10", report.top10},
                      {"top20", report.top20},
                      {"mAP", report.map},
                      {"cmc_curve", report.cmc_curve},
                      {"ensemble_rate", report.ensemble_rate},
                      {"config", config}};
  return j.dump(2) + "\n";
}

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& report,
                        const std::string& config_json) {
  atomic_write_bytes(path, metrics_json(report, config_json));
}

void write_cmc_csv(const std::filesystem::path& path, const std::vector<double>& curve) {
  std::ostringstream os;
  os << "rank,accuracy\n";
  os.precision(17);
  for (std::size_t r = 0; r < curve.size(); ++r) os << (r + 1) << "," << curve[r] << "\n";
  atomic_write_bytes(path, os.str());
}

}  // namespace scan
