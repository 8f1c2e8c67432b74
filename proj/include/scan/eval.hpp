#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scan/data.hpp"
#include "scan/model.hpp"

namespace scan {

struct EvalConfig {
  double ensemble_rate = 0.10;
  std::size_t clip_len = 10;
  std::size_t stride = 5;
  std::size_t max_rank = 20;
};

// Mean of the k = max(1, ceil(rate * n)) largest scores.
double ensemble_score(const std::vector<double>& clip_scores, double rate);

struct ScoreMatrix {
  std::size_t probes = 0;
  std::size_t galleries = 0;
  std::vector<double> scores;  // row-major probes x galleries
  std::vector<std::uint32_t> probe_ids;
  std::vector<std::uint32_t> gallery_ids;

  double& at(std::size_t p, std::size_t g) { return scores[p * galleries + g]; }
  double at(std::size_t p, std::size_t g) const { return scores[p * galleries + g]; }
};

// Segment both sequences, score every clip cross-pair, ensemble.
double sequence_score(const SequenceRecord& probe, const SequenceRecord& gallery,
                      const ModelParams& m, const EvalConfig& cfg);

// Same scoring over full probe/gallery lists with clip encodings computed
// once per sequence.
ScoreMatrix score_sequences(const std::vector<SequenceRecord>& probes,
                            const std::vector<SequenceRecord>& galleries, const ModelParams& m,
                            const EvalConfig& cfg);

// curve[r] = fraction of probes whose best same-identity gallery sits at
// rank <= r+1. Ties break by gallery index; probes without any
// same-identity gallery are excluded with a warning.
std::vector<double> cmc(const ScoreMatrix& sm, std::size_t max_rank);

// (1/R) * sum over relevant positions i (1-based) of (relevant in top i)/i.
double average_precision(const std::vector<int>& relevance);

double mean_average_precision(const ScoreMatrix& sm);

struct MetricsReport {
  double top1 = 0.0, top5 = 0.0, top10 = 0.0, top20 = 0.0;
  double map = 0.0;
  std::vector<double> cmc_curve;
  double ensemble_rate = 0.0;
};

MetricsReport compute_metrics(const ScoreMatrix& sm, const EvalConfig& cfg);

// Gallery: each identity's first sequence under the highest camera id;
// probes: all of that identity's sequences under other cameras. `identities`
// (when non-empty) restricts the split to those ids.
struct EvalSplit {
  std::vector<SequenceRecord> probes;
  std::vector<SequenceRecord> galleries;
};

EvalSplit eval_split(const Dataset& ds, const std::vector<std::uint32_t>& identities = {});

MetricsReport evaluate(const Dataset& ds, const std::vector<std::uint32_t>& identities,
                       const ModelParams& m, const EvalConfig& cfg);

// {top1, top5, top10, top20, mAP, cmc_curve, ensemble_rate, config}; the
// config echo is the caller's JSON object text.
void write_metrics_json(const std::filesystem::path& path, const MetricsReport& report,
                        const std::string& config_json);
std::string metrics_json(const MetricsReport& report, const std::string& config_json);

// rank,accuracy rows
void write_cmc_csv(const std::filesystem::path& path, const std::vector<double>& curve);

}  // namespace scan
