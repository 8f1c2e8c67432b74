#include "scan/train.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "scan/log.hpp"

namespace scan {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <class T>
void append_raw(std::string& buf, T v) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.append(tmp, sizeof(T));
}

template <class T>
T read_raw(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size())
    throw CheckpointError(CheckpointError::Kind::truncated,
                          "checkpoint truncated at byte " + std::to_string(pos));
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

void step_tensor(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& velocity, double lr, double momentum, double wd,
                 const char* name) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (!std::isfinite(grad[i]))
      throw std::runtime_error(std::string("sgd_step: non-finite gradient in ") + name +
                               " at index " + std::to_string(i));
    double g = grad[i] + wd * param[i];
    velocity[i] = momentum * velocity[i] + g;
    param[i] -= lr * velocity[i];
  }
}

}  // namespace

void validate(const TrainConfig& cfg) {
  require(cfg.lr0 > 0.0, "config: lr0 must be positive");
  require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "config: momentum must lie in [0,1)");
  require(cfg.weight_decay >= 0.0, "config: weight_decay must be non-negative");
  require(cfg.lambda_id >= 0.0, "config: lambda_id must be non-negative");
  require(cfg.width >= 1, "config: width must be positive");
  require(cfg.clip_len >= 1 && cfg.stride >= 1, "config: clip_len and stride must be positive");
  require(cfg.ids_per_batch >= 1 && cfg.clips_per_id >= 1, "config: batch shape must be positive");
  require(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0,
          "config: train_fraction must lie in (0,1]");
  require(cfg.oim_momentum >= 0.0 && cfg.oim_momentum < 1.0,
          "config: oim_momentum must lie in [0,1)");
  require(cfg.oim_temperature > 0.0, "config: oim_temperature must be positive");
}

std::string train_config_json(const TrainConfig& cfg) {
  nlohmann::json j = {{"lr0", cfg.lr0},
                      {"momentum", cfg.momentum},
                      {"weight_decay", cfg.weight_decay},
                      {"epochs", cfg.epochs},
                      {"lambda_id", cfg.lambda_id},
                      {"batches_per_epoch", cfg.batches_per_epoch},
                      {"seed", cfg.seed},
                      {"variant", variant_name(cfg.variant)},
                      {"width", cfg.width},
                      {"clip_len", cfg.clip_len},
                      {"stride", cfg.stride},
                      {"ids_per_batch", cfg.ids_per_batch},
                      {"clips_per_id", cfg.clips_per_id},
                      {"train_fraction", cfg.train_fraction},
                      {"oim_momentum", cfg.oim_momentum},
                      {"oim_temperature", cfg.oim_temperature}};
  return j.dump();
}

TrainConfig train_config_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  TrainConfig cfg;
  std::set<std::string> known;
  auto get = [&](const char* key, auto& dst) {
    known.insert(key);
    if (!j.contains(key)) return;
    try {
      dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config key '" + std::string(key) + "': " + e.what());
    }
  };
  get("lr0", cfg.lr0);
  get("momentum", cfg.momentum);
  get("weight_decay", cfg.weight_decay);
  get("epochs", cfg.epochs);
  get("lambda_id", cfg.lambda_id);
  get("batches_per_epoch", cfg.batches_per_epoch);
  get("seed", cfg.seed);
  std::string variant = variant_name(cfg.variant);
  get("variant", variant);
  cfg.variant = variant_from_name(variant);
  get("width", cfg.width);
  get("clip_len", cfg.clip_len);
  get("stride", cfg.stride);
  get("ids_per_batch", cfg.ids_per_batch);
  get("clips_per_id", cfg.clips_per_id);
  get("train_fraction", cfg.train_fraction);
  get("oim_momentum", cfg.oim_momentum);
  get("oim_temperature", cfg.oim_temperature);
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, "config: unknown key '" + key + "'");
  validate(cfg);
  return cfg;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(0.001, static_cast<double>(epoch / 10));
}

SgdState SgdState::zeros_like(const ModelParams& m) {
  SgdState s;
  auto zero = [](const LinearLayer& l) {
    return LayerGrads{Matrix(l.weight.rows, l.weight.cols), Vector(l.bias.size(), 0.0)};
  };
  s.fc0 = zero(m.fc0);
  s.fc1 = zero(m.fc1);
  s.fc2 = zero(m.fc2);
  s.fc3 = zero(m.fc3);
  return s;
}

void sgd_step(ModelParams& params, const ModelGrads& grads, SgdState& state, double lr,
              const TrainConfig& cfg) {
  auto step_layer = [&](LinearLayer& l, const LayerGrads& g, LayerGrads& v, const char* name) {
    step_tensor(l.weight.data, g.weight.data, v.weight.data, lr, cfg.momentum, cfg.weight_decay,
                name);
    step_tensor(l.bias, g.bias, v.bias, lr, cfg.momentum, 0.0, name);
  };
  step_layer(params.fc0, grads.fc0, state.fc0, "fc0");
  step_layer(params.fc1, grads.fc1, state.fc1, "fc1");
  step_layer(params.fc2, grads.fc2, state.fc2, "fc2");
  step_layer(params.fc3, grads.fc3, state.fc3, "fc3");
}

std::vector<std::uint32_t> dataset_identities(const Dataset& ds) {
  std::set<std::uint32_t> ids;
  for (const auto& r : ds) ids.insert(r.identity);
  return {ids.begin(), ids.end()};
}

std::vector<std::uint32_t> train_split(const std::vector<std::uint32_t>& ids, double fraction,
                                       std::uint64_t seed) {
  require(!ids.empty(), "train_split: no identities");
  require(fraction > 0.0 && fraction <= 1.0, "train_split: fraction must lie in (0,1]");
  std::vector<std::uint32_t> shuffled = ids;
  Rng rng(seed ^ 0x73706c6974ull);  // independent stream for the split
  rng.shuffle(shuffled);
  std::size_t n = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(ids.size()) + 0.5));
  n = std::max<std::size_t>(1, std::min(n, ids.size()));
  shuffled.resize(n);
  std::sort(shuffled.begin(), shuffled.end());
  return shuffled;
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  validate(cfg);
  require(!ds.empty(), "train: empty dataset");

  std::vector<std::uint32_t> all_ids = dataset_identities(ds);
  std::vector<std::uint32_t> train_ids = train_split(all_ids, cfg.train_fraction, cfg.seed);
  std::map<std::uint32_t, std::uint32_t> id_to_row;
  for (std::size_t i = 0; i < train_ids.size(); ++i)
    id_to_row[train_ids[i]] = static_cast<std::uint32_t>(i);

  Dataset train_ds;
  for (const auto& r : ds)
    if (id_to_row.count(r.identity)) train_ds.push_back(r);
  require(!train_ds.empty(), "train: no sequences left after the identity split");

  const std::size_t feature_dim = train_ds.front().features.cols;
  std::vector<ClipIndex> clips = segment_dataset(train_ds, cfg.clip_len, cfg.stride);

  std::size_t ids_per_batch = std::min(cfg.ids_per_batch, train_ids.size());
  if (ids_per_batch < cfg.ids_per_batch)
    log_info("train: only " + std::to_string(train_ids.size()) +
             " training identities, shrinking the batch to match");
  std::size_t batch_clips = ids_per_batch * cfg.clips_per_id;
  std::size_t batches_per_epoch =
      cfg.batches_per_epoch ? cfg.batches_per_epoch : (clips.size() + batch_clips - 1) / batch_clips;

  Rng rng(cfg.seed);
  TrainResult result;
  result.model = init_model(feature_dim, cfg.width, cfg.variant, rng);
  result.oim = make_oim_table(train_ids.size(), cfg.width, cfg.oim_momentum, cfg.oim_temperature);
  result.train_identities = train_ids;

  SgdState state = SgdState::zeros_like(result.model);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_at(epoch, cfg);
    EpochStats stats;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      std::vector<ClipIndex> batch =
          sample_batch(train_ds, clips, rng, ids_per_batch, cfg.clips_per_id);
      std::vector<PairSample> pair_samples = pair_batch(train_ds, batch, rng);
      if (pair_samples.empty()) continue;

      std::vector<BatchClip> batch_clips_v;
      batch_clips_v.reserve(batch.size());
      for (const auto& ci : batch)
        batch_clips_v.push_back(
            {clip_matrix(train_ds, ci), id_to_row.at(train_ds[ci.sequence].identity)});

      auto index_of = [&](const ClipIndex& ci) {
        for (std::size_t i = 0; i < batch.size(); ++i)
          if (batch[i].sequence == ci.sequence && batch[i].start == ci.start &&
              batch[i].length == ci.length)
            return i;
        throw std::logic_error("pair references a clip outside the batch");
      };
      std::vector<PairDef> pairs;
      pairs.reserve(pair_samples.size());
      for (const auto& ps : pair_samples)
        pairs.push_back({index_of(ps.probe), index_of(ps.gallery), ps.label});

      ModelGrads grads = ModelGrads::zeros_like(result.model);
      std::vector<Vector> identity_descs;
      BatchResult br = batch_loss(batch_clips_v, pairs, result.model, &result.oim, cfg.lambda_id,
                                  &grads, &identity_descs);
      sgd_step(result.model, grads, state, lr, cfg);
      for (std::size_t i = 0; i < batch_clips_v.size(); ++i)
        oim_update(result.oim, identity_descs[i], batch_clips_v[i].oim_row);

      stats.mean_bce += br.mean_bce;
      stats.mean_oim += br.mean_oim;
      stats.pair_accuracy += br.accuracy;
    }
    stats.mean_bce /= static_cast<double>(batches_per_epoch);
    stats.mean_oim /= static_cast<double>(batches_per_epoch);
    stats.pair_accuracy /= static_cast<double>(batches_per_epoch);
    result.history.push_back(stats);
    log_debug("epoch " + std::to_string(epoch) + ": bce " + std::to_string(stats.mean_bce) +
              " oim " + std::to_string(stats.mean_oim) + " pair-acc " +
              std::to_string(stats.pair_accuracy) + " lr " + std::to_string(lr));
  }
  return result;
}

void write_checkpoint(const std::filesystem::path& path, const ModelParams& model,
                      const TrainConfig& cfg) {
  std::string payload;
  std::string config = train_config_json(cfg);
  append_raw<std::uint64_t>(payload, config.size());
  payload += config;
  auto put_layer = [&](const LinearLayer& l) {
    append_raw<std::uint64_t>(payload, l.weight.rows);
    append_raw<std::uint64_t>(payload, l.weight.cols);
    append_raw<std::uint64_t>(payload, l.bias.size());
    for (double v : l.weight.data) append_raw<double>(payload, v);
    for (double v : l.bias) append_raw<double>(payload, v);
  };
  put_layer(model.fc0);
  put_layer(model.fc1);
  put_layer(model.fc2);
  put_layer(model.fc3);

  std::string file;
  file.append("SCNC", 4);
  append_raw<std::uint32_t>(file, 1u);
  file += payload;
  std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
  append_raw<std::uint32_t>(file, crc);
  atomic_write_bytes(path, file);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 4 || buf.compare(0, 4, "SCNC") != 0)
    throw CheckpointError(CheckpointError::Kind::bad_magic,
                          "not a checkpoint file: " + path.string());
  std::size_t pos = 4;
  std::uint32_t version = read_raw<std::uint32_t>(buf, pos);
  if (version != 1)
    throw CheckpointError(CheckpointError::Kind::bad_version,
                          "unsupported checkpoint version " + std::to_string(version));

  const std::size_t payload_start = pos;
  std::uint64_t config_len = read_raw<std::uint64_t>(buf, pos);
  if (pos + config_len > buf.size())
    throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint config blob truncated");
  std::string config_text = buf.substr(pos, config_len);
  pos += config_len;

  Checkpoint ck;
  ck.config = train_config_from_json_text(config_text);
  auto get_layer = [&]() {
    LinearLayer l;
    std::uint64_t rows = read_raw<std::uint64_t>(buf, pos);
    std::uint64_t cols = read_raw<std::uint64_t>(buf, pos);
    std::uint64_t blen = read_raw<std::uint64_t>(buf, pos);
    l.weight = Matrix(rows, cols);
    for (auto& v : l.weight.data) v = read_raw<double>(buf, pos);
    l.bias = Vector(blen);
    for (auto& v : l.bias) v = read_raw<double>(buf, pos);
    return l;
  };
  ck.model.fc0 = get_layer();
  ck.model.fc1 = get_layer();
  ck.model.fc2 = get_layer();
  ck.model.fc3 = get_layer();
  ck.model.variant = ck.config.variant;
  ck.model.feature_dim = ck.model.fc0.weight.rows;
  ck.model.width = ck.model.fc0.weight.cols;

  const std::size_t payload_end = pos;
  std::uint32_t stored_crc = read_raw<std::uint32_t>(buf, pos);
  if (pos != buf.size())
    throw CheckpointError(CheckpointError::Kind::truncated,
                          "checkpoint has unexpected trailing bytes");
  std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data() + payload_start),
            static_cast<uInt>(payload_end - payload_start)));
  if (crc != stored_crc)
    throw CheckpointError(CheckpointError::Kind::bad_checksum, "checkpoint checksum mismatch");
  return ck;
}

}  // namespace scan
