#include "scan/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "scan/log.hpp"

static_assert(std::endian::native == std::endian::little,
              "feature file I/O assumes a little-endian host");

namespace scan {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

float quantize(double v) { return static_cast<float>(v); }

template <class T>
void append_raw(std::string& buf, T v) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.append(tmp, sizeof(T));
}

template <class T>
T read_raw(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size())
    throw ScnfError(ScnfError::Kind::truncated, "feature file truncated at byte " +
                                                    std::to_string(pos));
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void atomic_write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<ClipIndex> segment(std::size_t frames, std::size_t clip_len, std::size_t stride,
                               std::size_t sequence) {
  require(frames >= 1 && clip_len >= 1 && stride >= 1, "segment: counts must be positive");
  std::vector<ClipIndex> out;
  if (frames < clip_len) {
    out.push_back({sequence, 0, frames});
    return out;
  }
  for (std::size_t start = 0; start + clip_len <= frames; start += stride)
    out.push_back({sequence, start, clip_len});
  return out;
}

std::vector<ClipIndex> segment_dataset(const Dataset& ds, std::size_t clip_len,
                                       std::size_t stride) {
  std::vector<ClipIndex> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto clips = segment(ds[i].features.rows, clip_len, stride, i);
    out.insert(out.end(), clips.begin(), clips.end());
  }
  return out;
}

Matrix clip_matrix(const Dataset& ds, const ClipIndex& ci) {
  require(ci.sequence < ds.size(), "clip_matrix: sequence index out of range");
  const Matrix& f = ds[ci.sequence].features;
  require(ci.start + ci.length <= f.rows, "clip_matrix: clip exceeds sequence bounds");
  Matrix out(ci.length, f.cols);
  std::copy(f.row(ci.start), f.row(ci.start) + ci.length * f.cols, out.data.begin());
  return out;
}

std::vector<ClipIndex> sample_batch(const Dataset& ds, const std::vector<ClipIndex>& clips,
                                    Rng& rng, std::size_t ids_per_batch,
                                    std::size_t clips_per_id) {
  require(ids_per_batch >= 1 && clips_per_id >= 1, "sample_batch: counts must be positive");
  std::map<std::uint32_t, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < clips.size(); ++i)
    by_id[ds[clips[i].sequence].identity].push_back(i);
  require(by_id.size() >= ids_per_batch,
          "sample_batch: dataset has " + std::to_string(by_id.size()) + " identities, need " +
              std::to_string(ids_per_batch));

  std::vector<std::uint32_t> ids;
  ids.reserve(by_id.size());
  for (const auto& [id, _] : by_id) ids.push_back(id);
  rng.shuffle(ids);
  ids.resize(ids_per_batch);

  std::vector<ClipIndex> batch;
  batch.reserve(ids_per_batch * clips_per_id);
  for (std::uint32_t id : ids) {
    const auto& pool = by_id[id];
    std::uint32_t prev_camera = 0;
    bool have_prev = false;
    for (std::size_t k = 0; k < clips_per_id; ++k) {
      std::vector<std::size_t> candidates;
      if (have_prev) {
        for (std::size_t idx : pool)
          if (ds[clips[idx].sequence].camera != prev_camera) candidates.push_back(idx);
      }
      const auto& from = candidates.empty() ? pool : candidates;
      std::size_t pick = from[rng.uniform_index(from.size())];
      batch.push_back(clips[pick]);
      prev_camera = ds[clips[pick].sequence].camera;
      have_prev = true;
    }
  }
  return batch;
}

std::vector<PairSample> pair_batch(const Dataset& ds, const std::vector<ClipIndex>& batch,
                                   Rng& rng) {
  require(!batch.empty(), "pair_batch: empty batch");
  auto identity = [&](const ClipIndex& c) { return ds[c.sequence].identity; };
  auto camera = [&](const ClipIndex& c) { return ds[c.sequence].camera; };

  bool multi_camera = false;
  for (const auto& r : ds)
    if (r.camera != ds.front().camera) {
      multi_camera = true;
      break;
    }

  std::vector<PairSample> out;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t j = i + 1; j < batch.size(); ++j)
      if (identity(batch[i]) == identity(batch[j]))
        out.push_back({batch[i], batch[j], 1});

  std::size_t negatives = out.size();
  bool cross_identity_possible = false;
  for (std::size_t i = 1; i < batch.size() && !cross_identity_possible; ++i)
    cross_identity_possible = identity(batch[i]) != identity(batch[0]);
  if (!cross_identity_possible) {
    log_info("pair_batch: single identity in batch, emitting positives only");
    return out;
  }

  for (std::size_t k = 0; k < negatives; ++k) {
    for (int attempt = 0;; ++attempt) {
      std::size_t i = rng.uniform_index(batch.size());
      std::size_t j = rng.uniform_index(batch.size());
      if (i == j || identity(batch[i]) == identity(batch[j])) continue;
      if (multi_camera && camera(batch[i]) == camera(batch[j]) && attempt < 64) continue;
      out.push_back({batch[i], batch[j], 0});
      break;
    }
  }
  return out;
}

Dataset synthesize(const SyntheticConfig& cfg) {
  require(cfg.n_identities >= 1 && cfg.n_cameras >= 1 && cfg.frames_per_sequence >= 1 &&
              cfg.feature_dim >= 1,
          "synthesize: counts must be positive");
  require(cfg.occlusion_prob >= 0.0 && cfg.occlusion_prob < 1.0,
          "synthesize: occlusion_prob must lie in [0,1)");
  Rng rng(cfg.seed);
  const std::size_t d = cfg.feature_dim;

  Vector distractor(d);
  for (auto& v : distractor) v = quantize(rng.normal());

  std::vector<Vector> camera_offset(cfg.n_cameras, Vector(d));
  for (auto& delta : camera_offset)
    for (auto& v : delta) v = rng.normal() * cfg.camera_offset_scale;

  Dataset ds;
  ds.reserve(cfg.n_identities * cfg.n_cameras);
  for (std::size_t id = 0; id < cfg.n_identities; ++id) {
    Vector mean(d);
    for (auto& v : mean) v = rng.normal();
    for (std::size_t cam = 0; cam < cfg.n_cameras; ++cam) {
      SequenceRecord rec;
      rec.identity = static_cast<std::uint32_t>(id);
      rec.camera = static_cast<std::uint32_t>(cam);
      rec.features = Matrix(cfg.frames_per_sequence, d);
      for (std::size_t t = 0; t < cfg.frames_per_sequence; ++t) {
        double* row = rec.features.row(t);
        if (rng.uniform() < cfg.occlusion_prob) {
          for (std::size_t k = 0; k < d; ++k) row[k] = distractor[k];
        } else {
          for (std::size_t k = 0; k < d; ++k)
            row[k] = quantize(mean[k] + camera_offset[cam][k] + rng.normal() * cfg.frame_noise_sigma);
        }
      }
      ds.push_back(std::move(rec));
    }
  }
  return ds;
}

void write_features(const Dataset& ds, const std::filesystem::path& path) {
  std::uint32_t dim = ds.empty() ? 0 : static_cast<std::uint32_t>(ds.front().features.cols);
  for (const auto& r : ds)
    require(r.features.cols == dim && r.features.rows >= 1,
            "write_features: inconsistent or empty record");

  std::string payload;
  nlohmann::json offsets = nlohmann::json::array();
  const std::size_t header_size = 4 + 4 + 8 + 4;
  for (const auto& r : ds) {
    offsets.push_back({{"identity", r.identity},
                       {"camera", r.camera},
                       {"frame_count", r.features.rows},
                       {"offset", header_size + payload.size()}});
    append_raw<std::uint32_t>(payload, r.identity);
    append_raw<std::uint32_t>(payload, r.camera);
    append_raw<std::uint32_t>(payload, static_cast<std::uint32_t>(r.features.rows));
    for (double v : r.features.data) append_raw<float>(payload, quantize(v));
  }

  std::string file;
  file.reserve(header_size + payload.size() + 4);
  file.append("SCNF", 4);
  append_raw<std::uint32_t>(file, 1u);
  append_raw<std::uint64_t>(file, static_cast<std::uint64_t>(ds.size()));
  append_raw<std::uint32_t>(file, dim);
  file += payload;
  std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
  append_raw<std::uint32_t>(file, crc);
  atomic_write_bytes(path, file);

  nlohmann::json manifest = {{"format", "SCNF"},
                             {"version", 1},
                             {"record_count", ds.size()},
                             {"feature_dim", dim},
                             {"records", offsets}};
  std::filesystem::path sidecar = path;
  sidecar += ".json";
  atomic_write_bytes(sidecar, manifest.dump(2) + "\n");
}

Dataset read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  if (buf.size() < 4 || buf.compare(0, 4, "SCNF") != 0)
    throw ScnfError(ScnfError::Kind::bad_magic, "not a feature file: " + path.string());
  pos = 4;
  std::uint32_t version = read_raw<std::uint32_t>(buf, pos);
  if (version != 1)
    throw ScnfError(ScnfError::Kind::bad_version,
                    "unsupported feature file version " + std::to_string(version));
  std::uint64_t count = read_raw<std::uint64_t>(buf, pos);
  std::uint32_t dim = read_raw<std::uint32_t>(buf, pos);

  const std::size_t payload_start = pos;
  Dataset ds;
  ds.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    SequenceRecord rec;
    rec.identity = read_raw<std::uint32_t>(buf, pos);
    rec.camera = read_raw<std::uint32_t>(buf, pos);
    std::uint32_t frames = read_raw<std::uint32_t>(buf, pos);
    rec.features = Matrix(frames, dim);
    for (auto& v : rec.features.data) v = static_cast<double>(read_raw<float>(buf, pos));
    ds.push_back(std::move(rec));
  }
  const std::size_t payload_end = pos;
  std::uint32_t stored_crc = read_raw<std::uint32_t>(buf, pos);
  if (pos != buf.size())
    throw ScnfError(ScnfError::Kind::truncated, "feature file has " +
                                                    std::to_string(buf.size() - pos) +
                                                    " unexpected trailing bytes");
  std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data() + payload_start),
            static_cast<uInt>(payload_end - payload_start)));
  if (crc != stored_crc)
    throw ScnfError(ScnfError::Kind::bad_checksum, "feature file checksum mismatch");
  return ds;
}

}  // namespace scan
