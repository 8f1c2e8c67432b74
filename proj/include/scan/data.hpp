#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "scan/numkit.hpp"
#include "scan/rng.hpp"

namespace scan {

struct SequenceRecord {
  std::uint32_t identity = 0;
  std::uint32_t camera = 0;
  Matrix features;  // T x feature_dim
};

using Dataset = std::vector<SequenceRecord>;

struct ClipIndex {
  std::size_t sequence = 0;  // index into the dataset
  std::size_t start = 0;
  std::size_t length = 0;
};

struct PairSample {
  ClipIndex probe;
  ClipIndex gallery;
  int label = 0;
};

struct SyntheticConfig {
  std::size_t n_identities = 32;
  std::size_t n_cameras = 2;
  std::size_t frames_per_sequence = 100;
  std::size_t feature_dim = 64;
  double camera_offset_scale = 0.1;
  double frame_noise_sigma = 0.1;
  double occlusion_prob = 0.0;
  std::uint64_t seed = 0;
};

// Fixed windows of `clip_len` frames every `stride` frames; trailing frames
// that do not fill a window are dropped. A sequence shorter than clip_len
// yields one whole-sequence clip.
std::vector<ClipIndex> segment(std::size_t frames, std::size_t clip_len = 10,
                               std::size_t stride = 5, std::size_t sequence = 0);

std::vector<ClipIndex> segment_dataset(const Dataset& ds, std::size_t clip_len = 10,
                                       std::size_t stride = 5);

Matrix clip_matrix(const Dataset& ds, const ClipIndex& ci);

// ids_per_batch identities, clips_per_id clips each (with replacement when
// an identity owns fewer). When an identity spans several cameras its clips
// are drawn from distinct cameras so positive pairs can cross cameras.
std::vector<ClipIndex> sample_batch(const Dataset& ds, const std::vector<ClipIndex>& clips,
                                    Rng& rng, std::size_t ids_per_batch = 16,
                                    std::size_t clips_per_id = 2);

// All within-identity clip pairs as positives plus an equal number of
// cross-identity negatives sampled uniformly (cross-camera where the
// dataset has several cameras).
std::vector<PairSample> pair_batch(const Dataset& ds, const std::vector<ClipIndex>& batch,
                                   Rng& rng);

// Identity mean + per-camera offset + per-frame noise; occluded frames are
// replaced by one shared distractor appearance drawn per dataset. Feature
// values are quantized to float32 so files round-trip bitwise.
Dataset synthesize(const SyntheticConfig& cfg);

class ScnfError : public std::runtime_error {
public:
  enum class Kind { bad_magic, bad_version, truncated, bad_checksum };
  ScnfError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

// Binary feature file plus a JSON sidecar (same path + ".json") listing
// per-record byte offsets. Layout is little-endian: "SCNF", version u32,
// record_count u64, feature_dim u32, then per record identity u32, camera
// u32, frame_count u32 and frame_count*feature_dim float32 values, then a
// CRC32 of the record region.
void write_features(const Dataset& ds, const std::filesystem::path& path);
Dataset read_features(const std::filesystem::path& path);

// Write to a sibling temp file, then rename over the target, so failed
// writes never leave a partial file behind.
void atomic_write_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace scan
