#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "scan/data.hpp"
#include "scan/rng.hpp"

using namespace scan;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("scan_test_" + name);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset tiny_dataset() {
  // 4 identities x 2 cameras, short sequences with distinct values
  SyntheticConfig cfg;
  cfg.n_identities = 4;
  cfg.n_cameras = 2;
  cfg.frames_per_sequence = 12;
  cfg.feature_dim = 3;
  cfg.seed = 42;
  return synthesize(cfg);
}

}  // namespace

TEST_CASE("segment hand-computed windows") {
  auto exact = segment(10, 10, 5);
  REQUIRE(exact.size() == 1);
  CHECK(exact[0].start == 0);
  CHECK(exact[0].length == 10);

  auto three = segment(23, 10, 5, 7);
  REQUIRE(three.size() == 3);
  CHECK(three[0].start == 0);
  CHECK(three[1].start == 5);
  CHECK(three[2].start == 10);
  for (const auto& c : three) {
    CHECK(c.length == 10);
    CHECK(c.sequence == 7);
  }

  auto whole = segment(7, 10, 5);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].start == 0);
  CHECK(whole[0].length == 7);

  CHECK_THROWS_AS(segment(0, 10, 5), std::invalid_argument);
  CHECK_THROWS_AS(segment(10, 0, 5), std::invalid_argument);
  CHECK_THROWS_AS(segment(10, 10, 0), std::invalid_argument);
}

TEST_CASE("segment count follows the closed form for long sequences") {
  const std::pair<std::size_t, std::size_t> geoms[] = {{10, 3}, {10, 5}, {16, 8}, {20, 10}};
  for (auto [len, stride] : geoms) {
    for (std::size_t frames = len; frames <= 500; ++frames) {
      auto clips = segment(frames, len, stride);
      std::size_t expected = (frames - len) / stride + 1;
      CHECK(clips.size() == expected);
      for (const auto& c : clips) {
        CHECK(c.length == len);
        CHECK(c.start + c.length <= frames);
      }
      CHECK(clips.back().start == (clips.size() - 1) * stride);
    }
  }
}

TEST_CASE("segment_dataset tags clips with their sequence and clip_matrix slices them") {
  Dataset ds(3);
  for (std::size_t i = 0; i < 3; ++i) {
    std::size_t frames = i == 0 ? 10 : (i == 1 ? 23 : 7);
    ds[i].features = Matrix(frames, 2);
    for (std::size_t t = 0; t < frames; ++t) {
      ds[i].features(t, 0) = static_cast<double>(100 * i + t);
      ds[i].features(t, 1) = -static_cast<double>(t);
    }
  }
  auto clips = segment_dataset(ds, 10, 5);
  REQUIRE(clips.size() == 5);  // 1 + 3 + 1
  CHECK(clips[0].sequence == 0);
  CHECK(clips[1].sequence == 1);
  CHECK(clips[3].sequence == 1);
  CHECK(clips[4].sequence == 2);
  CHECK(clips[4].length == 7);

  Matrix mid = clip_matrix(ds, clips[2]);  // sequence 1, start 5, len 10
  CHECK(mid.rows == 10);
  CHECK(mid(0, 0) == 105.0);
  CHECK(mid(9, 0) == 114.0);
  CHECK(mid(0, 1) == -5.0);

  CHECK_THROWS_AS(clip_matrix(ds, ClipIndex{9, 0, 5}), std::invalid_argument);
  CHECK_THROWS_AS(clip_matrix(ds, ClipIndex{2, 5, 10}), std::invalid_argument);
}

TEST_CASE("sample_batch groups clips per identity with alternating cameras") {
  Dataset ds = tiny_dataset();
  auto clips = segment_dataset(ds, 6, 3);
  Rng rng(1);
  auto batch = sample_batch(ds, clips, rng, 4, 2);
  REQUIRE(batch.size() == 8);

  std::set<std::uint32_t> seen;
  for (std::size_t g = 0; g < 4; ++g) {
    const auto& a = batch[2 * g];
    const auto& b = batch[2 * g + 1];
    std::uint32_t id = ds[a.sequence].identity;
    CHECK(ds[b.sequence].identity == id);
    CHECK(ds[a.sequence].camera != ds[b.sequence].camera);  // both cameras exist per id
    CHECK(!seen.contains(id));
    seen.insert(id);
  }

  Rng again(1);
  auto repeat = sample_batch(ds, clips, again, 4, 2);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(repeat[i].sequence == batch[i].sequence);
    CHECK(repeat[i].start == batch[i].start);
    CHECK(repeat[i].length == batch[i].length);
  }

  CHECK_THROWS_AS(sample_batch(ds, clips, rng, 5, 2), std::invalid_argument);
  CHECK_THROWS_AS(sample_batch(ds, clips, rng, 0, 2), std::invalid_argument);
}

TEST_CASE("sample_batch draws with replacement when an identity is short on clips") {
  Dataset ds(1);
  ds[0].identity = 3;
  ds[0].camera = 0;
  ds[0].features = Matrix(6, 2, 1.0);
  auto clips = segment_dataset(ds, 6, 3);  // exactly one clip
  REQUIRE(clips.size() == 1);
  Rng rng(2);
  auto batch = sample_batch(ds, clips, rng, 1, 4);
  REQUIRE(batch.size() == 4);
  for (const auto& c : batch) CHECK(c.sequence == 0);
}

TEST_CASE("pair_batch emits matched positives and an equal number of cross-identity negatives") {
  Dataset ds = tiny_dataset();
  auto clips = segment_dataset(ds, 6, 3);
  Rng rng(3);
  auto batch = sample_batch(ds, clips, rng, 4, 2);
  auto pairs = pair_batch(ds, batch, rng);

  std::size_t pos = 0, neg = 0;
  for (const auto& p : pairs) {
    std::uint32_t pid = ds[p.probe.sequence].identity;
    std::uint32_t gid = ds[p.gallery.sequence].identity;
    if (p.label == 1) {
      ++pos;
      CHECK(pid == gid);
    } else {
      ++neg;
      CHECK(pid != gid);
      // two cameras exist, so sampling prefers cross-camera negatives
      CHECK(ds[p.probe.sequence].camera != ds[p.gallery.sequence].camera);
    }
  }
  CHECK(pos == 4);  // one within-identity pair per group of two clips
  CHECK(neg == pos);
}

TEST_CASE("pair_batch with one identity yields positives only") {
  Dataset ds(2);
  for (std::size_t i = 0; i < 2; ++i) {
    ds[i].identity = 9;
    ds[i].camera = static_cast<std::uint32_t>(i);
    ds[i].features = Matrix(6, 2, 0.5);
  }
  auto clips = segment_dataset(ds, 6, 3);
  Rng rng(4);
  auto pairs = pair_batch(ds, clips, rng);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].label == 1);

  CHECK_THROWS_AS(pair_batch(ds, {}, rng), std::invalid_argument);
}

TEST_CASE("pair_batch on a single-camera dataset still finds negatives") {
  Dataset ds(4);
  for (std::size_t i = 0; i < 4; ++i) {
    ds[i].identity = static_cast<std::uint32_t>(i / 2);
    ds[i].camera = 0;
    ds[i].features = Matrix(6, 2, static_cast<double>(i));
  }
  auto clips = segment_dataset(ds, 6, 6);
  Rng rng(5);
  auto pairs = pair_batch(ds, clips, rng);
  std::size_t neg = 0;
  for (const auto& p : pairs)
    if (p.label == 0) {
      ++neg;
      CHECK(ds[p.probe.sequence].identity != ds[p.gallery.sequence].identity);
    }
  CHECK(neg == 2);  // matches the two within-identity positives
}

TEST_CASE("synthesize layout, determinism, and float32 quantization") {
  SyntheticConfig cfg;
  cfg.n_identities = 3;
  cfg.n_cameras = 2;
  cfg.frames_per_sequence = 5;
  cfg.feature_dim = 4;
  cfg.seed = 7;
  Dataset ds = synthesize(cfg);
  REQUIRE(ds.size() == 6);
  for (std::size_t id = 0; id < 3; ++id)
    for (std::size_t cam = 0; cam < 2; ++cam) {
      const auto& rec = ds[id * 2 + cam];
      CHECK(rec.identity == id);
      CHECK(rec.camera == cam);
      CHECK(rec.features.rows == 5);
      CHECK(rec.features.cols == 4);
      for (double v : rec.features.data)
        CHECK(v == static_cast<double>(static_cast<float>(v)));
    }

  Dataset same = synthesize(cfg);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(same[i].features.data == ds[i].features.data);

  cfg.seed = 8;
  Dataset other = synthesize(cfg);
  CHECK(other[0].features.data != ds[0].features.data);

  SyntheticConfig bad = cfg;
  bad.occlusion_prob = 1.0;
  CHECK_THROWS_AS(synthesize(bad), std::invalid_argument);
  bad.occlusion_prob = -0.1;
  CHECK_THROWS_AS(synthesize(bad), std::invalid_argument);
  bad = cfg;
  bad.n_identities = 0;
  CHECK_THROWS_AS(synthesize(bad), std::invalid_argument);
}

TEST_CASE("synthesize with zero noise repeats the identity appearance per sequence") {
  SyntheticConfig cfg;
  cfg.n_identities = 2;
  cfg.n_cameras = 2;
  cfg.frames_per_sequence = 6;
  cfg.feature_dim = 3;
  cfg.frame_noise_sigma = 0.0;
  cfg.seed = 11;
  Dataset ds = synthesize(cfg);
  for (const auto& rec : ds)
    for (std::size_t t = 1; t < rec.features.rows; ++t)
      for (std::size_t k = 0; k < rec.features.cols; ++k)
        CHECK(rec.features(t, k) == rec.features(0, k));
  // camera offset separates the two recordings of one identity
  bool differs = false;
  for (std::size_t k = 0; k < 3; ++k)
    if (ds[0].features(0, k) != ds[1].features(0, k)) differs = true;
  CHECK(differs);
}

TEST_CASE("synthesize occlusion rate matches the configured probability") {
  SyntheticConfig cfg;
  cfg.n_identities = 10;
  cfg.n_cameras = 1;
  cfg.frames_per_sequence = 1000;
  cfg.feature_dim = 4;
  cfg.occlusion_prob = 0.3;
  cfg.seed = 13;
  Dataset ds = synthesize(cfg);

  // Occluded frames all share the one distractor appearance, so the most
  // frequent identical row is the distractor.
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& rec : ds)
    for (std::size_t t = 0; t < rec.features.rows; ++t) {
      std::string key(reinterpret_cast<const char*>(rec.features.row(t)),
                      rec.features.cols * sizeof(double));
      ++counts[key];
      ++total;
    }
  std::size_t top = 0;
  for (const auto& [_, c] : counts) top = std::max(top, c);
  double rate = static_cast<double>(top) / static_cast<double>(total);
  CHECK(rate == doctest::Approx(0.3).epsilon(0.07));  // 10000 draws, +-0.02 absolute
  CHECK(std::fabs(rate - 0.3) <= 0.02);
}

TEST_CASE("feature files round-trip bitwise with a JSON sidecar") {
  Dataset ds = tiny_dataset();
  fs::path path = temp_path("roundtrip.scnf");
  write_features(ds, path);
  Dataset back = read_features(path);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].identity == ds[i].identity);
    CHECK(back[i].camera == ds[i].camera);
    CHECK(back[i].features.rows == ds[i].features.rows);
    CHECK(back[i].features.cols == ds[i].features.cols);
    CHECK(back[i].features.data == ds[i].features.data);
  }

  fs::path sidecar = path;
  sidecar += ".json";
  REQUIRE(fs::exists(sidecar));
  auto manifest = nlohmann::json::parse(slurp(sidecar));
  CHECK(manifest["format"] == "SCNF");
  CHECK(manifest["record_count"] == ds.size());
  CHECK(manifest["feature_dim"] == 3);
  REQUIRE(manifest["records"].size() == ds.size());
  CHECK(manifest["records"][0]["offset"] == 20);  // fixed header size
  CHECK(manifest["records"][0]["identity"] == ds[0].identity);

  CHECK(!fs::exists(path.string() + ".tmp"));  // atomic write leaves no temp file
  fs::remove(path);
  fs::remove(sidecar);
}

TEST_CASE("an empty dataset round-trips") {
  fs::path path = temp_path("empty.scnf");
  write_features({}, path);
  CHECK(read_features(path).empty());
  fs::remove(path);
  fs::remove(path.string() + ".json");
}

TEST_CASE("read_features reports each corruption with its own kind") {
  Dataset ds = tiny_dataset();
  fs::path path = temp_path("corrupt.scnf");
  write_features(ds, path);
  std::string good = slurp(path);

  auto write_and_kind = [&](std::string bytes) {
    atomic_write_bytes(path, bytes);
    try {
      read_features(path);
      return std::optional<ScnfError::Kind>{};
    } catch (const ScnfError& e) {
      return std::optional{e.kind()};
    }
  };

  std::string magic = good;
  magic[0] = 'X';
  CHECK(write_and_kind(magic) == ScnfError::Kind::bad_magic);

  std::string version = good;
  version[4] = 9;
  CHECK(write_and_kind(version) == ScnfError::Kind::bad_version);

  CHECK(write_and_kind(good.substr(0, good.size() - 9)) == ScnfError::Kind::truncated);
  CHECK(write_and_kind(good.substr(0, 10)) == ScnfError::Kind::truncated);
  CHECK(write_and_kind(good + "zz") == ScnfError::Kind::truncated);

  std::string flipped = good;
  flipped[25] = static_cast<char>(flipped[25] ^ 0x40);
  CHECK(write_and_kind(flipped) == ScnfError::Kind::bad_checksum);

  CHECK(write_and_kind(good) == std::optional<ScnfError::Kind>{});  // still intact
  fs::remove(path);
  fs::remove(path.string() + ".json");

  CHECK_THROWS_AS(read_features(temp_path("missing.scnf")), std::runtime_error);
}
