#pragma once

#include "ugp/degrade.hpp"
#include "ugp/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace ugp::data {

/// Loads an 8- or 16-bit PNG as RGB in [0,1]. Gray is broadcast to three
/// channels, alpha is dropped.
Image load_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG; values are clipped then quantized by round(v·255).
/// Single-channel images are written as gray replicated to RGB.
void save_image(const Image& img, const std::filesystem::path& path);

/// Byte the writer stores for a value.
uint8_t quantize(double value);

struct ManifestEntry {
  std::string clean;
  std::string degraded;
  int64_t seed = 0;
  std::string spec_id;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  degrade::DegradationSpec spec;

  size_t size() const { return entries.size(); }
};

/// PNG files directly inside `dir`, sorted lexicographically by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Per-entry seed, a stable hash of (seed, filename).
int64_t entry_seed(uint64_t seed, const std::string& filename);

/// One entry per clean image. Degraded paths point into `degraded_dir`
/// (default: a sibling directory named `<clean_dir>-<spec id>`).
DatasetManifest build_manifest(const std::filesystem::path& clean_dir, const degrade::DegradationSpec& spec,
                               uint64_t seed, std::filesystem::path degraded_dir = {});

/// Returns (train, test). |test| = round(test_fraction·N).
std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& m, double test_fraction,
                                                           uint64_t seed);

/// JSON Lines, one entry per line, plus `<path>.spec.json` holding the spec.
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);
std::string manifest_to_jsonl(const DatasetManifest& m);

/// Writes every degraded image named by the manifest.
void materialize(const DatasetManifest& m, const degrade::Degrader& degrader);

/// Clean/degraded pair as loaded from a manifest entry.
struct Pair {
  Image clean;
  Image degraded;
};

std::vector<Pair> load_pairs(const DatasetManifest& m);

/// Procedural face-like corpus: a head ellipse with eyes, brows, nose and
/// mouth over a textured background, all parameters drawn per image.
std::vector<Image> generate_toy_faces(int count, int resolution, uint64_t seed);

/// Writes `face-0000.png`, ... into `dir` (created if missing).
std::vector<std::filesystem::path> write_toy_corpus(const std::filesystem::path& dir, int count, int resolution,
                                                    uint64_t seed);

}  // namespace ugp::data
