#pragma once

// Dataset manifest: one JSON record per line pointing at a lossless PPM image
// with its ground-truth boxes and labels.

#include <string>
#include <vector>

#include "lpnet/image.hpp"
#include "lpnet/synth.hpp"

namespace lpnet {

struct ManifestRecord {
  std::string image_path;  // relative to the manifest's directory
  std::vector<Box> boxes;
  std::vector<std::string> labels;
  uint64_t seed = 0;
  std::string group = "all";
};

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::string& path);

// directory portion of a path ("" when there is none)
std::string dir_of(const std::string& path);

ImageU8 load_record_image(const std::string& manifest_path, const ManifestRecord& rec);

// Writes samples as images/NNNNNN.ppm under out_dir plus out_dir/manifest.jsonl;
// returns the manifest path.
std::string write_dataset(const std::string& out_dir,
                          const std::vector<PlateSample>& samples);

}  // namespace lpnet
