#include "lpnet/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace lpnet {

using nlohmann::json;

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("manifest: cannot open " + path + " for writing");
  for (const auto& rec : records) {
    json boxes = json::array();
    for (const auto& b : rec.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    json j{{"image", rec.image_path},
           {"boxes", boxes},
           {"labels", rec.labels},
           {"seed", rec.seed},
           {"group", rec.group}};
    os << j.dump() << "\n";
  }
  os.flush();
  if (!os) throw DataError("manifest: write failed for " + path);
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("manifest: cannot open " + path);
  std::vector<ManifestRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "manifest " + path + " line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    ManifestRecord rec;
    try {
      rec.image_path = j.at("image").get<std::string>();
      for (const auto& jb : j.at("boxes")) {
        if (!jb.is_array() || jb.size() != 4)
          throw DataError(where + ": box must have exactly 4 coordinates");
        Box b{jb[0].get<double>(), jb[1].get<double>(), jb[2].get<double>(),
              jb[3].get<double>()};
        if (!b.valid()) throw DataError(where + ": invalid box geometry");
        rec.boxes.push_back(b);
      }
      rec.labels = j.at("labels").get<std::vector<std::string>>();
      rec.seed = j.value("seed", uint64_t(0));
      rec.group = j.value("group", std::string("all"));
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    if (rec.labels.size() != rec.boxes.size())
      throw DataError(where + ": label count does not match box count");
    out.push_back(std::move(rec));
  }
  return out;
}

std::string dir_of(const std::string& path) {
  auto pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string() : path.substr(0, pos);
}

ImageU8 load_record_image(const std::string& manifest_path, const ManifestRecord& rec) {
  std::string dir = dir_of(manifest_path);
  std::string full = dir.empty() ? rec.image_path : dir + "/" + rec.image_path;
  return read_ppm(full);
}

std::string write_dataset(const std::string& out_dir,
                          const std::vector<PlateSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");
  std::vector<ManifestRecord> records;
  records.reserve(samples.size());
  char name[32];
  for (size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "images/%06zu.ppm", i);
    write_ppm((fs::path(out_dir) / name).string(), samples[i].image);
    ManifestRecord rec;
    rec.image_path = name;
    rec.boxes = samples[i].boxes;
    rec.labels = samples[i].labels;
    rec.seed = samples[i].seed;
    rec.group = samples[i].group;
    records.push_back(std::move(rec));
  }
  const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  write_manifest(manifest_path, records);
  return manifest_path;
}

}  // namespace lpnet
