#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmdet/codec.hpp"
#include "lmdet/error.hpp"
#include "lmdet/tensor.hpp"

namespace lmdet {

// One annotated image: original-frame continuous landmark coordinates plus
// the physical pixel spacing the mm metrics need.
struct SampleRecord {
  std::string image_path;  // relative to the annotation file's directory
  int width = 0;
  int height = 0;
  double pixel_spacing_mm = 0.0;
  LandmarkSet landmarks;
};

struct Dataset {
  std::string base_dir;
  int num_landmarks = 0;
  std::vector<SampleRecord> samples;
};

// ---------------------------------------------------------------------------
// 8-bit binary portable graymap (P5)
// ---------------------------------------------------------------------------

// Values are clamped to [0,1] and quantized to 255 levels.
inline void write_pgm(const Tensor4& img, const std::string& path) {
  if (img.n() != 1 || img.c() != 1) fail(ErrorClass::shape, "write_pgm: expected (1,1,h,w)");
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorClass::io, "cannot open for writing: " + path);
  f << "P5\n" << img.w() << " " << img.h() << "\n255\n";
  std::vector<unsigned char> row(img.w());
  const double* p = img.plane(0, 0);
  for (int y = 0; y < img.h(); ++y) {
    for (int x = 0; x < img.w(); ++x) {
      double v = p[static_cast<size_t>(y) * img.w() + x];
      v = std::clamp(v, 0.0, 1.0);
      row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!f) fail(ErrorClass::io, "short write: " + path);
}

// Returns (1,1,h,w) scaled to [0,1]. Tolerates comments and arbitrary
// whitespace in the header.
inline Tensor4 read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorClass::io, "cannot open: " + path);
  const auto next_token = [&]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = f.get()) != EOF) {
      if (ch == '#') {
        while ((ch = f.get()) != EOF && ch != '\n') {}
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };
  if (next_token() != "P5") fail(ErrorClass::format, "not a binary PGM: " + path);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    fail(ErrorClass::format, "bad PGM header: " + path);
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    fail(ErrorClass::format, "unsupported PGM header in " + path);
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) fail(ErrorClass::format, "truncated PGM payload: " + path);
  Tensor4 img(1, 1, h, w);
  double* p = img.plane(0, 0);
  for (size_t i = 0; i < buf.size(); ++i) p[i] = buf[i] / static_cast<double>(maxval);
  return img;
}

// ---------------------------------------------------------------------------
// Annotation document (one JSON file per dataset). Serialization is
// canonical (sorted keys, fixed indent), so write -> read -> write is
// byte-identical.
// ---------------------------------------------------------------------------

inline nlohmann::json dataset_to_json(const Dataset& ds) {
  nlohmann::json root;
  root["schema"] = "lmds-v1";
  root["num_landmarks"] = ds.num_landmarks;
  auto& samples = root["samples"] = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    nlohmann::json js;
    js["image"] = s.image_path;
    js["width"] = s.width;
    js["height"] = s.height;
    js["pixel_spacing_mm"] = s.pixel_spacing_mm;
    auto& lms = js["landmarks"] = nlohmann::json::array();
    for (const auto& p : s.landmarks.points) lms.push_back({p.x, p.y});
    auto& vis = js["visible"] = nlohmann::json::array();
    for (uint8_t v : s.landmarks.visible) vis.push_back(static_cast<bool>(v));
    samples.push_back(std::move(js));
  }
  return root;
}

inline void reject_unknown_keys(const nlohmann::json& obj,
                                const std::vector<std::string>& allowed,
                                const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const auto& a : allowed)
      if (key == a) { ok = true; break; }
    if (!ok) fail(ErrorClass::format, "unknown key \"" + key + "\" in " + where);
  }
}

inline Dataset dataset_from_json(const nlohmann::json& root, const std::string& base_dir) {
  Dataset ds;
  ds.base_dir = base_dir;
  try {
    reject_unknown_keys(root, {"schema", "num_landmarks", "samples"}, "dataset");
    if (root.at("schema").get<std::string>() != "lmds-v1")
      fail(ErrorClass::format, "unsupported dataset schema");
    ds.num_landmarks = root.at("num_landmarks").get<int>();
    if (ds.num_landmarks <= 0) fail(ErrorClass::format, "num_landmarks must be positive");
    for (const auto& js : root.at("samples")) {
      reject_unknown_keys(
          js, {"image", "width", "height", "pixel_spacing_mm", "landmarks", "visible"},
          "dataset sample");
      SampleRecord s;
      s.image_path = js.at("image").get<std::string>();
      s.width = js.at("width").get<int>();
      s.height = js.at("height").get<int>();
      s.pixel_spacing_mm = js.at("pixel_spacing_mm").get<double>();
      if (s.width <= 0 || s.height <= 0)
        fail(ErrorClass::format, "bad sample dimensions for " + s.image_path);
      if (!(s.pixel_spacing_mm > 0.0))
        fail(ErrorClass::format, "pixel_spacing_mm must be positive for " + s.image_path);
      const auto& lms = js.at("landmarks");
      if (static_cast<int>(lms.size()) != ds.num_landmarks)
        fail(ErrorClass::data, "sample " + s.image_path + " has " +
                                   std::to_string(lms.size()) + " landmarks, dataset declares " +
                                   std::to_string(ds.num_landmarks));
      s.landmarks = LandmarkSet(lms.size());
      for (size_t j = 0; j < lms.size(); ++j) {
        s.landmarks.points[j].x = lms[j].at(0).get<double>();
        s.landmarks.points[j].y = lms[j].at(1).get<double>();
      }
      const auto& vis = js.at("visible");
      if (vis.size() != lms.size())
        fail(ErrorClass::format, "visible list length mismatch for " + s.image_path);
      for (size_t j = 0; j < vis.size(); ++j)
        s.landmarks.visible[j] = vis[j].get<bool>() ? 1 : 0;
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorClass::format, std::string("malformed dataset document: ") + e.what());
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& annotations_path) {
  std::ofstream f(annotations_path);
  if (!f) fail(ErrorClass::io, "cannot open for writing: " + annotations_path);
  f << dataset_to_json(ds).dump(2) << "\n";
  if (!f) fail(ErrorClass::io, "short write: " + annotations_path);
}

inline Dataset load_dataset(const std::string& annotations_path) {
  std::ifstream f(annotations_path);
  if (!f) fail(ErrorClass::io, "cannot open: " + annotations_path);
  nlohmann::json root;
  try {
    f >> root;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorClass::format, "invalid JSON in " + annotations_path + ": " + e.what());
  }
  const auto dir = std::filesystem::path(annotations_path).parent_path().string();
  return dataset_from_json(root, dir.empty() ? "." : dir);
}

inline Tensor4 load_sample_image(const Dataset& ds, size_t index) {
  const auto& s = ds.samples.at(index);
  const auto full = std::filesystem::path(ds.base_dir) / s.image_path;
  Tensor4 img = read_pgm(full.string());
  if (img.h() != s.height || img.w() != s.width)
    fail(ErrorClass::data, "image size disagrees with annotation for " + s.image_path);
  return img;
}

}  // namespace lmdet
