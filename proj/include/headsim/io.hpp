#pragma once

// File formats: binary PPM images and line-delimited JSON manifests.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "headsim/core.hpp"
#include "headsim/synthworld.hpp"

namespace headsim {

using json = nlohmann::json;

// Binary P6 with an optional comment line carrying provenance.
inline void write_ppm(const std::filesystem::path& path, const Image& img, const std::string& comment = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "P6\n";
  if (!comment.empty()) f << "# " << comment << "\n";
  f << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  auto next_token = [&f]() {
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return tok;
    }
    throw std::runtime_error("truncated PPM header");
  };
  if (next_token() != "P6") throw std::runtime_error(path.string() + ": not a binary PPM");
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  if (std::stoi(next_token()) != 255) throw std::runtime_error(path.string() + ": only 8-bit PPM supported");
  f.get();
  Image img(w, h);
  std::vector<unsigned char> bytes(img.data.size());
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) throw std::runtime_error(path.string() + ": truncated pixels");
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0f;
  return img;
}

// Binary P5 mask (0 or 255).
inline void write_pgm(const std::filesystem::path& path, const Mask& m, const std::string& comment = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "P5\n";
  if (!comment.empty()) f << "# " << comment << "\n";
  f << m.width << " " << m.height << "\n255\n";
  std::vector<unsigned char> bytes(m.data.size());
  for (std::size_t i = 0; i < m.data.size(); ++i) bytes[i] = m.data[i] ? 255 : 0;
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Mask read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string tok;
  std::vector<int> header;
  bool magic = false;
  while (header.size() < 3 && f >> tok) {
    if (tok[0] == '#') {
      std::getline(f, tok);
      continue;
    }
    if (!magic) {
      if (tok != "P5") throw std::runtime_error(path.string() + ": not a binary PGM");
      magic = true;
      continue;
    }
    header.push_back(std::stoi(tok));
  }
  if (header.size() != 3) throw std::runtime_error(path.string() + ": truncated PGM header");
  f.get();
  Mask m(header[0], header[1]);
  std::vector<unsigned char> bytes(m.data.size());
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) throw std::runtime_error(path.string() + ": truncated pixels");
  for (std::size_t i = 0; i < bytes.size(); ++i) m.data[i] = bytes[i] >= 128 ? 1 : 0;
  return m;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

inline json box_to_json(const Box& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

inline Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("box must be an array of 4 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline json to_json(const ManifestRecord& m) {
  json j;
  j["sample_id"] = m.sample_id;
  j["image_path"] = m.image_path;
  j["identity"] = m.identity;
  j["appearance"] = m.appearance;
  j["video_id"] = m.video_id;
  j["segment_id"] = m.segment_id;
  j["face_visible"] = m.face_visible;
  j["face_box"] = m.face_box ? box_to_json(*m.face_box) : json(nullptr);
  j["pool"] = m.pool == Pool::head ? "head" : "face";
  return j;
}

inline ManifestRecord manifest_record_from_json(const json& j) {
  ManifestRecord m;
  m.sample_id = j.at("sample_id").get<std::string>();
  m.image_path = j.at("image_path").get<std::string>();
  m.identity = j.at("identity").get<int>();
  m.appearance = j.at("appearance").get<int>();
  m.video_id = j.at("video_id").get<std::string>();
  m.segment_id = j.at("segment_id").get<std::string>();
  m.face_visible = j.at("face_visible").get<bool>();
  if (j.contains("face_box") && !j["face_box"].is_null()) m.face_box = box_from_json(j["face_box"]);
  m.pool = j.value("pool", std::string("head")) == "face" ? Pool::face : Pool::head;
  return m;
}

// Provenance carried as the first line of every line-delimited file we emit.
struct Provenance {
  std::string kind;
  std::string config_hash;
  std::uint64_t seed = 0;

  json to_json() const { return {{"kind", kind}, {"header", true}, {"config_hash", config_hash}, {"seed", seed}}; }
};

inline void write_jsonl(const std::filesystem::path& path, const Provenance& prov, const std::vector<json>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << prov.to_json().dump() << "\n";
  for (const auto& r : rows) f << r.dump() << "\n";
}

// Reads records, skipping header lines.
inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (j.value("header", false)) continue;
    rows.push_back(std::move(j));
  }
  return rows;
}

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::vector<ManifestRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(manifest_record_from_json(j));
  return out;
}

inline void write_manifest(const std::filesystem::path& path, const Provenance& prov,
                           const std::vector<ManifestRecord>& records) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  write_jsonl(path, prov, rows);
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace headsim
