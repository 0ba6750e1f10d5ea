#pragma once

// On-disk dataset layout:
//   <dir>/manifest.jsonl            one JSON object per sequence
//   <dir>/seqs/<seq_id>/frame_0000.pgm ...   binary P5, maxval 255

#include "gaitsf/common.hpp"
#include "gaitsf/silhouette.hpp"
#include "gaitsf/synth.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace gaitsf {

namespace fs = std::filesystem;

inline void write_pgm(const fs::path& path, const Silhouette& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  std::string row(static_cast<size_t>(img.cols()), '\0');
  for (int r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < img.cols(); ++c) row[static_cast<size_t>(c)] = img.at(r, c) ? static_cast<char>(255) : '\0';
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline Silhouette read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int cols = 0, rows = 0, maxval = 0;
  in >> magic >> cols >> rows >> maxval;
  if (magic != "P5" || cols <= 0 || rows <= 0 || maxval <= 0 || maxval > 255)
    throw IoError("unsupported PGM header in " + path.string());
  in.get();
  Silhouette img(rows, cols);
  std::string buf(static_cast<size_t>(rows * cols), '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError("truncated PGM " + path.string());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      img.set(r, c, static_cast<unsigned char>(buf[static_cast<size_t>(r * cols + c)]) * 2 > maxval);
  return img;
}

inline nlohmann::json to_json(const ManifestEntry& e) {
  return {{"seq_id", e.seq_id},       {"subject_id", e.subject_id}, {"condition", to_string(e.condition)},
          {"view_deg", e.view_deg},   {"seq_index", e.seq_index},   {"n_frames", e.n_frames},
          {"path", e.path}};
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
  ManifestEntry e;
  e.seq_id = j.at("seq_id").get<std::string>();
  e.subject_id = j.at("subject_id").get<int>();
  e.condition = parse_condition(j.at("condition").get<std::string>());
  e.view_deg = j.at("view_deg").get<int>();
  e.seq_index = j.value("seq_index", 1);
  e.n_frames = j.at("n_frames").get<int>();
  e.path = j.at("path").get<std::string>();
  return e;
}

inline void write_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir / "seqs", ec);
  if (ec) throw IoError("cannot create " + (dir / "seqs").string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw IoError("cannot open " + (dir / "manifest.jsonl").string());
  for (size_t i = 0; i < ds.sequences.size(); ++i) {
    const auto& seq = ds.sequences[i];
    const auto& entry = ds.manifest[i];
    const fs::path seq_dir = dir / entry.path;
    fs::create_directories(seq_dir, ec);
    if (ec) throw IoError("cannot create " + seq_dir.string() + ": " + ec.message());
    for (size_t t = 0; t < seq.frames.size(); ++t) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%04zu.pgm", t);
      write_pgm(seq_dir / name, seq.frames[t]);
    }
    manifest << to_json(entry).dump() << '\n';
  }
  if (!manifest) throw IoError("write failed for manifest.jsonl");
}

inline Dataset read_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.jsonl";
  std::ifstream in(mpath);
  if (!in) throw IoError("missing dataset manifest " + mpath.string());
  Dataset ds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ManifestEntry e;
    try {
      e = manifest_entry_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError(mpath.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    GaitSequence seq;
    seq.seq_id = e.seq_id;
    seq.subject_id = e.subject_id;
    seq.condition = e.condition;
    seq.view_deg = e.view_deg;
    seq.seq_index = e.seq_index;
    seq.frames.reserve(static_cast<size_t>(e.n_frames));
    for (int t = 0; t < e.n_frames; ++t) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%04d.pgm", t);
      seq.frames.push_back(read_pgm(dir / e.path / name));
    }
    ds.sequences.push_back(std::move(seq));
    ds.manifest.push_back(std::move(e));
  }
  return ds;
}

}  // namespace gaitsf
