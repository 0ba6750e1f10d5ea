#pragma once

// Gallery/probe identification metrics.

#include "gaitsf/common.hpp"
#include "gaitsf/silhouette.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace gaitsf {

struct EvalItem {
  Vec embedding;
  std::string seq_id;
  int subject_id = 0;
  Condition condition = Condition::NM;
  int view_deg = 0;
  int seq_index = 1;
};

/// Gallery = sequences of `gallery_condition` with index <= gallery_max_index;
/// everything else is a probe, grouped by condition.
struct Protocol {
  Condition gallery_condition = Condition::NM;
  int gallery_max_index = 4;
  bool exclude_same_view = true;
  std::vector<int> ranks{1, 5};

  bool in_gallery(const EvalItem& it) const {
    return it.condition == gallery_condition && it.seq_index <= gallery_max_index;
  }
};

struct RankCell {
  int count = 0;
  std::map<int, double> accuracy;  // rank k -> percent
  bool operator==(const RankCell&) const = default;
};

struct ResultTable {
  std::vector<int> ranks;
  bool exclude_same_view = true;
  int skipped = 0;
  std::map<std::string, RankCell> by_condition;
  /// condition -> probe view -> cell
  std::map<std::string, std::map<int, RankCell>> by_view;

  bool operator==(const ResultTable&) const = default;

  /// Rank-k accuracy pooled over the given probe views of all conditions.
  double pooled(int k, const std::set<int>& views) const {
    double hits = 0.0;
    int n = 0;
    for (const auto& [cond, row] : by_view)
      for (const auto& [v, cell] : row)
        if (views.count(v)) {
          hits += cell.accuracy.at(k) * cell.count;
          n += cell.count;
        }
    return n ? hits / n : 0.0;
  }
};

namespace detail {

struct Tally {
  int count = 0;
  std::map<int, int> hits;
};

inline RankCell finish(const Tally& t, const std::vector<int>& ranks) {
  RankCell c;
  c.count = t.count;
  for (int k : ranks) {
    const auto it = t.hits.find(k);
    c.accuracy[k] = t.count ? 100.0 * (it == t.hits.end() ? 0 : it->second) / t.count : 0.0;
  }
  return c;
}

}  // namespace detail

/// Ranks the gallery for every probe by cosine similarity (ties to the lower
/// gallery index after sorting the gallery by seq_id). A probe is a rank-k hit
/// when one of its top k gallery entries shares its subject. With
/// exclude_same_view, gallery entries of the probe's view are dropped and a
/// probe left with an empty gallery is counted in `skipped`.
inline ResultTable rank_k(std::vector<EvalItem> gallery, const std::vector<EvalItem>& probes,
                          const std::vector<int>& ranks, bool exclude_same_view) {
  if (ranks.empty()) throw ValidationError("rank_k: at least one rank required");
  for (int k : ranks)
    if (k < 1) throw ValidationError("rank_k: k must be >= 1");
  if (gallery.empty()) throw ProtocolError("gallery is empty");
  std::set<int> gallery_subjects;
  for (const auto& g : gallery) gallery_subjects.insert(g.subject_id);
  std::set<int> missing;
  for (const auto& p : probes)
    if (!gallery_subjects.count(p.subject_id)) missing.insert(p.subject_id);
  if (!missing.empty()) {
    std::string list;
    for (int s : missing) list += (list.empty() ? "" : ",") + std::to_string(s);
    throw ProtocolError("probe subjects missing from gallery: " + list);
  }
  std::stable_sort(gallery.begin(), gallery.end(), [](const EvalItem& a, const EvalItem& b) { return a.seq_id < b.seq_id; });

  Mat G(gallery.front().embedding.size(), static_cast<Eigen::Index>(gallery.size()));
  for (size_t i = 0; i < gallery.size(); ++i) {
    if (gallery[i].embedding.size() != G.rows()) throw GeometryError("gallery embeddings differ in length");
    G.col(static_cast<Eigen::Index>(i)) = gallery[i].embedding;
  }
  const int kmax = *std::max_element(ranks.begin(), ranks.end());

  ResultTable t;
  t.ranks = ranks;
  t.exclude_same_view = exclude_same_view;
  std::map<std::string, detail::Tally> by_cond;
  std::map<std::string, std::map<int, detail::Tally>> by_view;
  std::vector<std::pair<double, int>> order;
  for (const auto& p : probes) {
    if (p.embedding.size() != G.rows()) throw GeometryError("probe embedding length differs from gallery");
    const Vec sim = G.transpose() * p.embedding;
    order.clear();
    for (size_t i = 0; i < gallery.size(); ++i) {
      if (exclude_same_view && gallery[i].view_deg == p.view_deg) continue;
      order.emplace_back(sim[static_cast<Eigen::Index>(i)], static_cast<int>(i));
    }
    if (order.empty()) {
      ++t.skipped;
      continue;
    }
    const size_t top = std::min(order.size(), static_cast<size_t>(kmax));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                      [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    int first_hit = -1;
    for (size_t r = 0; r < top; ++r)
      if (gallery[static_cast<size_t>(order[r].second)].subject_id == p.subject_id) {
        first_hit = static_cast<int>(r);
        break;
      }
    const std::string cond = to_string(p.condition);
    auto& tc = by_cond[cond];
    auto& tv = by_view[cond][p.view_deg];
    ++tc.count;
    ++tv.count;
    for (int k : ranks) {
      tc.hits[k] += (first_hit >= 0 && first_hit < k) ? 1 : 0;
      tv.hits[k] += (first_hit >= 0 && first_hit < k) ? 1 : 0;
    }
  }
  for (const auto& [c, tally] : by_cond) t.by_condition[c] = detail::finish(tally, ranks);
  for (const auto& [c, row] : by_view)
    for (const auto& [v, tally] : row) t.by_view[c][v] = detail::finish(tally, ranks);
  return t;
}

/// Splits items by protocol and ranks probes against the gallery.
inline ResultTable evaluate(const std::vector<EvalItem>& items, const Protocol& proto) {
  std::vector<EvalItem> gallery, probes;
  for (const auto& it : items) (proto.in_gallery(it) ? gallery : probes).push_back(it);
  if (probes.empty()) throw ProtocolError("protocol selects no probe sequences");
  return rank_k(std::move(gallery), probes, proto.ranks, proto.exclude_same_view);
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::json to_json(const RankCell& c) {
  nlohmann::json j{{"count", c.count}};
  for (const auto& [k, a] : c.accuracy) j["rank" + std::to_string(k)] = a;
  return j;
}

inline RankCell rank_cell_from_json(const nlohmann::json& j, const std::vector<int>& ranks) {
  RankCell c;
  c.count = j.at("count").get<int>();
  for (int k : ranks) c.accuracy[k] = j.at("rank" + std::to_string(k)).get<double>();
  return c;
}

inline nlohmann::json to_json(const ResultTable& t) {
  nlohmann::json j{{"ranks", t.ranks}, {"exclude_same_view", t.exclude_same_view}, {"skipped", t.skipped}};
  j["conditions"] = nlohmann::json::object();
  for (const auto& [c, cell] : t.by_condition) j["conditions"][c] = to_json(cell);
  j["per_view"] = nlohmann::json::object();
  for (const auto& [c, row] : t.by_view)
    for (const auto& [v, cell] : row) j["per_view"][c][std::to_string(v)] = to_json(cell);
  return j;
}

inline ResultTable result_table_from_json(const nlohmann::json& j) {
  ResultTable t;
  t.ranks = j.at("ranks").get<std::vector<int>>();
  t.exclude_same_view = j.at("exclude_same_view").get<bool>();
  t.skipped = j.at("skipped").get<int>();
  for (const auto& [c, cell] : j.at("conditions").items()) t.by_condition[c] = rank_cell_from_json(cell, t.ranks);
  for (const auto& [c, row] : j.at("per_view").items())
    for (const auto& [v, cell] : row.items()) t.by_view[c][std::stoi(v)] = rank_cell_from_json(cell, t.ranks);
  return t;
}

/// Rows are conditions, columns probe views, cells rank-1 percent.
inline std::string per_view_csv(const ResultTable& t) {
  std::set<int> views;
  for (const auto& [c, row] : t.by_view)
    for (const auto& [v, cell] : row) views.insert(v);
  const int k = t.ranks.front();
  std::string out = "condition";
  for (int v : views) out += "," + std::to_string(v);
  out += "\n";
  for (const auto& [c, row] : t.by_view) {
    out += c;
    for (int v : views) {
      out += ",";
      auto it = row.find(v);
      if (it == row.end()) continue;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.1f", it->second.accuracy.at(k));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

inline void write_reports(const ResultTable& t, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  auto write = [](const std::filesystem::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << body;
    if (!out) throw IoError("write failed: " + p.string());
  };
  write(out_dir / "metrics.json", to_json(t).dump(2) + "\n");
  write(out_dir / "per_view.csv", per_view_csv(t));
}

inline ResultTable read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return result_table_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed metrics file " + path.string() + ": " + e.what());
  }
}

}  // namespace gaitsf
