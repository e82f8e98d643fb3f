#pragma once

// Top-K recall over a ground-query x aerial-gallery distance matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xview/error.hpp"
#include "xview/metric.hpp"

namespace xview {

/// 1-based rank of the true match (gallery index == query index) in ascending distance order,
/// ties broken by smaller gallery index.
inline std::size_t true_match_rank(const DistanceMatrix& d, std::size_t query) {
  if (query >= d.rows || query >= d.cols) throw ShapeError("query has no ground-truth gallery item");
  const double target = d(query, query);
  std::size_t rank = 1;
  for (std::size_t g = 0; g < d.cols; ++g) {
    if (g == query) continue;
    const double v = d(query, g);
    if (v < target || (v == target && g < query)) ++rank;
  }
  return rank;
}

inline double recall_at_k(const DistanceMatrix& d, std::size_t k) {
  if (d.rows == 0 || d.cols == 0) throw ShapeError("empty distance matrix");
  if (d.rows > d.cols) throw ShapeError("more queries than gallery items; ground truth is gallery index == query index");
  if (k < 1 || k > d.cols) {
    throw ConfigError("k must lie in [1, " + std::to_string(d.cols) + "], got " + std::to_string(k));
  }
  std::size_t hits = 0;
  for (std::size_t q = 0; q < d.rows; ++q) hits += true_match_rank(d, q) <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(d.rows);
}

/// K for r@1%: max(1, floor(0.01 N)).
inline std::size_t one_percent_k(std::size_t gallery_size) {
  if (gallery_size < 1) throw ConfigError("gallery size must be at least 1");
  return std::max<std::size_t>(1, gallery_size / 100);
}

struct RecallEntry {
  std::string label;
  std::size_t k = 0;  // effective k, clamped to the gallery size
  double recall = 0.0;

  friend bool operator==(const RecallEntry&, const RecallEntry&) = default;
};

struct RecallReport {
  double fov_deg = 360.0;
  double trained_fov_deg = 360.0;
  std::size_t gallery_size = 0;
  std::size_t query_count = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<RecallEntry> recalls;

  const RecallEntry& at(const std::string& label) const {
    for (const auto& r : recalls)
      if (r.label == label) return r;
    throw ConfigError("report has no recall labelled '" + label + "'");
  }

  friend bool operator==(const RecallReport&, const RecallReport&) = default;
};

/// r@1, r@5, r@10 and r@1%, in that order. K values above the gallery size are clamped to it.
inline RecallReport recall_report(const DistanceMatrix& d, double fov_deg, double trained_fov_deg = 360.0,
                                  std::string config_hash = {}, std::uint64_t seed = 0) {
  const std::size_t n = d.cols;
  if (n < 1) throw ConfigError("gallery size must be at least 1");
  RecallReport r;
  r.fov_deg = fov_deg;
  r.trained_fov_deg = trained_fov_deg;
  r.gallery_size = n;
  r.query_count = d.rows;
  r.config_hash = std::move(config_hash);
  r.seed = seed;
  for (auto [label, k] : {std::pair<std::string, std::size_t>{"r@1", 1}, {"r@5", 5}, {"r@10", 10},
                          {"r@1%", one_percent_k(n)}}) {
    const std::size_t kk = std::min(k, n);
    r.recalls.push_back({label, kk, recall_at_k(d, kk)});
  }
  return r;
}

inline nlohmann::json report_to_json(const RecallReport& r) {
  nlohmann::json j;
  j["fov_deg"] = r.fov_deg;
  j["trained_fov_deg"] = r.trained_fov_deg;
  j["gallery_size"] = r.gallery_size;
  j["query_count"] = r.query_count;
  j["provenance"] = {{"config_hash", r.config_hash}, {"seed", r.seed}};
  j["recalls"] = nlohmann::json::array();
  for (const auto& e : r.recalls) j["recalls"].push_back({{"label", e.label}, {"k", e.k}, {"recall", e.recall}});
  return j;
}

inline RecallReport report_from_json(const nlohmann::json& j) {
  try {
    RecallReport r;
    r.fov_deg = j.at("fov_deg").get<double>();
    r.trained_fov_deg = j.at("trained_fov_deg").get<double>();
    r.gallery_size = j.at("gallery_size").get<std::size_t>();
    r.query_count = j.at("query_count").get<std::size_t>();
    r.config_hash = j.at("provenance").at("config_hash").get<std::string>();
    r.seed = j.at("provenance").at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("recalls")) {
      r.recalls.push_back({e.at("label").get<std::string>(), e.at("k").get<std::size_t>(), e.at("recall").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed recall report JSON: ") + e.what());
  }
}

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

/// CSV body "fov,k,label,recall", preceded by "# key=value" metadata lines.
inline std::string report_to_csv(const RecallReport& r) {
  std::ostringstream os;
  os << "# trained_fov=" << detail::format_double(r.trained_fov_deg) << "\n";
  os << "# gallery_size=" << r.gallery_size << "\n";
  os << "# query_count=" << r.query_count << "\n";
  os << "# config_hash=" << r.config_hash << "\n";
  os << "# seed=" << r.seed << "\n";
  os << "fov,k,label,recall\n";
  for (const auto& e : r.recalls) {
    os << detail::format_double(r.fov_deg) << ',' << e.k << ',' << e.label << ',' << detail::format_double(e.recall)
       << "\n";
  }
  return os.str();
}

inline RecallReport report_from_csv(const std::string& text) {
  RecallReport r;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line.starts_with("# ")) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const auto key = line.substr(2, eq - 2);
        const auto value = line.substr(eq + 1);
        if (key == "trained_fov") r.trained_fov_deg = std::stod(value);
        else if (key == "gallery_size") r.gallery_size = std::stoull(value);
        else if (key == "query_count") r.query_count = std::stoull(value);
        else if (key == "config_hash") r.config_hash = value;
        else if (key == "seed") r.seed = std::stoull(value);
        continue;
      }
      if (!header) {
        if (line != "fov,k,label,recall") throw FormatError("report CSV header mismatch");
        header = true;
        continue;
      }
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
      if (f.size() != 4) throw FormatError("malformed report CSV row '" + line + "'");
      r.fov_deg = std::stod(f[0]);
      r.recalls.push_back({f[2], std::stoull(f[1]), std::stod(f[3])});
    }
  } catch (const std::logic_error&) {
    throw FormatError("malformed number in report CSV");
  }
  if (!header) throw FormatError("report CSV lacks a header");
  return r;
}

inline const std::vector<std::string>& supported_report_formats() {
  static const std::vector<std::string> f = {"csv", "json"};
  return f;
}

inline void emit_report(const RecallReport& r, const std::string& format, const std::filesystem::path& path) {
  std::string body;
  if (format == "csv") body = report_to_csv(r);
  else if (format == "json") body = report_to_json(r).dump(2) + "\n";
  else throw ConfigError("unknown report format '" + format + "' (supported: csv, json)");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report '" + path.string() + "'");
  out << body;
  if (!out) throw IoError("short write to report '" + path.string() + "'");
}

inline RecallReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  if (path.extension() == ".json") {
    try {
      return report_from_json(nlohmann::json::parse(ss.str()));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("invalid report JSON: ") + e.what());
    }
  }
  return report_from_csv(ss.str());
}

}  // namespace xview
