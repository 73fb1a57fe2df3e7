#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gleason/core_model.hpp"
#include "gleason/eval_stats.hpp"
#include "gleason/stage1.hpp"
#include "gleason/stage2.hpp"
#include "gleason/synth.hpp"

namespace gleason {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

inline json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchema, what + ": " + e.what());
  }
}

// Runs fn, turning JSON type/key errors into schema violations.
template <typename Fn>
auto with_schema(const std::string& what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchema, what + ": " + e.what());
  }
}

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---- label masks: CSV grid of integer codes, one grid row per line ----

inline std::string write_label_mask_csv(const LabelMask& mask) {
  std::string out;
  for (std::size_t r = 0; r < mask.rows; ++r) {
    for (std::size_t c = 0; c < mask.cols; ++c) {
      if (c) out += ',';
      out += std::to_string(label_code(mask.at(r, c)));
    }
    out += '\n';
  }
  return out;
}

inline LabelMask read_label_mask_csv(std::string_view text, double stride_um = 32.0) {
  LabelMask mask;
  mask.stride_um = stride_um;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::size_t cols = 0;
    std::size_t start = 0;
    while (start <= line.size()) {
      std::size_t comma = line.find(',', start);
      if (comma == std::string_view::npos) comma = line.size();
      const std::string cell(line.substr(start, comma - start));
      int code = 0;
      try {
        std::size_t used = 0;
        code = std::stoi(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        fail(ErrorCode::kSchema, "label mask: bad cell '" + cell + "'");
      }
      mask.values.push_back(label_from_code(code));
      ++cols;
      start = comma + 1;
    }
    if (mask.rows == 0) mask.cols = cols;
    require(cols == mask.cols, ErrorCode::kSchema, "label mask: ragged rows");
    ++mask.rows;
  }
  require(mask.rows > 0, ErrorCode::kSchema, "label mask: empty");
  return mask;
}

// ---- likelihood maps: one JSON header line, then rows*cols quads of
// little-endian float32. Non-tissue patches are stored as all-zero quads. ----

inline constexpr const char* kLikelihoodFormat = "gleason-likelihood-map";

namespace io_detail {

inline void put_f32(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace io_detail

// Rounds likelihoods through float32 so an in-memory
// heatmap equals what a write/read cycle returns.
inline Prob4 to_storage_precision(const Prob4& p) {
  Prob4 out{};
  for (std::size_t i = 0; i < kNumPatterns; ++i) out[i] = static_cast<double>(static_cast<float>(p[i]));
  return out;
}

inline SlideHeatmap to_storage_precision(SlideHeatmap h) {
  for (auto& v : h.likelihoods.values) v = to_storage_precision(v);
  return h;
}

inline std::string write_heatmap(const SlideHeatmap& h) {
  json header = {{"format", kLikelihoodFormat},
                 {"version", 1},
                 {"rows", h.likelihoods.rows},
                 {"cols", h.likelihoods.cols},
                 {"stride_um", h.likelihoods.stride_um},
                 {"encoding", "float32-le"},
                 {"channels", {"non_tumor", "gp3", "gp4", "gp5"}}};
  std::string out = header.dump() + "\n";
  out.reserve(out.size() + h.likelihoods.size() * 16);
  for (std::size_t i = 0; i < h.likelihoods.size(); ++i) {
    for (std::size_t k = 0; k < kNumPatterns; ++k) {
      io_detail::put_f32(out, h.tissue[i] ? static_cast<float>(h.likelihoods[i][k]) : 0.0f);
    }
  }
  return out;
}

inline SlideHeatmap read_heatmap(std::string_view bytes) {
  const std::size_t eol = bytes.find('\n');
  require(eol != std::string_view::npos, ErrorCode::kSchema, "likelihood map: missing header line");
  const json header = parse_json(bytes.substr(0, eol), "likelihood map header");
  return with_schema("likelihood map header", [&] {
    require(header.at("format").get<std::string>() == kLikelihoodFormat, ErrorCode::kSchema,
            "likelihood map: wrong format tag");
    const auto rows = header.at("rows").get<std::size_t>();
    const auto cols = header.at("cols").get<std::size_t>();
    const auto stride = header.at("stride_um").get<double>();
    const std::string_view body = bytes.substr(eol + 1);
    require(body.size() == rows * cols * 16, ErrorCode::kSchema, "likelihood map: payload size mismatch");
    SlideHeatmap h{LikelihoodMap(rows, cols, Prob4{}, stride), TissueMask(rows, cols, 0, stride)};
    const auto* p = reinterpret_cast<const unsigned char*>(body.data());
    for (std::size_t i = 0; i < rows * cols; ++i) {
      Prob4 v{};
      bool any = false;
      for (std::size_t k = 0; k < kNumPatterns; ++k) {
        v[k] = io_detail::get_f32(p + 16 * i + 4 * k);
        any = any || v[k] != 0.0;
      }
      if (any) {
        require(is_probability_vector(v, 1e-5), ErrorCode::kSchema, "likelihood map: invalid probability vector");
        h.likelihoods[i] = v;
        h.tissue[i] = 1;
      } else {
        h.likelihoods[i] = one_hot(Pattern::kNonTumor);
      }
    }
    return h;
  });
}

// ---- clinical data: CSV slide_id,time_months,event ----

inline std::string write_clinical_csv(std::span<const ClinicalRecord> records) {
  std::string out = "slide_id,time_months,event\n";
  for (const auto& r : records) out += r.slide_id + "," + format_double(r.time) + "," + (r.event ? "1" : "0") + "\n";
  return out;
}

namespace io_detail {

inline std::vector<std::vector<std::string>> read_csv_rows(std::string_view text, std::string_view expected_header,
                                                           const std::string& what) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      require(line == expected_header, ErrorCode::kSchema, what + ": expected header '" + std::string(expected_header) + "'");
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  require(!header, ErrorCode::kSchema, what + ": missing header");
  return rows;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kSchema, what + ": bad number '" + s + "'");
  }
}

}  // namespace io_detail

inline std::vector<ClinicalRecord> read_clinical_csv(std::string_view text) {
  std::vector<ClinicalRecord> out;
  for (const auto& row : io_detail::read_csv_rows(text, "slide_id,time_months,event", "clinical csv")) {
    require(row.size() == 3, ErrorCode::kSchema, "clinical csv: expected 3 columns");
    ClinicalRecord r{row[0], io_detail::parse_double(row[1], "clinical csv"), row[2] == "1"};
    require(row[2] == "0" || row[2] == "1", ErrorCode::kSchema, "clinical csv: event must be 0 or 1");
    require(std::isfinite(r.time) && r.time > 0.0, ErrorCode::kSchema, "clinical csv: time must be positive");
    out.push_back(std::move(r));
  }
  return out;
}

// ---- pathologist ratings: CSV slide_id,rater_id,subgroup,grade_group ----

inline std::string write_ratings_csv(std::span<const RatingRow> rows) {
  std::string out = "slide_id,rater_id,subgroup,grade_group\n";
  for (const auto& r : rows) {
    out += r.slide_id + "," + r.rater_id + "," + subgroup_name(r.subgroup) + "," +
           std::to_string(grade_group_ordinal(r.grade)) + "\n";
  }
  return out;
}

inline std::vector<RatingRow> read_ratings_csv(std::string_view text) {
  std::vector<RatingRow> out;
  for (const auto& row : io_detail::read_csv_rows(text, "slide_id,rater_id,subgroup,grade_group", "ratings csv")) {
    require(row.size() == 4, ErrorCode::kSchema, "ratings csv: expected 4 columns");
    const double g = io_detail::parse_double(row[3], "ratings csv");
    out.push_back({row[0], row[1], subgroup_from_name(row[2]), grade_group_from_ordinal(static_cast<int>(g))});
  }
  return out;
}

// ---- dataset directory: manifest.json + masks/<id>.csv + clinical.csv +
// ratings.csv ----

inline json pcts_to_json(const GpPercentages& p) { return json::array({p.gp3, p.gp4, p.gp5}); }

inline GpPercentages pcts_from_json(const json& j) {
  require(j.is_array() && j.size() == 3, ErrorCode::kSchema, "percentages must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline void write_dataset(const fs::path& dir, const Dataset& ds, const json& provenance = json::object()) {
  json slides = json::array();
  for (std::size_t i = 0; i < ds.slides.size(); ++i) {
    const auto& s = ds.slides[i];
    const std::string mask_rel = "masks/" + s.slide_id + ".csv";
    write_file(dir / mask_rel, write_label_mask_csv(s.mask));
    json entry = {{"slide_id", s.slide_id},
                  {"split", split_name(ds.splits[i])},
                  {"rows", s.mask.rows},
                  {"cols", s.mask.cols},
                  {"stride_um", s.mask.stride_um},
                  {"resolution_um_per_px", s.resolution_um_per_px},
                  {"mask", mask_rel}};
    if (s.reference_gg) entry["reference_gg"] = grade_group_ordinal(*s.reference_gg);
    if (s.reference_pcts) entry["reference_pcts"] = pcts_to_json(*s.reference_pcts);
    if (i < ds.target_pcts.size()) entry["target_pcts"] = pcts_to_json(ds.target_pcts[i]);
    slides.push_back(std::move(entry));
  }
  json manifest = {{"format", "gleason-dataset"}, {"version", 1}, {"provenance", provenance}, {"slides", slides}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_file(dir / "clinical.csv", write_clinical_csv(ds.clinical));
  write_file(dir / "ratings.csv", write_ratings_csv(ds.ratings));
}

inline Dataset read_dataset(const fs::path& dir) {
  const json manifest = parse_json(read_file(dir / "manifest.json"), "manifest.json");
  Dataset ds;
  with_schema("manifest.json", [&] {
    require(manifest.at("format").get<std::string>() == "gleason-dataset", ErrorCode::kSchema,
            "manifest.json: wrong format tag");
    for (const auto& e : manifest.at("slides")) {
      SlideRecord s;
      s.slide_id = e.at("slide_id").get<std::string>();
      s.resolution_um_per_px = e.value("resolution_um_per_px", 0.25);
      s.mask = read_label_mask_csv(read_file(dir / e.at("mask").get<std::string>()), e.value("stride_um", 32.0));
      require(s.mask.rows == e.at("rows").get<std::size_t>() && s.mask.cols == e.at("cols").get<std::size_t>(),
              ErrorCode::kSchema, "manifest.json: mask dimensions disagree for " + s.slide_id);
      if (e.contains("reference_gg")) s.reference_gg = grade_group_from_ordinal(e.at("reference_gg").get<int>());
      if (e.contains("reference_pcts")) s.reference_pcts = pcts_from_json(e.at("reference_pcts"));
      ds.target_pcts.push_back(e.contains("target_pcts") ? pcts_from_json(e.at("target_pcts")) : GpPercentages{});
      ds.splits.push_back(split_from_name(e.at("split").get<std::string>()));
      ds.slides.push_back(std::move(s));
    }
    return 0;
  });
  if (fs::exists(dir / "clinical.csv")) ds.clinical = read_clinical_csv(read_file(dir / "clinical.csv"));
  if (fs::exists(dir / "ratings.csv")) ds.ratings = read_ratings_csv(read_file(dir / "ratings.csv"));
  return ds;
}

// ---- grader model JSON ----

inline json model_to_json(const GraderModel& m, const CalibrationFit* fit = nullptr) {
  json points = json::array();
  for (std::size_t i = 0; i < m.grade_group.points.size(); ++i) {
    const auto& p = m.grade_group.points[i];
    points.push_back({{"x", {p[0], p[1], p[2], p[3]}}, {"gg", m.grade_group.labels[i] + 1}});
  }
  json j = {{"format", "gleason-grader-model"},
            {"version", 1},
            {"calibration_weights", m.calibration.w},
            {"rescaler", {{"features", {"pct_tumor", "pct_gp3", "pct_gp4", "pct_gp5"}},
                          {"min", m.rescaler.min},
                          {"max", m.rescaler.max}}},
            {"k", m.grade_group.k},
            {"weighting", "uniform"},
            {"binary_thresholds", kBinaryThresholds},
            {"training_points", points}};
  if (fit) j["calibration_tuning_kappa"] = fit->kappa;
  return j;
}

inline GraderModel model_from_json(const json& j) {
  return with_schema("model json", [&] {
    require(j.at("format").get<std::string>() == "gleason-grader-model", ErrorCode::kSchema,
            "model json: wrong format tag");
    GraderModel m;
    const auto w = j.at("calibration_weights").get<std::vector<double>>();
    require(w.size() == 4, ErrorCode::kSchema, "model json: calibration_weights needs 4 entries");
    for (std::size_t i = 0; i < 4; ++i) {
      require(w[i] > 0.0, ErrorCode::kSchema, "model json: calibration weights must be positive");
      m.calibration.w[i] = w[i];
    }
    const auto lo = j.at("rescaler").at("min").get<std::vector<double>>();
    const auto hi = j.at("rescaler").at("max").get<std::vector<double>>();
    require(lo.size() == 4 && hi.size() == 4, ErrorCode::kSchema, "model json: rescaler bounds need 4 entries");
    for (std::size_t i = 0; i < 4; ++i) {
      require(hi[i] >= lo[i], ErrorCode::kSchema, "model json: rescaler max below min");
      m.rescaler.min[i] = lo[i];
      m.rescaler.max[i] = hi[i];
    }
    std::vector<Point4> points;
    std::vector<GradeGroup> labels;
    for (const auto& p : j.at("training_points")) {
      const auto x = p.at("x").get<std::vector<double>>();
      require(x.size() == 4, ErrorCode::kSchema, "model json: training point needs 4 coordinates");
      points.push_back({x[0], x[1], x[2], x[3]});
      labels.push_back(grade_group_from_ordinal(p.at("gg").get<int>()));
    }
    const auto k = j.at("k").get<std::size_t>();
    m.grade_group = fit_knn(points, labels, k);
    for (std::size_t t = 0; t < 3; ++t) m.binary[t] = fit_binary_knn(points, labels, kBinaryThresholds[t], k);
    return m;
  });
}

}  // namespace gleason
