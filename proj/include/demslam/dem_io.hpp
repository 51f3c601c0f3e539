#pragma once

// ESRI ASCII grid (.asc) reader/writer and the optional JSON sidecar that
// carries the DEM's vertical accuracy.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "demslam/dem.hpp"
#include "demslam/error.hpp"

namespace demslam {

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view token) {
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) return std::nullopt;
  return value;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace detail

/// Parses an ESRI ASCII grid. The lower-left corner is converted to the
/// centre of cell (0, 0); the first data row is the northernmost.
inline DemGrid parse_ascii_grid(std::istream& in) {
  std::map<std::string, double> header;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) -> Error {
    return Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": " + what);
  };

  // Header: "key value" lines until the first numeric row.
  std::optional<std::string> first_data_line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = detail::split_ws(line);
    if (tokens.empty()) continue;
    if (detail::parse_double(tokens[0])) {
      first_data_line = line;
      break;
    }
    if (tokens.size() != 2) throw fail("malformed header line '" + line + "'");
    const auto value = detail::parse_double(tokens[1]);
    if (!value) throw fail("non-numeric header value '" + std::string(tokens[1]) + "'");
    header[detail::lower(tokens[0])] = *value;
  }

  auto require = [&](const std::string& key) {
    const auto it = header.find(key);
    if (it == header.end()) throw fail("missing header key '" + key + "'");
    return it->second;
  };
  const double ncols_d = require("ncols");
  const double nrows_d = require("nrows");
  const double cell = require("cellsize");
  if (ncols_d != std::floor(ncols_d) || nrows_d != std::floor(nrows_d) || ncols_d < 1 ||
      nrows_d < 1) {
    throw fail("ncols/nrows must be positive integers");
  }
  const int ncols = static_cast<int>(ncols_d);
  const int nrows = static_cast<int>(nrows_d);

  double origin_x = 0.0;
  double origin_y = 0.0;
  if (header.contains("xllcenter")) {
    origin_x = header["xllcenter"];
  } else {
    origin_x = require("xllcorner") + 0.5 * cell;
  }
  if (header.contains("yllcenter")) {
    origin_y = header["yllcenter"];
  } else {
    origin_y = require("yllcorner") + 0.5 * cell;
  }
  const double nodata = header.contains("nodata_value") ? header["nodata_value"] : kDefaultNoData;

  std::vector<double> heights(static_cast<std::size_t>(nrows) * ncols);
  int row = 0;
  auto consume = [&](const std::string& text) {
    const auto tokens = detail::split_ws(text);
    if (tokens.empty()) return;
    if (row >= nrows) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "line " + std::to_string(line_no) + ": more than " + std::to_string(nrows) +
                      " data rows");
    }
    if (static_cast<int>(tokens.size()) != ncols) {
      throw fail("expected " + std::to_string(ncols) + " values, found " +
                 std::to_string(tokens.size()));
    }
    // File row 0 is the northern edge; internal row 0 is the southern edge.
    const std::size_t base = static_cast<std::size_t>(nrows - 1 - row) * ncols;
    for (int c = 0; c < ncols; ++c) {
      const auto v = detail::parse_double(tokens[c]);
      if (!v) throw fail("bad value '" + std::string(tokens[c]) + "'");
      heights[base + c] = *v;
    }
    ++row;
  };
  if (first_data_line) consume(*first_data_line);
  while (std::getline(in, line)) {
    ++line_no;
    consume(line);
  }
  if (row != nrows) {
    throw Error(ErrorCode::kDimensionMismatch, "expected " + std::to_string(nrows) +
                                                   " data rows, found " + std::to_string(row));
  }
  return {origin_x, origin_y, cell, nrows, ncols, std::move(heights), nodata};
}

inline DemGrid load_ascii_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return parse_ascii_grid(in);
}

/// Heights are written with 17 significant digits, so a reload is bit-exact.
inline void write_ascii_grid(const DemGrid& dem, std::ostream& out) {
  const double half = 0.5 * dem.cell_size();
  out << "ncols " << dem.n_cols() << '\n'
      << "nrows " << dem.n_rows() << '\n'
      << "xllcorner " << detail::format_double(dem.origin_x() - half) << '\n'
      << "yllcorner " << detail::format_double(dem.origin_y() - half) << '\n'
      << "cellsize " << detail::format_double(dem.cell_size()) << '\n'
      << "NODATA_value " << detail::format_double(dem.nodata()) << '\n';
  for (int r = dem.n_rows() - 1; r >= 0; --r) {
    for (int c = 0; c < dem.n_cols(); ++c) {
      if (c > 0) out << ' ';
      out << detail::format_double(dem.height(r, c));
    }
    out << '\n';
  }
}

inline void save_ascii_grid(const DemGrid& dem, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  write_ascii_grid(dem, out);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Sidecar metadata: <name>.json next to <name>.asc.
// ---------------------------------------------------------------------------

struct DemMetadata {
  std::string frame = "local-ENU";
  std::optional<double> vertical_rmse_m;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& asc_path) {
  std::filesystem::path p = asc_path;
  p.replace_extension(".json");
  return p;
}

inline void save_sidecar(const DemMetadata& meta, const std::filesystem::path& asc_path) {
  nlohmann::ordered_json j;
  j["frame"] = meta.frame;
  if (meta.vertical_rmse_m) j["vertical_rmse_m"] = *meta.vertical_rmse_m;
  std::ofstream out(sidecar_path(asc_path));
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + sidecar_path(asc_path).string());
  out << j.dump(2) << '\n';
}

/// Returns nullopt when no sidecar exists.
inline std::optional<DemMetadata> load_sidecar(const std::filesystem::path& asc_path) {
  const auto path = sidecar_path(asc_path);
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
  DemMetadata meta;
  if (j.contains("frame")) meta.frame = j.at("frame").get<std::string>();
  if (j.contains("vertical_rmse_m") && !j.at("vertical_rmse_m").is_null()) {
    const double v = j.at("vertical_rmse_m").get<double>();
    if (!(v > 0.0)) throw Error(ErrorCode::kParseError, "vertical_rmse_m must be positive");
    meta.vertical_rmse_m = v;
  }
  return meta;
}

}  // namespace demslam
