#pragma once

// Raster digital elevation model with bilinear queries.
//
// Heights are cell-centre samples. Row r, column c sits at
//   x = origin_x + c * cell_size,  y = origin_y + r * cell_size,
// so row 0 is the southern edge of the grid.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "demslam/error.hpp"
#include "demslam/geometry.hpp"

namespace demslam {

using Vector2 = Eigen::Vector2d;

inline constexpr double kDefaultNoData = -9999.0;

class DemGrid {
 public:
  DemGrid(double origin_x, double origin_y, double cell_size, int n_rows, int n_cols,
          std::vector<double> heights, double nodata = kDefaultNoData)
      : origin_x_(origin_x),
        origin_y_(origin_y),
        cell_size_(cell_size),
        n_rows_(n_rows),
        n_cols_(n_cols),
        nodata_(nodata),
        heights_(std::move(heights)) {
    if (!(cell_size_ > 0.0) || !std::isfinite(cell_size_)) {
      throw Error(ErrorCode::kInvalidArgument, "cell_size must be positive");
    }
    if (n_rows_ < 2 || n_cols_ < 2) {
      throw Error(ErrorCode::kInvalidArgument, "grid needs at least 2x2 cells");
    }
    if (heights_.size() != static_cast<std::size_t>(n_rows_) * static_cast<std::size_t>(n_cols_)) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "expected " + std::to_string(n_rows_ * n_cols_) + " heights, got " +
                      std::to_string(heights_.size()));
    }
    for (double h : heights_) {
      if (!is_nodata(h) && !std::isfinite(h)) {
        throw Error(ErrorCode::kInvalidArgument, "non-finite height in DEM");
      }
    }
    compute_gradients();
  }

  /// Grid whose every sample is produced by f(x, y) at the cell centres.
  template <typename F>
  static DemGrid sampled(double origin_x, double origin_y, double cell_size, int n_rows,
                         int n_cols, F&& f) {
    std::vector<double> h(static_cast<std::size_t>(n_rows) * n_cols);
    for (int r = 0; r < n_rows; ++r) {
      for (int c = 0; c < n_cols; ++c) {
        h[static_cast<std::size_t>(r) * n_cols + c] =
            f(origin_x + c * cell_size, origin_y + r * cell_size);
      }
    }
    return {origin_x, origin_y, cell_size, n_rows, n_cols, std::move(h)};
  }

  [[nodiscard]] double origin_x() const { return origin_x_; }
  [[nodiscard]] double origin_y() const { return origin_y_; }
  [[nodiscard]] double cell_size() const { return cell_size_; }
  [[nodiscard]] int n_rows() const { return n_rows_; }
  [[nodiscard]] int n_cols() const { return n_cols_; }
  [[nodiscard]] double nodata() const { return nodata_; }
  [[nodiscard]] double max_x() const { return origin_x_ + (n_cols_ - 1) * cell_size_; }
  [[nodiscard]] double max_y() const { return origin_y_ + (n_rows_ - 1) * cell_size_; }

  [[nodiscard]] const std::vector<double>& heights() const { return heights_; }
  [[nodiscard]] const std::vector<double>& grad_x() const { return grad_x_; }
  [[nodiscard]] const std::vector<double>& grad_y() const { return grad_y_; }

  [[nodiscard]] double height(int row, int col) const { return heights_[index(row, col)]; }

  [[nodiscard]] bool is_nodata(double h) const { return h == nodata_ || std::isnan(h); }

  /// Copy of this grid with new height samples; gradients are rebuilt.
  [[nodiscard]] DemGrid with_heights(std::vector<double> heights) const {
    return {origin_x_, origin_y_, cell_size_, n_rows_, n_cols_, std::move(heights), nodata_};
  }

  /// Copy of this grid registered at a different origin.
  [[nodiscard]] DemGrid with_origin(double origin_x, double origin_y) const {
    DemGrid out = *this;
    out.origin_x_ = origin_x;
    out.origin_y_ = origin_y;
    return out;
  }

  /// Inside the hull of cell centres.
  [[nodiscard]] bool contains(double x, double y) const {
    const double u = (x - origin_x_) / cell_size_;
    const double v = (y - origin_y_) / cell_size_;
    return u >= 0.0 && v >= 0.0 && u <= n_cols_ - 1 && v <= n_rows_ - 1;
  }

  /// True when height_at/gradient_at/normal_at would succeed.
  [[nodiscard]] bool queryable(double x, double y) const {
    if (!contains(x, y)) return false;
    const Stencil s = stencil(x, y);
    for (const std::size_t k : s.cells()) {
      if (is_nodata(heights_[k]) || std::isnan(grad_x_[k]) || std::isnan(grad_y_[k])) {
        return false;
      }
    }
    return true;
  }

  [[nodiscard]] double height_at(double x, double y) const {
    return interpolate(heights_, checked_stencil(x, y));
  }

  [[nodiscard]] Vector2 gradient_at(double x, double y) const {
    const Stencil s = checked_stencil(x, y);
    return {interpolate(grad_x_, s), interpolate(grad_y_, s)};
  }

  [[nodiscard]] Vector3 normal_at(double x, double y) const {
    const Vector2 g = gradient_at(x, y);
    return Vector3(-g.x(), -g.y(), 1.0) / std::sqrt(g.squaredNorm() + 1.0);
  }

 private:
  struct Stencil {
    std::size_t k00;  // (r0, c0)
    std::size_t k01;  // (r0, c0 + 1)
    std::size_t k10;  // (r0 + 1, c0)
    std::size_t k11;
    double fx;
    double fy;

    [[nodiscard]] std::array<std::size_t, 4> cells() const { return {k00, k01, k10, k11}; }
  };

  [[nodiscard]] std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(n_cols_) +
           static_cast<std::size_t>(col);
  }

  [[nodiscard]] Stencil stencil(double x, double y) const {
    const double u = (x - origin_x_) / cell_size_;
    const double v = (y - origin_y_) / cell_size_;
    const int c0 = std::min(static_cast<int>(std::floor(u)), n_cols_ - 2);
    const int r0 = std::min(static_cast<int>(std::floor(v)), n_rows_ - 2);
    return {index(r0, c0), index(r0, c0 + 1), index(r0 + 1, c0), index(r0 + 1, c0 + 1),
            u - c0, v - r0};
  }

  [[nodiscard]] Stencil checked_stencil(double x, double y) const {
    if (!contains(x, y)) {
      throw Error(ErrorCode::kOutOfBounds,
                  "query (" + std::to_string(x) + ", " + std::to_string(y) + ") outside DEM");
    }
    const Stencil s = stencil(x, y);
    for (const std::size_t k : s.cells()) {
      if (is_nodata(heights_[k]) || std::isnan(grad_x_[k]) || std::isnan(grad_y_[k])) {
        throw Error(ErrorCode::kNoData,
                    "query (" + std::to_string(x) + ", " + std::to_string(y) + ") touches nodata");
      }
    }
    return s;
  }

  static double interpolate(const std::vector<double>& f, const Stencil& s) {
    return (1.0 - s.fy) * ((1.0 - s.fx) * f[s.k00] + s.fx * f[s.k01]) +
           s.fy * ((1.0 - s.fx) * f[s.k10] + s.fx * f[s.k11]);
  }

  // Central differences where both neighbours are valid, one-sided otherwise.
  // A cell with no valid neighbour along an axis gets NaN and is unqueryable.
  void compute_gradients() {
    grad_x_.assign(heights_.size(), 0.0);
    grad_y_.assign(heights_.size(), 0.0);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto diff = [&](int r, int c, int dr, int dc) {
      const double h = heights_[index(r, c)];
      if (is_nodata(h)) return nan;
      const int rm = r - dr, cm = c - dc, rp = r + dr, cp = c + dc;
      const bool has_m = rm >= 0 && cm >= 0 && !is_nodata(heights_[index(rm, cm)]);
      const bool has_p = rp < n_rows_ && cp < n_cols_ && !is_nodata(heights_[index(rp, cp)]);
      if (has_m && has_p) {
        return (heights_[index(rp, cp)] - heights_[index(rm, cm)]) / (2.0 * cell_size_);
      }
      if (has_p) return (heights_[index(rp, cp)] - h) / cell_size_;
      if (has_m) return (h - heights_[index(rm, cm)]) / cell_size_;
      return nan;
    };
    for (int r = 0; r < n_rows_; ++r) {
      for (int c = 0; c < n_cols_; ++c) {
        grad_x_[index(r, c)] = diff(r, c, 0, 1);
        grad_y_[index(r, c)] = diff(r, c, 1, 0);
      }
    }
  }

  double origin_x_;
  double origin_y_;
  double cell_size_;
  int n_rows_;
  int n_cols_;
  double nodata_;
  std::vector<double> heights_;
  std::vector<double> grad_x_;
  std::vector<double> grad_y_;
};

}  // namespace demslam
