#pragma once

// Controlled DEM corruption: spatially correlated vertical noise, constant
// vertical bias and horizontal misregistration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "demslam/dem.hpp"
#include "demslam/error.hpp"
#include "demslam/rng.hpp"

namespace demslam {

namespace detail {

// One separable pass of a truncated Gaussian blur along rows (stride 1) or
// columns (stride n_cols). Weights are renormalized over the in-grid part of
// the kernel, so edges are not darkened.
inline std::vector<double> blur_pass(const std::vector<double>& in, int n_rows, int n_cols,
                                     const std::vector<double>& kernel, bool along_rows) {
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> out(in.size());
  const int n_outer = along_rows ? n_rows : n_cols;
  const int n_inner = along_rows ? n_cols : n_rows;
  for (int o = 0; o < n_outer; ++o) {
    for (int i = 0; i < n_inner; ++i) {
      const int lo = std::max(0, i - radius);
      const int hi = std::min(n_inner - 1, i + radius);
      double acc = 0.0;
      double wsum = 0.0;
      for (int k = lo; k <= hi; ++k) {
        const double w = kernel[static_cast<std::size_t>(k - i + radius)];
        const std::size_t idx = along_rows
                                    ? static_cast<std::size_t>(o) * n_cols + k
                                    : static_cast<std::size_t>(k) * n_cols + o;
        acc += w * in[idx];
        wsum += w;
      }
      const std::size_t out_idx = along_rows ? static_cast<std::size_t>(o) * n_cols + i
                                             : static_cast<std::size_t>(i) * n_cols + o;
      out[out_idx] = acc / wsum;
    }
  }
  return out;
}

}  // namespace detail

/// Smooth Gaussian random field: white noise blurred by an isotropic Gaussian
/// kernel whose standard deviation is `correlation_length` (meters), then
/// shifted and scaled to zero sample mean and sample RMS exactly `rms`.
/// Row-major, same layout as DemGrid heights.
inline std::vector<double> correlated_field(int n_rows, int n_cols, double cell_size, double rms,
                                            double correlation_length, std::uint64_t seed) {
  if (n_rows < 1 || n_cols < 1 || !(cell_size > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "bad field dimensions");
  }
  if (!(rms >= 0.0) || !(correlation_length > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "need rms >= 0 and correlation_length > 0");
  }
  const std::size_t n = static_cast<std::size_t>(n_rows) * n_cols;
  if (rms == 0.0) return std::vector<double>(n, 0.0);

  Rng rng(seed);
  std::vector<double> field(n);
  for (double& v : field) v = standard_normal(rng);

  const double sigma_cells = correlation_length / cell_size;
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma_cells)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] =
        std::exp(-0.5 * (k * k) / (sigma_cells * sigma_cells));
  }
  field = detail::blur_pass(field, n_rows, n_cols, kernel, true);
  field = detail::blur_pass(field, n_rows, n_cols, kernel, false);

  double mean = 0.0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double& v : field) {
    v -= mean;
    ss += v * v;
  }
  const double current = std::sqrt(ss / static_cast<double>(n));
  if (!(current > 0.0)) throw Error(ErrorCode::kInvalidArgument, "degenerate random field");
  const double scale = rms / current;
  for (double& v : field) v *= scale;
  return field;
}

struct CorrelatedNoise {
  double rms = 0.0;
  double correlation_length = 10.0;
};

struct VerticalBias {
  double offset = 0.0;
};

struct HorizontalShift {
  double dx = 0.0;
  double dy = 0.0;
};

struct PerturbationSpec {
  std::variant<CorrelatedNoise, VerticalBias, HorizontalShift> kind;
  std::uint64_t seed = 0;
};

/// Short, filename-safe name such as "corr_noise_0.5", "bias_+1", "shift_x0.5".
inline std::string perturbation_label(const PerturbationSpec& spec) {
  char buf[96];
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, CorrelatedNoise>) {
          std::snprintf(buf, sizeof(buf), "corr_noise_%g", p.rms);
        } else if constexpr (std::is_same_v<T, VerticalBias>) {
          std::snprintf(buf, sizeof(buf), "bias_%+g", p.offset);
        } else {
          if (p.dy == 0.0) {
            std::snprintf(buf, sizeof(buf), "shift_x%g", p.dx);
          } else {
            std::snprintf(buf, sizeof(buf), "shift_x%g_y%g", p.dx, p.dy);
          }
        }
      },
      spec.kind);
  return buf;
}

/// Returns a new grid; the input is never modified.
///   CorrelatedNoise: adds a correlated_field to every valid height.
///   VerticalBias:    adds a constant to every valid height.
///   HorizontalShift: moves the origin by (-dx, -dy), so a query at (x, y)
///                    reads the surface formerly at (x + dx, y + dy).
inline DemGrid apply_perturbation(const DemGrid& dem, const PerturbationSpec& spec) {
  return std::visit(
      [&](const auto& p) -> DemGrid {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, CorrelatedNoise>) {
          const auto field = correlated_field(dem.n_rows(), dem.n_cols(), dem.cell_size(), p.rms,
                                              p.correlation_length, spec.seed);
          std::vector<double> h = dem.heights();
          for (std::size_t k = 0; k < h.size(); ++k) {
            if (!dem.is_nodata(h[k])) h[k] += field[k];
          }
          return dem.with_heights(std::move(h));
        } else if constexpr (std::is_same_v<T, VerticalBias>) {
          std::vector<double> h = dem.heights();
          for (double& v : h) {
            if (!dem.is_nodata(v)) v += p.offset;
          }
          return dem.with_heights(std::move(h));
        } else {
          return dem.with_origin(dem.origin_x() - p.dx, dem.origin_y() - p.dy);
        }
      },
      spec.kind);
}

}  // namespace demslam
