#pragma once

#include <cmath>
#include <cstddef>
#include <array>
#include <cstdint>

#include "gleason/error.hpp"

namespace gleason {

// Maps slide pixel coordinates to patch-grid cells. At 0.25 um/px a
// 32 um patch is 128 px wide.
struct PatchGeometry {
  double um_per_px = 0.25;
  double stride_um = 32.0;

  double stride_px() const {
    require(um_per_px > 0.0 && stride_um > 0.0, ErrorCode::kInvalidArgument, "geometry needs positive scales");
    return stride_um / um_per_px;
  }

  struct Cell {
    std::size_t row = 0;
    std::size_t col = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
  };

  Cell cell_of_pixel(double x, double y) const {
    require(x >= 0.0 && y >= 0.0, ErrorCode::kInvalidArgument, "pixel coordinates must be non-negative");
    const double s = stride_px();
    return {static_cast<std::size_t>(std::floor(y / s)), static_cast<std::size_t>(std::floor(x / s))};
  }

  // Top-left pixel of a cell.
  std::array<double, 2> pixel_origin(Cell c) const {
    const double s = stride_px();
    return {static_cast<double>(c.col) * s, static_cast<double>(c.row) * s};
  }

  std::array<double, 2> pixel_center(Cell c) const {
    const auto o = pixel_origin(c);
    const double h = stride_px() / 2.0;
    return {o[0] + h, o[1] + h};
  }

  // Grid covering a width x height pixel image, partial patches included.
  Cell grid_shape(std::size_t width_px, std::size_t height_px) const {
    const double s = stride_px();
    return {static_cast<std::size_t>(std::ceil(static_cast<double>(height_px) / s)),
            static_cast<std::size_t>(std::ceil(static_cast<double>(width_px) / s))};
  }
};

}  // namespace gleason
