#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <vector>

#include "patchda/error.hpp"
#include "patchda/tensor.hpp"

// Differentiable bilinear sampling and continuous-center patch cropping.
//
// Coordinates are lattice coordinates: pixel (row y, column x) sits at the
// integer point (x, y). A patch of side P centered at normalized (cx, cy)
// covers the pixel-area window [cx*W - P/2, cx*W + P/2); its output pixel
// (i, j) samples the lattice point (x0 + j, y0 + i) with x0 = cx*W - P/2.
namespace patchda::sampler {

template <std::floating_point T>
struct BasicImageGrid {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;  // C x H x W

  BasicImageGrid() = default;
  BasicImageGrid(int c, int h, int w, std::vector<T> values)
      : channels(c), height(h), width(w), data(std::move(values)) {
    if (c < 1 || h < 2 || w < 2) throw InvalidInput("image grid needs C >= 1, H >= 2, W >= 2");
    if (data.size() != static_cast<std::size_t>(c) * h * w)
      throw InvalidInput("image grid payload does not match C x H x W");
    for (T v : data)
      if (!std::isfinite(v)) throw InvalidInput("image grid holds a non-finite value");
  }

  T at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

using ImageGrid = BasicImageGrid<float>;

struct PatchSpec {
  double cx = 0.5;
  double cy = 0.5;
  int size_px = 1;
};

template <std::floating_point T>
struct Point {
  T x;
  T y;
};

// Lattice neighbors and weights for one (already clamped) sample location.
template <std::floating_point T>
struct BilinearTap {
  int x0, y0;  // x1 = x0 + 1, y1 = y0 + 1
  T wx, wy;
  bool x_inside, y_inside;  // false when the coordinate was clipped
};

template <std::floating_point T>
BilinearTap<T> bilinear_tap(T x, T y, int height, int width) {
  if (!std::isfinite(x) || !std::isfinite(y))
    throw InvalidInput("bilinear sample at a non-finite coordinate");
  const T max_x = static_cast<T>(width - 1);
  const T max_y = static_cast<T>(height - 1);
  BilinearTap<T> tap{};
  tap.x_inside = x >= T(0) && x <= max_x;
  tap.y_inside = y >= T(0) && y <= max_y;
  const T cxp = std::clamp(x, T(0), max_x);
  const T cyp = std::clamp(y, T(0), max_y);
  tap.x0 = std::min(static_cast<int>(std::floor(cxp)), width - 2);
  tap.y0 = std::min(static_cast<int>(std::floor(cyp)), height - 2);
  tap.wx = cxp - static_cast<T>(tap.x0);
  tap.wy = cyp - static_cast<T>(tap.y0);
  return tap;
}

template <std::floating_point T>
T sample_channel(const BasicImageGrid<T>& img, int c, const BilinearTap<T>& t) {
  const T v00 = img.at(c, t.y0, t.x0), v01 = img.at(c, t.y0, t.x0 + 1);
  const T v10 = img.at(c, t.y0 + 1, t.x0), v11 = img.at(c, t.y0 + 1, t.x0 + 1);
  return (T(1) - t.wy) * ((T(1) - t.wx) * v00 + t.wx * v01) +
         t.wy * ((T(1) - t.wx) * v10 + t.wx * v11);
}

// Returns points.size() x C values, point-major.
template <std::floating_point T>
std::vector<T> bilinear_sample(const BasicImageGrid<T>& image, std::span<const Point<T>> points) {
  std::vector<T> out;
  out.reserve(points.size() * image.channels);
  for (const auto& p : points) {
    const auto tap = bilinear_tap(p.x, p.y, image.height, image.width);
    for (int c = 0; c < image.channels; ++c) out.push_back(sample_channel(image, c, tap));
  }
  return out;
}

template <std::floating_point T>
struct SampleGradients {
  std::vector<T> image;   // C x H x W
  std::vector<T> points;  // per point (d/dx, d/dy)
};

// Vector-Jacobian product of bilinear_sample for upstream (points x C).
template <std::floating_point T>
SampleGradients<T> bilinear_sample_backward(const BasicImageGrid<T>& image,
                                            std::span<const Point<T>> points,
                                            std::span<const T> upstream) {
  if (upstream.size() != points.size() * image.channels)
    throw InvalidInput("bilinear_sample_backward upstream size mismatch");
  SampleGradients<T> g;
  g.image.assign(image.data.size(), T(0));
  g.points.assign(points.size() * 2, T(0));
  const auto idx = [&](int c, int y, int x) {
    return (static_cast<std::size_t>(c) * image.height + y) * image.width + x;
  };
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto t = bilinear_tap(points[k].x, points[k].y, image.height, image.width);
    T gx = 0, gy = 0;
    for (int c = 0; c < image.channels; ++c) {
      const T up = upstream[k * image.channels + c];
      const T v00 = image.at(c, t.y0, t.x0), v01 = image.at(c, t.y0, t.x0 + 1);
      const T v10 = image.at(c, t.y0 + 1, t.x0), v11 = image.at(c, t.y0 + 1, t.x0 + 1);
      g.image[idx(c, t.y0, t.x0)] += up * (T(1) - t.wy) * (T(1) - t.wx);
      g.image[idx(c, t.y0, t.x0 + 1)] += up * (T(1) - t.wy) * t.wx;
      g.image[idx(c, t.y0 + 1, t.x0)] += up * t.wy * (T(1) - t.wx);
      g.image[idx(c, t.y0 + 1, t.x0 + 1)] += up * t.wy * t.wx;
      gx += up * ((T(1) - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
      gy += up * ((T(1) - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
    }
    g.points[2 * k] = t.x_inside ? gx : T(0);
    g.points[2 * k + 1] = t.y_inside ? gy : T(0);
  }
  return g;
}

// Clips the center so the P x P window lies inside an H x W frame.
PatchSpec clamp_center(const PatchSpec& spec, int height, int width);

// Validates the size against the frame (1 <= P <= min(H, W)).
void check_patch_size(int size_px, int height, int width);

struct Window {
  double x0;  // lattice column of the patch's first sample
  double y0;
  bool x_clipped;
  bool y_clipped;
};

Window patch_window(const PatchSpec& spec, int height, int width);

// Integer overlay rectangle [left, top, right, bottom) of the clamped window.
struct PixelRect {
  int left, top, right, bottom;
};
PixelRect patch_rect(const PatchSpec& spec, int height, int width);

template <std::floating_point T>
std::vector<Point<T>> patch_points(const PatchSpec& spec, int height, int width) {
  check_patch_size(spec.size_px, height, width);
  const Window win = patch_window(spec, height, width);
  std::vector<Point<T>> pts;
  pts.reserve(static_cast<std::size_t>(spec.size_px) * spec.size_px);
  for (int i = 0; i < spec.size_px; ++i)
    for (int j = 0; j < spec.size_px; ++j)
      pts.push_back({static_cast<T>(win.x0 + j), static_cast<T>(win.y0 + i)});
  return pts;
}

template <std::floating_point T>
BasicImageGrid<T> crop_patch(const BasicImageGrid<T>& image, const PatchSpec& spec) {
  const auto pts = patch_points<T>(spec, image.height, image.width);
  const auto point_major = bilinear_sample<T>(image, pts);
  const int p = spec.size_px;
  std::vector<T> out(static_cast<std::size_t>(image.channels) * p * p);
  for (std::size_t k = 0; k < pts.size(); ++k)
    for (int c = 0; c < image.channels; ++c)
      out[static_cast<std::size_t>(c) * p * p + k] = point_major[k * image.channels + c];
  return BasicImageGrid<T>(image.channels, p, p, std::move(out));
}

template <std::floating_point T>
struct CropGradients {
  std::vector<T> image;  // C x H x W
  T dcx = 0;
  T dcy = 0;
};

// Vector-Jacobian product of crop_patch; upstream is C x P x P.
template <std::floating_point T>
CropGradients<T> crop_patch_backward(const BasicImageGrid<T>& image, const PatchSpec& spec,
                                     std::span<const T> upstream) {
  const auto pts = patch_points<T>(spec, image.height, image.width);
  const int p = spec.size_px;
  if (upstream.size() != static_cast<std::size_t>(image.channels) * p * p)
    throw InvalidInput("crop_patch_backward upstream size mismatch");
  std::vector<T> point_major(upstream.size());
  for (std::size_t k = 0; k < pts.size(); ++k)
    for (int c = 0; c < image.channels; ++c)
      point_major[k * image.channels + c] = upstream[static_cast<std::size_t>(c) * p * p + k];
  auto sg = bilinear_sample_backward<T>(image, pts, point_major);
  const Window win = patch_window(spec, image.height, image.width);
  CropGradients<T> g;
  g.image = std::move(sg.image);
  T sx = 0, sy = 0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    sx += sg.points[2 * k];
    sy += sg.points[2 * k + 1];
  }
  // x0 = cx * W - P/2 inside the clip range; constant once clipped.
  g.dcx = win.x_clipped ? T(0) : sx * static_cast<T>(image.width);
  g.dcy = win.y_clipped ? T(0) : sy * static_cast<T>(image.height);
  return g;
}

// Batched autograd op: frames [N,C,H,W], centers [N,2] normalized (cx, cy)
// -> patches [N,C,P,P]. Differentiable w.r.t. frames and centers.
Tensor crop_patches(const Tensor& frames, const Tensor& centers, int size_px);

}  // namespace patchda::sampler
