#include "patchda/sampler.hpp"

namespace patchda::sampler {

void check_patch_size(int size_px, int height, int width) {
  if (size_px < 1 || size_px > std::min(height, width)) {
    throw InvalidConfig("patch size " + std::to_string(size_px) + " does not fit a " +
                        std::to_string(height) + "x" + std::to_string(width) + " frame");
  }
}

Window patch_window(const PatchSpec& spec, int height, int width) {
  if (!std::isfinite(spec.cx) || !std::isfinite(spec.cy))
    throw InvalidInput("patch center is not finite");
  const double half = spec.size_px / 2.0;
  const double px = spec.cx * width;
  const double py = spec.cy * height;
  const double cpx = std::clamp(px, half, width - half);
  const double cpy = std::clamp(py, half, height - half);
  return {cpx - half, cpy - half, cpx != px, cpy != py};
}

PatchSpec clamp_center(const PatchSpec& spec, int height, int width) {
  const Window win = patch_window(spec, height, width);
  const double half = spec.size_px / 2.0;
  PatchSpec out = spec;
  if (win.x_clipped) out.cx = (win.x0 + half) / width;
  if (win.y_clipped) out.cy = (win.y0 + half) / height;
  return out;
}

PixelRect patch_rect(const PatchSpec& spec, int height, int width) {
  check_patch_size(spec.size_px, height, width);
  const Window win = patch_window(spec, height, width);
  const int left = std::clamp(static_cast<int>(std::lround(win.x0)), 0, width - spec.size_px);
  const int top = std::clamp(static_cast<int>(std::lround(win.y0)), 0, height - spec.size_px);
  return {left, top, left + spec.size_px, top + spec.size_px};
}

Tensor crop_patches(const Tensor& frames, const Tensor& centers, int size_px) {
  if (frames.rank() != 4) throw InvalidInput("crop_patches frames must be NCHW");
  const int n = frames.dim(0), c = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  if (centers.rank() != 2 || centers.dim(0) != n || centers.dim(1) != 2)
    throw InvalidInput("crop_patches centers must be [N,2]");
  check_patch_size(size_px, h, w);
  const int p = size_px;
  const std::size_t frame_size = static_cast<std::size_t>(c) * h * w;
  const std::size_t patch_size = static_cast<std::size_t>(c) * p * p;

  // Per-frame taps are shared by every channel and reused in the backward pass.
  struct Cached {
    Window win;
    std::vector<BilinearTap<float>> taps;
  };
  auto cache = std::make_shared<std::vector<Cached>>(n);
  std::vector<float> out(static_cast<std::size_t>(n) * patch_size);
  const auto fv = frames.values();
  const auto cv = centers.values();
  for (int k = 0; k < n; ++k) {
    const PatchSpec spec{cv[2 * k], cv[2 * k + 1], p};
    auto& entry = (*cache)[k];
    entry.win = patch_window(spec, h, w);
    entry.taps.reserve(static_cast<std::size_t>(p) * p);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j)
        entry.taps.push_back(bilinear_tap(static_cast<float>(entry.win.x0 + j),
                                          static_cast<float>(entry.win.y0 + i), h, w));
    const float* img = fv.data() + k * frame_size;
    float* dst = out.data() + k * patch_size;
    for (int ch = 0; ch < c; ++ch) {
      const float* plane = img + static_cast<std::size_t>(ch) * h * w;
      for (std::size_t q = 0; q < entry.taps.size(); ++q) {
        const auto& t = entry.taps[q];
        const float* r0 = plane + static_cast<std::size_t>(t.y0) * w + t.x0;
        const float* r1 = r0 + w;
        dst[static_cast<std::size_t>(ch) * p * p + q] =
            (1.0f - t.wy) * ((1.0f - t.wx) * r0[0] + t.wx * r0[1]) +
            t.wy * ((1.0f - t.wx) * r1[0] + t.wx * r1[1]);
      }
    }
  }

  return make_result(
      {n, c, p, p}, std::move(out), {frames, centers},
      [cache, n, c, h, w, p, frame_size, patch_size](Node& self) {
        auto& pf = self.parents[0];
        auto& pc = self.parents[1];
        const bool want_frames = pf->requires_grad;
        const bool want_centers = pc->requires_grad;
        float* gf = want_frames ? pf->ensure_grad().data() : nullptr;
        float* gc = want_centers ? pc->ensure_grad().data() : nullptr;
        for (int k = 0; k < n; ++k) {
          const auto& entry = (*cache)[k];
          const float* img = pf->value.data() + k * frame_size;
          const float* up = self.grad.data() + k * patch_size;
          double sx = 0.0, sy = 0.0;
          for (int ch = 0; ch < c; ++ch) {
            const float* plane = img + static_cast<std::size_t>(ch) * h * w;
            float* gplane = gf ? gf + k * frame_size + static_cast<std::size_t>(ch) * h * w : nullptr;
            for (std::size_t q = 0; q < entry.taps.size(); ++q) {
              const auto& t = entry.taps[q];
              const float g = up[static_cast<std::size_t>(ch) * p * p + q];
              if (g == 0.0f) continue;
              const std::size_t base = static_cast<std::size_t>(t.y0) * w + t.x0;
              if (gplane) {
                gplane[base] += g * (1.0f - t.wy) * (1.0f - t.wx);
                gplane[base + 1] += g * (1.0f - t.wy) * t.wx;
                gplane[base + w] += g * t.wy * (1.0f - t.wx);
                gplane[base + w + 1] += g * t.wy * t.wx;
              }
              if (gc) {
                const float v00 = plane[base], v01 = plane[base + 1];
                const float v10 = plane[base + w], v11 = plane[base + w + 1];
                if (t.x_inside) sx += g * ((1.0f - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                if (t.y_inside) sy += g * ((1.0f - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
              }
            }
          }
          if (gc) {
            if (!entry.win.x_clipped) gc[2 * k] += static_cast<float>(sx * w);
            if (!entry.win.y_clipped) gc[2 * k + 1] += static_cast<float>(sy * h);
          }
        }
      });
}

}  // namespace patchda::sampler
