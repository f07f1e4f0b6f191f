#include "patchda/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "patchda/error.hpp"

namespace patchda::ops {

namespace {

void require(bool ok, const char* what, const Shape& shape) {
  if (!ok) throw InvalidInput(std::string(what) + " (shape " + shape_string(shape) + ")");
}

void require_matrix(const Tensor& x, const char* what) {
  require(x.rank() == 2, what, x.shape());
}

bool wants_grad(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

// C[m x n] (+)= op(A) * op(B)
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, const float* b,
          float* c, float beta) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == 0.0f) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0f);
    return;
  }
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0f, a, trans_a ? m : k, b,
              trans_b ? k : n, beta, c, n);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs must be a matrix");
  require_matrix(b, "matmul rhs must be a matrix");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul inner dimension mismatch", b.shape());
  std::vector<float> out(static_cast<std::size_t>(m) * n);
  gemm(false, false, m, n, k, a.values().data(), b.values().data(), out.data(), 0.0f);
  return make_result({m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa))
      gemm(false, true, m, k, n, self.grad.data(), pb->value.data(), pa->ensure_grad().data(), 1.0f);
    if (wants_grad(pb))
      gemm(true, false, k, n, m, pa->value.data(), self.grad.data(), pb->ensure_grad().data(), 1.0f);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_matrix(x, "linear input must be a matrix");
  require_matrix(w, "linear weight must be a matrix");
  const int rows = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in) {
    throw InvalidInput("linear expects " + std::to_string(w.dim(1)) + " input features, got " +
                       std::to_string(in));
  }
  const bool has_bias = b.defined();
  if (has_bias) require(static_cast<int>(b.numel()) == out_dim, "linear bias size mismatch", b.shape());
  std::vector<float> out(static_cast<std::size_t>(rows) * out_dim);
  if (has_bias) {
    const auto bias = b.values();
    for (int r = 0; r < rows; ++r)
      std::copy(bias.begin(), bias.end(), out.begin() + static_cast<std::ptrdiff_t>(r) * out_dim);
  }
  gemm(false, true, rows, out_dim, in, x.values().data(), w.values().data(), out.data(),
       has_bias ? 1.0f : 0.0f);
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_result({rows, out_dim}, std::move(out), std::move(parents),
                     [rows, in, out_dim, has_bias](Node& self) {
                       auto& px = self.parents[0];
                       auto& pw = self.parents[1];
                       const float* g = self.grad.data();
                       if (wants_grad(px))
                         gemm(false, false, rows, in, out_dim, g, pw->value.data(),
                              px->ensure_grad().data(), 1.0f);
                       if (wants_grad(pw))
                         gemm(true, false, out_dim, in, rows, g, px->value.data(),
                              pw->ensure_grad().data(), 1.0f);
                       if (has_bias && wants_grad(self.parents[2])) {
                         auto& gb = self.parents[2]->ensure_grad();
                         for (int r = 0; r < rows; ++r)
                           for (int o = 0; o < out_dim; ++o)
                             gb[o] += g[static_cast<std::size_t>(r) * out_dim + o];
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add shape mismatch", b.shape());
  std::vector<float> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!wants_grad(p)) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor add_n(std::span<const Tensor> xs) {
  if (xs.empty()) throw InvalidInput("add_n of nothing");
  std::vector<float> out(xs[0].values().begin(), xs[0].values().end());
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require(xs[k].shape() == xs[0].shape(), "add_n shape mismatch", xs[k].shape());
    const auto v = xs[k].values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  return make_result(xs[0].shape(), std::move(out), {xs.begin(), xs.end()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!wants_grad(p)) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor scale(const Tensor& x, float factor) {
  std::vector<float> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > 0.0f ? v : 0.0f;
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p->value[i] > 0.0f) g[i] += self.grad[i];
  });
}

Tensor gradient_reversal(const Tensor& x, float lambda) {
  if (!(lambda >= 0.0f)) throw InvalidInput("gradient reversal coefficient must be >= 0");
  std::vector<float> out(x.values().begin(), x.values().end());
  return make_result(x.shape(), std::move(out), {x}, [lambda](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += -lambda * self.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), "reshape changes element count", shape);
  std::vector<float> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace {

struct ConvGeometry {
  int n, c, h, w, co, k, stride, pad, ho, wo;
  std::size_t col_rows() const { return static_cast<std::size_t>(c) * k * k; }
  std::size_t col_cols() const { return static_cast<std::size_t>(n) * ho * wo; }
};

// cols[(ci*k+ky)*k+kx][(img*ho+oy)*wo+ox]
void im2col(const ConvGeometry& g, const float* x, float* cols) {
  const std::size_t ncols = g.col_cols();
  for (int ci = 0; ci < g.c; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = cols + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * ncols;
        for (int img = 0; img < g.n; ++img) {
          const float* plane = x + (static_cast<std::size_t>(img) * g.c + ci) * g.h * g.w;
          float* dst = row + static_cast<std::size_t>(img) * g.ho * g.wo;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            float* line = dst + static_cast<std::size_t>(oy) * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(line, line + g.wo, 0.0f);
              continue;
            }
            const float* src = plane + static_cast<std::size_t>(iy) * g.w;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              line[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
            }
          }
        }
      }
}

void col2im(const ConvGeometry& g, const float* cols, float* dx) {
  const std::size_t ncols = g.col_cols();
  for (int ci = 0; ci < g.c; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = cols + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * ncols;
        for (int img = 0; img < g.n; ++img) {
          float* plane = dx + (static_cast<std::size_t>(img) * g.c + ci) * g.h * g.w;
          const float* src = row + static_cast<std::size_t>(img) * g.ho * g.wo;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            float* dst = plane + static_cast<std::size_t>(iy) * g.w;
            const float* line = src + static_cast<std::size_t>(oy) * g.wo;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.w) dst[ix] += line[ox];
            }
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  require(x.rank() == 4, "conv2d input must be NCHW", x.shape());
  require(w.rank() == 4 && w.dim(2) == w.dim(3), "conv2d weight must be [Co,C,k,k]", w.shape());
  if (w.dim(1) != x.dim(1)) {
    throw InvalidInput("conv2d expects " + std::to_string(w.dim(1)) + " input channels, got " +
                       std::to_string(x.dim(1)));
  }
  if (stride < 1 || pad < 0) throw InvalidInput("conv2d stride/pad out of range");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw InvalidInput("conv2d input smaller than kernel");
  const bool has_bias = b.defined();

  auto cols = std::make_shared<std::vector<float>>(g.col_rows() * g.col_cols());
  im2col(g, x.values().data(), cols->data());
  const std::size_t plane = static_cast<std::size_t>(g.ho) * g.wo;
  // mixed[co][img*plane + p]
  std::vector<float> mixed(static_cast<std::size_t>(g.co) * g.col_cols());
  gemm(false, false, g.co, static_cast<int>(g.col_cols()), static_cast<int>(g.col_rows()),
       w.values().data(), cols->data(), mixed.data(), 0.0f);
  std::vector<float> out(static_cast<std::size_t>(g.n) * g.co * plane);
  for (int img = 0; img < g.n; ++img)
    for (int co = 0; co < g.co; ++co) {
      const float bias = has_bias ? b.values()[co] : 0.0f;
      const float* src = mixed.data() + static_cast<std::size_t>(co) * g.col_cols() + img * plane;
      float* dst = out.data() + (static_cast<std::size_t>(img) * g.co + co) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bias;
    }

  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_result({g.n, g.co, g.ho, g.wo}, std::move(out), std::move(parents),
                     [g, cols, has_bias, plane](Node& self) {
                       // Back to [co][img*plane + p] layout.
                       std::vector<float> gmixed(static_cast<std::size_t>(g.co) * g.col_cols());
                       for (int img = 0; img < g.n; ++img)
                         for (int co = 0; co < g.co; ++co) {
                           const float* src =
                               self.grad.data() + (static_cast<std::size_t>(img) * g.co + co) * plane;
                           std::copy(src, src + plane,
                                     gmixed.data() + static_cast<std::size_t>(co) * g.col_cols() +
                                         img * plane);
                         }
                       auto& px = self.parents[0];
                       auto& pw = self.parents[1];
                       const int ncols = static_cast<int>(g.col_cols());
                       const int nrows = static_cast<int>(g.col_rows());
                       if (wants_grad(pw))
                         gemm(false, true, g.co, nrows, ncols, gmixed.data(), cols->data(),
                              pw->ensure_grad().data(), 1.0f);
                       if (has_bias && wants_grad(self.parents[2])) {
                         auto& gb = self.parents[2]->ensure_grad();
                         for (int co = 0; co < g.co; ++co) {
                           const float* row = gmixed.data() + static_cast<std::size_t>(co) * ncols;
                           gb[co] += std::accumulate(row, row + ncols, 0.0f);
                         }
                       }
                       if (wants_grad(px)) {
                         std::vector<float> gcols(g.col_rows() * g.col_cols());
                         gemm(true, false, nrows, ncols, g.co, pw->value.data(), gmixed.data(),
                              gcols.data(), 0.0f);
                         col2im(g, gcols.data(), px->ensure_grad().data());
                       }
                     });
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.rank() == 4, "global_avg_pool input must be NCHW", x.shape());
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<float> out(static_cast<std::size_t>(n) * c);
  const auto v = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float* p = v.data() + i * plane;
    out[i] = std::accumulate(p, p + plane, 0.0f) / static_cast<float>(plane);
  }
  return make_result({n, c}, std::move(out), {x}, [plane](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const float inv = 1.0f / static_cast<float>(plane);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const float gi = self.grad[i] * inv;
      for (std::size_t p = 0; p < plane; ++p) g[i * plane + p] += gi;
    }
  });
}

Tensor concat_cols(std::span<const Tensor> blocks) {
  if (blocks.empty()) throw InvalidInput("concat_cols of nothing");
  const int rows = blocks[0].dim(0);
  std::vector<int> widths;
  int total = 0;
  for (const auto& b : blocks) {
    require_matrix(b, "concat_cols block must be a matrix");
    require(b.dim(0) == rows, "concat_cols row count mismatch", b.shape());
    widths.push_back(b.dim(1));
    total += b.dim(1);
  }
  std::vector<float> out(static_cast<std::size_t>(rows) * total);
  int offset = 0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto v = blocks[k].values();
    for (int r = 0; r < rows; ++r)
      std::copy_n(v.data() + static_cast<std::size_t>(r) * widths[k], widths[k],
                  out.data() + static_cast<std::size_t>(r) * total + offset);
    offset += widths[k];
  }
  return make_result({rows, total}, std::move(out), {blocks.begin(), blocks.end()},
                     [rows, total, widths](Node& self) {
                       int off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         auto& p = self.parents[k];
                         if (wants_grad(p)) {
                           auto& g = p->ensure_grad();
                           for (int r = 0; r < rows; ++r)
                             for (int c = 0; c < widths[k]; ++c)
                               g[static_cast<std::size_t>(r) * widths[k] + c] +=
                                   self.grad[static_cast<std::size_t>(r) * total + off + c];
                         }
                         off += widths[k];
                       }
                     });
}

Tensor concat_rows(std::span<const Tensor> blocks) {
  if (blocks.empty()) throw InvalidInput("concat_rows of nothing");
  const int cols = blocks[0].dim(1);
  int rows = 0;
  std::vector<float> out;
  for (const auto& b : blocks) {
    require_matrix(b, "concat_rows block must be a matrix");
    require(b.dim(1) == cols, "concat_rows column count mismatch", b.shape());
    rows += b.dim(0);
    out.insert(out.end(), b.values().begin(), b.values().end());
  }
  return make_result({rows, cols}, std::move(out), {blocks.begin(), blocks.end()}, [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      if (wants_grad(p)) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
      }
      off += p->value.size();
    }
  });
}

Tensor slice_cols(const Tensor& x, int offset, int width) {
  require_matrix(x, "slice_cols input must be a matrix");
  const int rows = x.dim(0), cols = x.dim(1);
  require(offset >= 0 && width >= 0 && offset + width <= cols, "slice_cols out of range", x.shape());
  std::vector<float> out(static_cast<std::size_t>(rows) * width);
  const auto v = x.values();
  for (int r = 0; r < rows; ++r)
    std::copy_n(v.data() + static_cast<std::size_t>(r) * cols + offset, width,
                out.data() + static_cast<std::size_t>(r) * width);
  return make_result({rows, width}, std::move(out), {x}, [rows, cols, offset, width](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < width; ++c)
        g[static_cast<std::size_t>(r) * cols + offset + c] +=
            self.grad[static_cast<std::size_t>(r) * width + c];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const int> rows) {
  require_matrix(x, "gather_rows input must be a matrix");
  const int n = x.dim(0), cols = x.dim(1);
  std::vector<int> index(rows.begin(), rows.end());
  std::vector<float> out(index.size() * static_cast<std::size_t>(cols));
  const auto v = x.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= n) throw InvalidInput("gather_rows index out of range");
    std::copy_n(v.data() + static_cast<std::size_t>(index[i]) * cols, cols,
                out.data() + i * cols);
  }
  const int count = static_cast<int>(index.size());
  return make_result({count, cols}, std::move(out), {x}, [index, cols](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i)
      for (int c = 0; c < cols; ++c)
        g[static_cast<std::size_t>(index[i]) * cols + c] += self.grad[i * cols + c];
  });
}

Tensor mean_row_groups(const Tensor& x, int group) {
  require_matrix(x, "mean_row_groups input must be a matrix");
  const int rows = x.dim(0), cols = x.dim(1);
  require(group >= 1 && rows % group == 0, "mean_row_groups: rows not divisible by group",
          x.shape());
  const int out_rows = rows / group;
  std::vector<float> out(static_cast<std::size_t>(out_rows) * cols, 0.0f);
  const auto v = x.values();
  const float inv = 1.0f / static_cast<float>(group);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out[static_cast<std::size_t>(r / group) * cols + c] += v[static_cast<std::size_t>(r) * cols + c];
  for (auto& o : out) o *= inv;
  return make_result({out_rows, cols}, std::move(out), {x}, [rows, cols, group, inv](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        g[static_cast<std::size_t>(r) * cols + c] +=
            inv * self.grad[static_cast<std::size_t>(r / group) * cols + c];
  });
}

Tensor scale_rows(const Tensor& x, std::span<const float> factors) {
  require_matrix(x, "scale_rows input must be a matrix");
  const int rows = x.dim(0), cols = x.dim(1);
  require(static_cast<int>(factors.size()) == rows, "scale_rows factor count mismatch", x.shape());
  std::vector<float> f(factors.begin(), factors.end());
  std::vector<float> out(x.values().begin(), x.values().end());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r) * cols + c] *= f[r];
  return make_result(x.shape(), std::move(out), {x}, [f, cols](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += f[i / cols] * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  return make_result({1}, {static_cast<float>(acc)}, {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw InvalidInput("mean of empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

std::vector<float> softmax_rows(const Tensor& logits) {
  require_matrix(logits, "softmax_rows input must be a matrix");
  const int rows = logits.dim(0), k = logits.dim(1);
  std::vector<float> p(logits.values().begin(), logits.values().end());
  for (int r = 0; r < rows; ++r) {
    float* row = p.data() + static_cast<std::size_t>(r) * k;
    const float mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (int j = 0; j < k; ++j)
      row[j] = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / z);
  }
  return p;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_matrix(logits, "cross_entropy logits must be a matrix");
  const int rows = logits.dim(0), k = logits.dim(1);
  require(static_cast<int>(labels.size()) == rows, "cross_entropy label count mismatch",
          logits.shape());
  std::vector<int> y(labels.begin(), labels.end());
  const auto v = logits.values();
  double loss = 0.0;
  int counted = 0;
  for (int r = 0; r < rows; ++r) {
    if (y[r] < 0) continue;
    if (y[r] >= k) throw InvalidInput("cross_entropy label out of range");
    const float* row = v.data() + static_cast<std::size_t>(r) * k;
    const float mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    loss += std::log(z) + mx - row[y[r]];
    ++counted;
  }
  if (counted == 0) return Tensor::zeros({1});
  auto probs = softmax_rows(logits);
  const float inv = 1.0f / static_cast<float>(counted);
  return make_result({1}, {static_cast<float>(loss / counted)}, {logits},
                     [probs = std::move(probs), y, k, inv](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       const float up = self.grad[0] * inv;
                       for (std::size_t r = 0; r < y.size(); ++r) {
                         if (y[r] < 0) continue;
                         for (int j = 0; j < k; ++j) {
                           const std::size_t i = r * k + j;
                           g[i] += up * (probs[i] - (j == y[r] ? 1.0f : 0.0f));
                         }
                       }
                     });
}

Tensor weighted_softmax_entropy(const Tensor& logits, std::span<const float> weights) {
  require_matrix(logits, "entropy logits must be a matrix");
  const int rows = logits.dim(0), k = logits.dim(1);
  require(static_cast<int>(weights.size()) == rows, "entropy weight count mismatch",
          logits.shape());
  if (rows == 0) return Tensor::zeros({1});
  std::vector<float> w(weights.begin(), weights.end());
  auto probs = softmax_rows(logits);
  std::vector<float> row_entropy(rows);
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    double h = 0.0;
    for (int j = 0; j < k; ++j) {
      const double p = probs[static_cast<std::size_t>(r) * k + j];
      if (p > 0.0) h -= p * std::log(p);
    }
    row_entropy[r] = static_cast<float>(h);
    total += w[r] * h;
  }
  const float inv = 1.0f / static_cast<float>(rows);
  return make_result(
      {1}, {static_cast<float>(total / rows)}, {logits},
      [probs = std::move(probs), row_entropy = std::move(row_entropy), w, k, inv](Node& self) {
        // dH/dz_j = -p_j (log p_j + H)
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < w.size(); ++r) {
          const float up = self.grad[0] * inv * w[r];
          for (int j = 0; j < k; ++j) {
            const std::size_t i = r * k + j;
            const float p = probs[i];
            if (p > 0.0f) g[i] += -up * p * (std::log(p) + row_entropy[r]);
          }
        }
      });
}

}  // namespace patchda::ops
