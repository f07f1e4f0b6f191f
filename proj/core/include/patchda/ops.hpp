#pragma once

#include <span>
#include <vector>

#include "patchda/tensor.hpp"

// Differentiable tensor operations. Matrices are row-major [rows x cols];
// images are NCHW.
namespace patchda::ops {

// x[R x in] * w[out x in]^T + b[out]  (b may be undefined)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor add_n(std::span<const Tensor> xs);
Tensor scale(const Tensor& x, float factor);
Tensor relu(const Tensor& x);

// Forward identity; backward multiplies the upstream gradient by -lambda.
Tensor gradient_reversal(const Tensor& x, float lambda);

Tensor reshape(const Tensor& x, Shape shape);

// x[N,C,H,W] with w[Co,C,k,k], b[Co]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

// Column-wise concatenation of [R x d_i] blocks.
Tensor concat_cols(std::span<const Tensor> blocks);
// Row-wise stacking of [r_i x D] blocks.
Tensor concat_rows(std::span<const Tensor> blocks);
Tensor slice_cols(const Tensor& x, int offset, int width);
Tensor gather_rows(const Tensor& x, std::span<const int> rows);
// Mean of each run of `group` consecutive rows: [R x D] -> [R/group x D].
Tensor mean_row_groups(const Tensor& x, int group);
// Row r scaled by the constant factors[r].
Tensor scale_rows(const Tensor& x, std::span<const float> factors);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean over rows of -log softmax(logits)[label]. Rows with label < 0 are
// skipped; returns 0 when no row carries a label.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
// sum_r weight[r] * H(softmax(logits_r)) / R, natural log.
Tensor weighted_softmax_entropy(const Tensor& logits, std::span<const float> weights);

// Non-differentiable helpers.
std::vector<float> softmax_rows(const Tensor& logits);

}  // namespace patchda::ops
