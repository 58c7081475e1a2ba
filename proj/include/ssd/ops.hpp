#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ssd/tensor.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

// Elementwise binary ops broadcast numpy-style (right-aligned dimensions).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// a / b where b != 0, zero elsewhere (used for norms at the origin).
Tensor div_safe(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, Real factor);
Tensor add_scalar(const Tensor& x, Real value);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
/// Elementwise clamp; the gradient passes only where the input is inside the range.
Tensor clamp(const Tensor& x, Real lo, Real hi);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<std::int64_t>& axes, bool keepdim);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, const std::vector<std::int64_t>& axes, bool keepdim);
/// Reduces `x` by summation to a shape it was broadcast from.
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

/// -1 in `shape` is inferred.
Tensor reshape(const Tensor& x, Shape shape);
Tensor flatten(const Tensor& x);  // [B, ...] -> [B, prod(...)]
Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order);
Tensor transpose(const Tensor& x);  // rank 2

/// op(a) @ op(b) for rank-2 tensors, op = transpose when the flag is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

/// [N,C,H,W] -> [C*k*k, N*OH*OW] patch matrix.
Tensor im2col(const Tensor& x, std::int64_t kernel, std::int64_t stride, std::int64_t padding);
/// Adjoint of im2col; `image_shape` is the original [N,C,H,W].
Tensor col2im(const Tensor& cols, const Shape& image_shape, std::int64_t kernel, std::int64_t stride,
              std::int64_t padding);
/// weight [Cout,Cin,k,k]; bias optional [Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t stride,
              std::int64_t padding);

Tensor avg_pool2d(const Tensor& x, std::int64_t kernel);
/// Adjoint of avg_pool2d back onto `input_shape`.
Tensor avg_pool2d_adjoint(const Tensor& grad, const Shape& input_shape, std::int64_t kernel);
Tensor max_pool2d(const Tensor& x, std::int64_t kernel);

using IndexList = std::shared_ptr<const std::vector<std::int64_t>>;
/// out[i] = x.flat[index[i]]
Tensor gather_flat(const Tensor& x, IndexList index, Shape out_shape);
/// out.flat[index[i]] += x[i]; adjoint of gather_flat.
Tensor scatter_add_flat(const Tensor& x, IndexList index, Shape out_shape);

/// Row-wise euclidean norms of a rank-2 tensor: [R,F] -> [R].
Tensor norm_rows(const Tensor& x);
/// Euclidean norm of all elements as a scalar.
Tensor l2_norm(const Tensor& x);
/// Row-wise L2 normalization of a rank-2 tensor.
Tensor normalize_rows(const Tensor& x, Real eps = Real(1e-12));

struct BatchNormState {
  std::vector<Real>& running_mean;
  std::vector<Real>& running_var;
  Real momentum;
};

/// Batch-statistics normalization over (N,H,W) for [N,C,H,W] inputs. In
/// training mode the batch statistics are used and the running estimates
/// updated; otherwise the running estimates are applied as constants.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState state,
                  bool training, Real eps = Real(1e-5));

/// x [B,in], weight [out,in], bias [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Mean softmax cross-entropy of logits [B,K] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Supervised contrastive loss on L2-normalized embeddings [N,D].
Tensor supervised_contrastive(const Tensor& embeddings, std::span<const int> labels, Real temperature);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, Real s) { return scale(x, s); }
inline Tensor operator*(Real s, const Tensor& x) { return scale(x, s); }

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
