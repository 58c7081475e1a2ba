#include "ssd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ssd {
inline namespace SSD_PRECISION_NS {

namespace {

using Index = std::int64_t;
using Values = std::vector<Real>;

std::vector<Index> aligned_strides(const Shape& in, const Shape& out) {
  std::vector<Index> strides(out.size(), 0);
  Index stride = 1;
  const auto offset = out.size() - in.size();
  for (std::size_t i = in.size(); i-- > 0;) {
    if (in[i] != 1) strides[i + offset] = stride;
    stride *= in[i];
  }
  return strides;
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const auto rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const Index da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const Index db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                       " are not broadcastable");
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

/// Calls f(out_index, a_offset, b_offset) over every element of `out`.
/// Adjacent dimensions that are contiguous for both operands are merged first
/// so the inner loop runs over the longest possible stretch.
template <class F>
void for_each_broadcast(const Shape& out_shape, const std::vector<Index>& sa_in, const std::vector<Index>& sb_in,
                        F&& f) {
  const Index total = numel(out_shape);
  if (total == 0) return;
  Shape out;
  std::vector<Index> sa, sb;
  for (std::size_t d = 0; d < out_shape.size(); ++d) {
    if (out_shape[d] == 1) continue;
    if (!out.empty() && sa.back() == sa_in[d] * out_shape[d] && sb.back() == sb_in[d] * out_shape[d]) {
      out.back() *= out_shape[d];
      sa.back() = sa_in[d];
      sb.back() = sb_in[d];
      continue;
    }
    out.push_back(out_shape[d]);
    sa.push_back(sa_in[d]);
    sb.push_back(sb_in[d]);
  }
  if (out.empty()) {
    f(0, 0, 0);
    return;
  }
  const std::size_t r = out.size();
  const Index inner = out[r - 1];
  const Index step_a = sa[r - 1];
  const Index step_b = sb[r - 1];
  std::vector<Index> idx(r, 0);
  Index oa = 0;
  Index ob = 0;
  for (Index o = 0; o < total; o += inner) {
    if (step_a == 1 && step_b == 0) {
      for (Index j = 0; j < inner; ++j) f(o + j, oa + j, ob);
    } else if (step_a == 0 && step_b == 1) {
      for (Index j = 0; j < inner; ++j) f(o + j, oa, ob + j);
    } else {
      for (Index j = 0; j < inner; ++j) f(o + j, oa + j * step_a, ob + j * step_b);
    }
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class F>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F&& fn, BackwardFn backward) {
  const auto pa = a.data();
  const auto pb = b.data();
  if (a.shape() == b.shape()) {
    Values out(pa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(pa[i], pb[i]);
    return record(op, a.shape(), std::move(out), {a, b}, std::move(backward));
  }
  Shape shape = broadcast_shapes(a.shape(), b.shape(), op);
  Values out(static_cast<std::size_t>(numel(shape)));
  for_each_broadcast(shape, aligned_strides(a.shape(), shape), aligned_strides(b.shape(), shape),
                     [&](Index o, Index ia, Index ib) { out[o] = fn(pa[ia], pb[ib]); });
  return record(op, std::move(shape), std::move(out), {a, b}, std::move(backward));
}

template <class F>
Values map_values(const Tensor& x, F&& fn) {
  const auto px = x.data();
  Values out(px.size());
  std::transform(px.begin(), px.end(), out.begin(), fn);
  return out;
}

Tensor mask_where(const Tensor& x, auto predicate) {
  return Tensor::from(x.shape(), map_values(x, [&](Real v) { return predicate(v) ? Real(1) : Real(0); }));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(x.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape(), sb = b.shape();
  return binary("add", a, b, [](Real x, Real y) { return x + y; },
                [sa, sb](const Tensor& g, const std::vector<bool>& needs) {
                  return std::vector<Tensor>{needs[0] ? sum_to(g, sa) : Tensor{}, needs[1] ? sum_to(g, sb) : Tensor{}};
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape(), sb = b.shape();
  return binary("sub", a, b, [](Real x, Real y) { return x - y; },
                [sa, sb](const Tensor& g, const std::vector<bool>& needs) {
                  return std::vector<Tensor>{needs[0] ? sum_to(g, sa) : Tensor{},
                                             needs[1] ? sum_to(neg(g), sb) : Tensor{}};
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](Real x, Real y) { return x * y; },
                [a, b](const Tensor& g, const std::vector<bool>& needs) {
                  return std::vector<Tensor>{needs[0] ? sum_to(mul(g, b), a.shape()) : Tensor{},
                                             needs[1] ? sum_to(mul(g, a), b.shape()) : Tensor{}};
                });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary("div", a, b, [](Real x, Real y) { return x / y; },
                [a, b](const Tensor& g, const std::vector<bool>& needs) {
                  return std::vector<Tensor>{
                      needs[0] ? sum_to(div(g, b), a.shape()) : Tensor{},
                      needs[1] ? sum_to(neg(div(mul(g, a), mul(b, b))), b.shape()) : Tensor{}};
                });
}

Tensor div_safe(const Tensor& a, const Tensor& b) {
  return binary("div_safe", a, b, [](Real x, Real y) { return y == Real(0) ? Real(0) : x / y; },
                [a, b](const Tensor& g, const std::vector<bool>& needs) {
                  return std::vector<Tensor>{
                      needs[0] ? sum_to(div_safe(g, b), a.shape()) : Tensor{},
                      needs[1] ? sum_to(neg(div_safe(mul(g, a), mul(b, b))), b.shape()) : Tensor{}};
                });
}

Tensor neg(const Tensor& x) {
  return record("neg", x.shape(), map_values(x, [](Real v) { return -v; }), {x},
                [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{neg(g)}; });
}

Tensor scale(const Tensor& x, Real factor) {
  return record("scale", x.shape(), map_values(x, [factor](Real v) { return v * factor; }), {x},
                [factor](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{scale(g, factor)}; });
}

Tensor add_scalar(const Tensor& x, Real value) {
  return record("add_scalar", x.shape(), map_values(x, [value](Real v) { return v + value; }), {x},
                [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{g}; });
}

Tensor exp(const Tensor& x) {
  return record("exp", x.shape(), map_values(x, [](Real v) { return std::exp(v); }), {x},
                [x](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{mul(g, exp(x))}; });
}

Tensor log(const Tensor& x) {
  return record("log", x.shape(), map_values(x, [](Real v) { return std::log(v); }), {x},
                [x](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{div(g, x)}; });
}

Tensor sqrt(const Tensor& x) {
  return record("sqrt", x.shape(), map_values(x, [](Real v) { return std::sqrt(v); }), {x},
                [x](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{div(g, scale(sqrt(x), Real(2)))};
                });
}

Tensor relu(const Tensor& x) {
  return record("relu", x.shape(), map_values(x, [](Real v) { return v > Real(0) ? v : Real(0); }), {x},
                [x](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(g, mask_where(x, [](Real v) { return v > Real(0); }))};
                });
}

Tensor square(const Tensor& x) {
  return record("square", x.shape(), map_values(x, [](Real v) { return v * v; }), {x},
                [x](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(g, scale(x, Real(2)))};
                });
}

Tensor clamp(const Tensor& x, Real lo, Real hi) {
  return record("clamp", x.shape(), map_values(x, [lo, hi](Real v) { return std::clamp(v, lo, hi); }), {x},
                [x, lo, hi](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(g, mask_where(x, [lo, hi](Real v) { return v >= lo && v <= hi; }))};
                });
}

Tensor sum(const Tensor& x) {
  const auto px = x.data();
  Real total = std::accumulate(px.begin(), px.end(), Real(0));
  const Shape sx = x.shape();
  return record("sum", {}, {total}, {x},
                [sx](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{broadcast_to(g, sx)}; });
}

Tensor sum(const Tensor& x, const std::vector<std::int64_t>& axes, bool keepdim) {
  Shape kept = x.shape();
  for (auto axis : axes) {
    if (axis < 0 || axis >= static_cast<Index>(kept.size())) {
      throw ShapeError("sum: axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
    }
    kept[axis] = 1;
  }
  Tensor reduced = sum_to(x, kept);
  if (keepdim) return reduced;
  Shape squeezed;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (std::find(axes.begin(), axes.end(), static_cast<Index>(i)) == axes.end()) squeezed.push_back(kept[i]);
  }
  return reshape(reduced, squeezed);
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

Tensor mean(const Tensor& x, const std::vector<std::int64_t>& axes, bool keepdim) {
  Index count = 1;
  for (auto axis : axes) count *= x.dim(static_cast<std::size_t>(axis));
  if (count == 0) throw ShapeError("mean: reducing over an empty axis");
  return scale(sum(x, axes, keepdim), Real(1) / static_cast<Real>(count));
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const Shape& sx = x.shape();
  if (shape.size() > sx.size() || broadcast_shapes(shape, sx, "sum_to") != sx) {
    throw ShapeError("sum_to: cannot reduce " + to_string(sx) + " to " + to_string(shape));
  }
  Values out(static_cast<std::size_t>(numel(shape)), Real(0));
  const auto px = x.data();
  const auto so = aligned_strides(shape, sx);
  const std::vector<Index> sself = aligned_strides(sx, sx);
  for_each_broadcast(sx, sself, so, [&](Index, Index ix, Index io) { out[io] += px[ix]; });
  return record("sum_to", shape, std::move(out), {x}, [sx](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{broadcast_to(g, sx)};
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const Shape sx = x.shape();
  if (sx.size() > shape.size() || broadcast_shapes(sx, shape, "broadcast_to") != shape) {
    throw ShapeError("broadcast_to: cannot broadcast " + to_string(sx) + " to " + to_string(shape));
  }
  Values out(static_cast<std::size_t>(numel(shape)));
  const auto px = x.data();
  for_each_broadcast(shape, aligned_strides(sx, shape), aligned_strides(sx, shape),
                     [&](Index o, Index ix, Index) { out[o] = px[ix]; });
  return record("broadcast_to", shape, std::move(out), {x}, [sx](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{sum_to(g, sx)};
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  Index known = 1;
  int inferred = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (inferred >= 0) throw ShapeError("reshape: more than one inferred dimension");
      inferred = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (inferred >= 0) {
    if (known == 0 || x.numel() % known != 0) {
      throw ShapeError("reshape: cannot infer dimension for " + to_string(x.shape()) + " -> " + to_string(shape));
    }
    shape[inferred] = x.numel() / known;
  }
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape) + " changes element count");
  }
  if (shape == x.shape()) return x;
  const Shape sx = x.shape();
  return record_view("reshape", std::move(shape), x.storage(), {x},
                     [sx](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{reshape(g, sx)}; });
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("flatten: scalar input");
  return reshape(x, {x.dim(0), -1});
}

Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order) {
  const Shape& sx = x.shape();
  if (order.size() != sx.size()) throw ShapeError("permute: order rank mismatch for " + to_string(sx));
  std::vector<Index> inverse(order.size(), -1);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] < 0 || order[i] >= static_cast<Index>(order.size()) || inverse[order[i]] != -1) {
      throw ShapeError("permute: invalid axis order");
    }
    inverse[order[i]] = static_cast<Index>(i);
  }
  Shape shape(sx.size());
  const auto in_strides = aligned_strides(sx, sx);
  std::vector<Index> strides(sx.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    shape[i] = sx[order[i]];
    strides[i] = sx[order[i]] == 1 ? 0 : in_strides[order[i]];
  }
  Values out(static_cast<std::size_t>(x.numel()));
  const auto px = x.data();
  for_each_broadcast(shape, strides, strides, [&](Index o, Index ix, Index) { out[o] = px[ix]; });
  return record("permute", std::move(shape), std::move(out), {x}, [inverse](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{permute(g, inverse)};
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  return permute(x, {1, 0});
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Index m = transpose_a ? a.dim(1) : a.dim(0);
  const Index ka = transpose_a ? a.dim(0) : a.dim(1);
  const Index kb = transpose_b ? b.dim(1) : b.dim(0);
  const Index n = transpose_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw ShapeError("matmul: shapes " + to_string(a.shape()) + (transpose_a ? "^T" : "") + " and " +
                     to_string(b.shape()) + (transpose_b ? "^T" : "") + " are incompatible");
  }
  Values out(static_cast<std::size_t>(m * n), Real(0));
  if (m > 0 && n > 0 && ka > 0) {
    Eigen::Map<const Mat> ma(a.data().data(), a.dim(0), a.dim(1));
    Eigen::Map<const Mat> mb(b.data().data(), b.dim(0), b.dim(1));
    Eigen::Map<Mat> mc(out.data(), m, n);
    if (!transpose_a && !transpose_b) {
      mc.noalias() = ma * mb;
    } else if (!transpose_a) {
      mc.noalias() = ma * mb.transpose();
    } else if (!transpose_b) {
      mc.noalias() = ma.transpose() * mb;
    } else {
      mc.noalias() = ma.transpose() * mb.transpose();
    }
  }
  return record("matmul", {m, n}, std::move(out), {a, b},
                [a, b, transpose_a, transpose_b](const Tensor& g, const std::vector<bool>& needs) {
                  Tensor ga, gb;
                  if (!transpose_a && !transpose_b) {
                    if (needs[0]) ga = matmul(g, b, false, true);
                    if (needs[1]) gb = matmul(a, g, true, false);
                  } else if (!transpose_a) {
                    if (needs[0]) ga = matmul(g, b, false, false);
                    if (needs[1]) gb = matmul(g, a, true, false);
                  } else if (!transpose_b) {
                    if (needs[0]) ga = matmul(b, g, false, true);
                    if (needs[1]) gb = matmul(a, g, false, false);
                  } else {
                    if (needs[0]) ga = matmul(b, g, true, true);
                    if (needs[1]) gb = matmul(g, a, true, true);
                  }
                  return std::vector<Tensor>{ga, gb};
                });
}

namespace {

struct ConvGeometry {
  Index n, c, h, w, k, stride, pad, oh, ow;
};

ConvGeometry conv_geometry(const Shape& image, Index kernel, Index stride, Index padding, const char* op) {
  if (image.size() != 4) throw ShapeError(std::string(op) + ": expected [N,C,H,W], got " + to_string(image));
  if (kernel < 1 || stride < 1 || padding < 0) throw ShapeError(std::string(op) + ": invalid kernel/stride/padding");
  ConvGeometry g{image[0], image[1], image[2], image[3], kernel, stride, padding, 0, 0};
  if (g.h + 2 * padding < kernel || g.w + 2 * padding < kernel) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(kernel) + " larger than padded input " +
                     to_string(image));
  }
  g.oh = (g.h + 2 * padding - kernel) / stride + 1;
  g.ow = (g.w + 2 * padding - kernel) / stride + 1;
  return g;
}

// Shared traversal for im2col (gather) and col2im (scatter-add).
template <class F>
void for_each_patch(const ConvGeometry& g, F&& f) {
  const Index cols = g.n * g.oh * g.ow;
  for (Index c = 0; c < g.c; ++c) {
    for (Index ki = 0; ki < g.k; ++ki) {
      for (Index kj = 0; kj < g.k; ++kj) {
        const Index row = (c * g.k + ki) * g.k + kj;
        for (Index n = 0; n < g.n; ++n) {
          for (Index oh = 0; oh < g.oh; ++oh) {
            const Index ih = oh * g.stride - g.pad + ki;
            const Index col0 = row * cols + (n * g.oh + oh) * g.ow;
            if (ih < 0 || ih >= g.h) continue;
            const Index img0 = ((n * g.c + c) * g.h + ih) * g.w;
            for (Index ow = 0; ow < g.ow; ++ow) {
              const Index iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < g.w) f(col0 + ow, img0 + iw);
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor im2col(const Tensor& x, std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
  const auto g = conv_geometry(x.shape(), kernel, stride, padding, "im2col");
  Values out(static_cast<std::size_t>(g.c * g.k * g.k * g.n * g.oh * g.ow), Real(0));
  const auto px = x.data();
  for_each_patch(g, [&](Index col, Index img) { out[col] = px[img]; });
  const Shape sx = x.shape();
  return record("im2col", {g.c * g.k * g.k, g.n * g.oh * g.ow}, std::move(out), {x},
                [sx, kernel, stride, padding](const Tensor& gy, const std::vector<bool>&) {
                  return std::vector<Tensor>{col2im(gy, sx, kernel, stride, padding)};
                });
}

Tensor col2im(const Tensor& cols, const Shape& image_shape, std::int64_t kernel, std::int64_t stride,
              std::int64_t padding) {
  const auto g = conv_geometry(image_shape, kernel, stride, padding, "col2im");
  const Shape expected{g.c * g.k * g.k, g.n * g.oh * g.ow};
  if (cols.shape() != expected) {
    throw ShapeError("col2im: expected columns " + to_string(expected) + ", got " + to_string(cols.shape()));
  }
  Values out(static_cast<std::size_t>(numel(image_shape)), Real(0));
  const auto pc = cols.data();
  for_each_patch(g, [&](Index col, Index img) { out[img] += pc[col]; });
  return record("col2im", image_shape, std::move(out), {cols},
                [kernel, stride, padding](const Tensor& gy, const std::vector<bool>&) {
                  return std::vector<Tensor>{im2col(gy, kernel, stride, padding)};
                });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t stride, std::int64_t padding) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const Index cout = weight.dim(0);
  const Index k = weight.dim(2);
  if (weight.dim(1) != x.dim(1) || weight.dim(3) != k) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " does not match input " + to_string(x.shape()));
  }
  const auto g = conv_geometry(x.shape(), k, stride, padding, "conv2d");
  Tensor cols = im2col(x, k, stride, padding);
  Tensor y = matmul(reshape(weight, {cout, -1}), cols);
  y = permute(reshape(y, {cout, g.n, g.oh, g.ow}), {1, 0, 2, 3});
  if (bias.defined()) {
    if (bias.shape() != Shape{cout}) {
      throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match " + std::to_string(cout) +
                       " output channels");
    }
    y = add(y, reshape(bias, {1, cout, 1, 1}));
  }
  return y;
}

Tensor avg_pool2d(const Tensor& x, std::int64_t kernel) {
  require_rank(x, 4, "avg_pool2d");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h / kernel, ow = w / kernel;
  if (oh == 0 || ow == 0) throw ShapeError("avg_pool2d: input " + to_string(x.shape()) + " smaller than kernel");
  Values out(static_cast<std::size_t>(n * c * oh * ow), Real(0));
  const auto px = x.data();
  const Real inv = Real(1) / static_cast<Real>(kernel * kernel);
  for (Index p = 0; p < n * c; ++p) {
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        Real acc = 0;
        for (Index a = 0; a < kernel; ++a) {
          for (Index b = 0; b < kernel; ++b) acc += px[(p * h + i * kernel + a) * w + j * kernel + b];
        }
        out[(p * oh + i) * ow + j] = acc * inv;
      }
    }
  }
  const Shape sx = x.shape();
  return record("avg_pool2d", {n, c, oh, ow}, std::move(out), {x}, [sx, kernel](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{avg_pool2d_adjoint(g, sx, kernel)};
  });
}

Tensor avg_pool2d_adjoint(const Tensor& grad, const Shape& input_shape, std::int64_t kernel) {
  require_rank(grad, 4, "avg_pool2d_adjoint");
  const Index n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
  const Index oh = h / kernel, ow = w / kernel;
  if (grad.shape() != Shape{n, c, oh, ow}) {
    throw ShapeError("avg_pool2d_adjoint: gradient " + to_string(grad.shape()) + " does not match " +
                     to_string(input_shape));
  }
  Values out(static_cast<std::size_t>(numel(input_shape)), Real(0));
  const auto pg = grad.data();
  const Real inv = Real(1) / static_cast<Real>(kernel * kernel);
  for (Index p = 0; p < n * c; ++p) {
    for (Index i = 0; i < oh * kernel; ++i) {
      for (Index j = 0; j < ow * kernel; ++j) out[(p * h + i) * w + j] = pg[(p * oh + i / kernel) * ow + j / kernel] * inv;
    }
  }
  return record("avg_pool2d_adjoint", input_shape, std::move(out), {grad},
                [kernel](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{avg_pool2d(g, kernel)}; });
}

Tensor max_pool2d(const Tensor& x, std::int64_t kernel) {
  require_rank(x, 4, "max_pool2d");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h / kernel, ow = w / kernel;
  if (oh == 0 || ow == 0) throw ShapeError("max_pool2d: input " + to_string(x.shape()) + " smaller than kernel");
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n * c * oh * ow));
  const auto px = x.data();
  for (Index p = 0; p < n * c; ++p) {
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        Index best = (p * h + i * kernel) * w + j * kernel;
        for (Index a = 0; a < kernel; ++a) {
          for (Index b = 0; b < kernel; ++b) {
            const Index at = (p * h + i * kernel + a) * w + j * kernel + b;
            if (px[at] > px[best]) best = at;
          }
        }
        (*index)[(p * oh + i) * ow + j] = best;
      }
    }
  }
  return gather_flat(x, std::move(index), {n, c, oh, ow});
}

Tensor gather_flat(const Tensor& x, IndexList index, Shape out_shape) {
  if (static_cast<Index>(index->size()) != numel(out_shape)) throw ShapeError("gather_flat: index/shape size mismatch");
  Values out(index->size());
  const auto px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[(*index)[i]];
  const Shape sx = x.shape();
  return record("gather_flat", std::move(out_shape), std::move(out), {x},
                [index, sx](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{scatter_add_flat(g, index, sx)};
                });
}

Tensor scatter_add_flat(const Tensor& x, IndexList index, Shape out_shape) {
  if (static_cast<Index>(index->size()) != x.numel()) throw ShapeError("scatter_add_flat: index/input size mismatch");
  Values out(static_cast<std::size_t>(numel(out_shape)), Real(0));
  const auto px = x.data();
  for (std::size_t i = 0; i < index->size(); ++i) out[(*index)[i]] += px[i];
  const Shape sx = x.shape();
  return record("scatter_add_flat", std::move(out_shape), std::move(out), {x},
                [index, sx](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{gather_flat(g, index, sx)};
                });
}

Tensor norm_rows(const Tensor& x) {
  require_rank(x, 2, "norm_rows");
  const Index rows = x.dim(0), cols = x.dim(1);
  Values out(static_cast<std::size_t>(rows));
  const auto px = x.data();
  for (Index r = 0; r < rows; ++r) {
    Real acc = 0;
    for (Index c = 0; c < cols; ++c) acc += px[r * cols + c] * px[r * cols + c];
    out[r] = std::sqrt(acc);
  }
  return record("norm_rows", {rows}, std::move(out), {x}, [x, rows](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{mul(x, reshape(div_safe(g, norm_rows(x)), {rows, 1}))};
  });
}

Tensor l2_norm(const Tensor& x) { return reshape(norm_rows(reshape(x, {1, x.numel()})), {}); }

Tensor normalize_rows(const Tensor& x, Real eps) {
  require_rank(x, 2, "normalize_rows");
  return div(x, sqrt(add_scalar(sum(square(x), {1}, true), eps)));
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState state, bool training,
                  Real eps) {
  require_rank(x, 4, "batch_norm");
  const Index c = x.dim(1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("batch_norm: affine parameters do not match " + std::to_string(c) + " channels");
  }
  const Tensor g4 = reshape(gamma, {1, c, 1, 1});
  const Tensor b4 = reshape(beta, {1, c, 1, 1});
  if (!training) {
    Values inv(static_cast<std::size_t>(c));
    for (Index i = 0; i < c; ++i) inv[i] = Real(1) / std::sqrt(state.running_var[i] + eps);
    const Tensor mu = Tensor::from({1, c, 1, 1}, state.running_mean);
    const Tensor scale_t = Tensor::from({1, c, 1, 1}, std::move(inv));
    return add(mul(mul(sub(x, mu), scale_t), g4), b4);
  }
  const Tensor mu = mean(x, {0, 2, 3}, true);
  const Tensor centered = sub(x, mu);
  const Tensor var = mean(square(centered), {0, 2, 3}, true);
  const Tensor normalized = div(centered, sqrt(add_scalar(var, eps)));
  const Index count = x.dim(0) * x.dim(2) * x.dim(3);
  const Real unbias = count > 1 ? static_cast<Real>(count) / static_cast<Real>(count - 1) : Real(1);
  const auto pm = mu.data();
  const auto pv = var.data();
  for (Index i = 0; i < c; ++i) {
    state.running_mean[i] = (Real(1) - state.momentum) * state.running_mean[i] + state.momentum * pm[i];
    state.running_var[i] = (Real(1) - state.momentum) * state.running_var[i] + state.momentum * pv[i] * unbias;
  }
  return add(mul(normalized, g4), b4);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight, false, true);
  return bias.defined() ? add(y, bias) : y;
}

namespace {

void check_labels(std::span<const int> labels, Index rows, Index classes, const char* op) {
  if (static_cast<Index>(labels.size()) != rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                     " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw std::out_of_range(std::string(op) + ": label " + std::to_string(y) + " outside [0," +
                              std::to_string(classes) + ")");
    }
  }
}

/// Per-row maxima as a [R,1] constant (no gradient path; used for stability).
Tensor row_max_constant(const Tensor& x) {
  const Index rows = x.dim(0), cols = x.dim(1);
  Values out(static_cast<std::size_t>(rows), -std::numeric_limits<Real>::infinity());
  const auto px = x.data();
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) out[r] = std::max(out[r], px[r * cols + c]);
  }
  return Tensor::from({rows, 1}, std::move(out));
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const Index rows = logits.dim(0), classes = logits.dim(1);
  if (rows == 0) throw ShapeError("cross_entropy: empty batch");
  check_labels(labels, rows, classes, "cross_entropy");
  const Tensor shifted = sub(logits, row_max_constant(logits));
  const Tensor log_probs = sub(shifted, log(sum(exp(shifted), {1}, true)));
  Values onehot(static_cast<std::size_t>(rows * classes), Real(0));
  for (Index r = 0; r < rows; ++r) onehot[r * classes + labels[r]] = Real(1);
  return scale(sum(mul(log_probs, Tensor::from({rows, classes}, std::move(onehot)))), Real(-1) / static_cast<Real>(rows));
}

Tensor supervised_contrastive(const Tensor& embeddings, std::span<const int> labels, Real temperature) {
  require_rank(embeddings, 2, "supervised_contrastive");
  const Index n = embeddings.dim(0);
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("supervised_contrastive: label count mismatch");
  if (temperature <= 0) throw std::invalid_argument("supervised_contrastive: temperature must be positive");
  Values self_mask(static_cast<std::size_t>(n * n), Real(1));
  Values positive_weight(static_cast<std::size_t>(n * n), Real(0));
  Index anchors = 0;
  for (Index i = 0; i < n; ++i) {
    self_mask[i * n + i] = Real(0);
    Index positives = 0;
    for (Index j = 0; j < n; ++j) positives += (j != i && labels[j] == labels[i]) ? 1 : 0;
    if (positives == 0) continue;
    ++anchors;
    for (Index j = 0; j < n; ++j) {
      if (j != i && labels[j] == labels[i]) positive_weight[i * n + j] = Real(1) / static_cast<Real>(positives);
    }
  }
  if (anchors == 0) return Tensor::scalar(Real(0));
  const Tensor sim = scale(matmul(embeddings, embeddings, false, true), Real(1) / temperature);
  const Tensor logits = sub(sim, row_max_constant(sim));
  const Tensor others = Tensor::from({n, n}, std::move(self_mask));
  const Tensor log_denominator = log(sum(mul(exp(logits), others), {1}, true));
  const Tensor log_prob = sub(logits, log_denominator);
  const Tensor per_anchor = sum(mul(log_prob, Tensor::from({n, n}, std::move(positive_weight))), {1}, false);
  return scale(sum(per_anchor), Real(-1) / static_cast<Real>(anchors));
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
