#include "mistseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "mistseg/errors.hpp"

namespace mistseg {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in->requires_grad;
    if (any) {
      node->requires_grad = true;
      node->inputs = std::move(inputs);
      node->backward = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

std::vector<double>* grad_of(const NodePtr& n) { return n->requires_grad ? &n->ensure_grad() : nullptr; }

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void require_rank(const char* op, const Tensor& t, std::size_t rank, const char* name) {
  if (t.rank() != rank) {
    shape_fail(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got shape " +
                       shape_str(t.shape()));
  }
}

Shape broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.numel() == 1 && b.numel() == 1) return a.rank() >= b.rank() ? a.shape() : b.shape();
  if (b.numel() == 1) return a.shape();
  if (a.numel() == 1) return b.shape();
  shape_fail(op, "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " are incompatible");
}

// Elementwise binary op with single-element broadcasting. `da`/`db` return the
// local partial derivatives at (x, y).
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  Shape shape = broadcast_shape(op, a, b);
  const std::size_t n = shape_numel(shape);
  const bool a_bcast = a.numel() == 1 && n != 1;
  const bool b_bcast = b.numel() == 1 && n != 1;
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[a_bcast ? 0 : i], bd[b_bcast ? 0 : i]);
  return make_result(op, std::move(shape), std::move(out), {a.node(), b.node()},
                     [a_bcast, b_bcast, da, db](Node& self) {
                       const auto& an = self.inputs[0];
                       const auto& bn = self.inputs[1];
                       auto* ga = grad_of(an);
                       auto* gb = grad_of(bn);
                       const std::size_t n = self.data.size();
                       for (std::size_t i = 0; i < n; ++i) {
                         const double x = an->data[a_bcast ? 0 : i];
                         const double y = bn->data[b_bcast ? 0 : i];
                         const double g = self.grad[i];
                         if (ga) (*ga)[a_bcast ? 0 : i] += g * da(x, y);
                         if (gb) (*gb)[b_bcast ? 0 : i] += g * db(x, y);
                       }
                     });
}

// Elementwise unary op; `d` receives (input, output) and returns dy/dx.
template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D d) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return make_result(op, x.shape(), std::move(out), {x.node()}, [d](Node& self) {
    const auto& in = self.inputs[0];
    auto& g = in->ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) g[i] += self.grad[i] * d(in->data[i], self.data[i]);
  });
}

struct Dims4 {
  std::size_t n, c, h, w;
};

Dims4 dims4(const char* op, const Tensor& t, const char* name) {
  require_rank(op, t, 4, name);
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

// Unfolds one image (C x H x W) into a (C*K*K) x (Ho*Wo) patch matrix.
void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, double* col) {
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((ch * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          double* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = img + (ch * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, double* img) {
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((ch * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          double* dst = img + (ch * h + static_cast<std::size_t>(iy)) * w;
          const double* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct BilinearTap {
  std::size_t i0, i1;
  double l1;  // weight of i1; i0 gets 1 - l1
};

std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<BilinearTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(
      "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary(
      "mul_scalar", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor operator-(double c, const Tensor& a) {
  return unary(
      "rsub_scalar", a, [c](double v) { return c - v; }, [](double, double) { return -1.0; });
}

Tensor operator-(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor pow(const Tensor& x, double exponent) {
  return unary(
      "pow", x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result("sum", Shape{}, {total}, {x.node()}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) shape_fail("mean", "empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_dim(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) shape_fail("sum_dim", "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<long>(axis));
  std::vector<double> out(outer * inner, 0.0);
  auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xd[(o * len + k) * inner + i];
  return make_result("sum_dim", std::move(out_shape), std::move(out), {x.node()},
                     [outer, len, inner](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t k = 0; k < len; ++k)
                           for (std::size_t i = 0; i < inner; ++i)
                             g[(o * len + k) * inner + i] += self.grad[o * inner + i];
                     });
}

Tensor mean_dim(const Tensor& x, std::size_t axis) {
  return mul_scalar(sum_dim(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x.node()}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor Tensor::reshape(Shape shape) const { return mistseg::reshape(*this, std::move(shape)); }

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) shape_fail("concat", "axis " + std::to_string(axis) + " out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> blocks;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_fail("concat", "rank mismatch " + shape_str(s) + " vs " + shape_str(first));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        shape_fail("concat", "dimension " + std::to_string(d) + " differs: " + shape_str(s) + " vs " +
                                 shape_str(first));
      }
    }
    out_shape[axis] += s[axis];
    blocks.push_back(s[axis] * inner);
  }
  const std::size_t row = out_shape[axis] * inner;
  std::vector<double> out(outer * row);
  std::vector<NodePtr> inputs;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pd = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.begin() + static_cast<long>(o * blocks[p]), blocks[p], out.begin() + static_cast<long>(o * row + offset));
    offset += blocks[p];
    inputs.push_back(parts[p].node());
  }
  return make_result("concat", std::move(out_shape), std::move(out), std::move(inputs),
                     [blocks, outer, row](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < blocks.size(); ++p) {
                         if (auto* g = grad_of(self.inputs[p])) {
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t i = 0; i < blocks[p]; ++i)
                               (*g)[o * blocks[p] + i] += self.grad[o * row + offset + i];
                         }
                         offset += blocks[p];
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin >= end || end > x.dim(0)) {
    shape_fail("slice", "rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                            shape_str(x.shape()));
  }
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  auto xd = x.data();
  std::vector<double> out(xd.begin() + static_cast<long>(begin * row), xd.begin() + static_cast<long>(end * row));
  return make_result("slice", std::move(shape), std::move(out), {x.node()}, [begin, row](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * row + i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  if (x.rank() == 0) shape_fail("gather_rows", "scalar input");
  const std::size_t rows = x.dim(0);
  const std::size_t row = x.numel() / rows;
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (auto i : idx) {
    if (i >= rows) shape_fail("gather_rows", "index " + std::to_string(i) + " out of range for dimension 0 of size " + std::to_string(rows));
  }
  Shape shape = x.shape();
  shape[0] = idx.size();
  auto xd = x.data();
  std::vector<double> out(idx.size() * row);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(xd.begin() + static_cast<long>(idx[r] * row), row, out.begin() + static_cast<long>(r * row));
  return make_result("gather_rows", std::move(shape), std::move(out), {x.node()}, [idx, row](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t i = 0; i < row; ++i) g[idx[r] * row + i] += self.grad[r * row + i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2, "lhs");
  require_rank("matmul", b, 2, "rhs");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    shape_fail("matmul", "inner dimension mismatch: lhs dim 1 is " + std::to_string(k) + ", rhs dim 0 is " +
                             std::to_string(b.dim(0)));
  }
  std::vector<double> out(n * m);
  MapMat(out.data(), n, m).noalias() = ConstMapMat(a.data().data(), n, k) * ConstMapMat(b.data().data(), k, m);
  return make_result("matmul", Shape{n, m}, std::move(out), {a.node(), b.node()}, [n, k, m](Node& self) {
    ConstMapMat g(self.grad.data(), n, m);
    const auto& an = self.inputs[0];
    const auto& bn = self.inputs[1];
    if (auto* ga = grad_of(an)) MapMat(ga->data(), n, k).noalias() += g * ConstMapMat(bn->data.data(), k, m).transpose();
    if (auto* gb = grad_of(bn)) MapMat(gb->data(), k, m).noalias() += ConstMapMat(an->data.data(), n, k).transpose() * g;
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2, "input");
  require_rank("linear", weight, 2, "weight");
  require_rank("linear", bias, 1, "bias");
  const std::size_t n = x.dim(0), d = x.dim(1), e = weight.dim(1);
  if (weight.dim(0) != d) {
    shape_fail("linear", "weight dim 0 is " + std::to_string(weight.dim(0)) + " but input dim 1 is " + std::to_string(d));
  }
  if (bias.dim(0) != e) {
    shape_fail("linear", "bias dim 0 is " + std::to_string(bias.dim(0)) + " but weight dim 1 is " + std::to_string(e));
  }
  std::vector<double> out(n * e);
  MapMat o(out.data(), n, e);
  o.noalias() = ConstMapMat(x.data().data(), n, d) * ConstMapMat(weight.data().data(), d, e);
  Eigen::Map<const Eigen::RowVectorXd> bv(bias.data().data(), e);
  o.rowwise() += bv;
  return make_result("linear", Shape{n, e}, std::move(out), {x.node(), weight.node(), bias.node()},
                     [n, d, e](Node& self) {
                       ConstMapMat g(self.grad.data(), n, e);
                       const auto& xn = self.inputs[0];
                       const auto& wn = self.inputs[1];
                       if (auto* gx = grad_of(xn))
                         MapMat(gx->data(), n, d).noalias() += g * ConstMapMat(wn->data.data(), d, e).transpose();
                       if (auto* gw = grad_of(wn))
                         MapMat(gw->data(), d, e).noalias() += ConstMapMat(xn->data.data(), n, d).transpose() * g;
                       if (auto* gb = grad_of(self.inputs[2])) {
                         Eigen::Map<Eigen::RowVectorXd>(gb->data(), e) += g.colwise().sum();
                       }
                     });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias, std::size_t stride,
              std::size_t padding) {
  const auto in = dims4("conv2d", input, "input");
  const auto kd = dims4("conv2d", kernel, "kernel");
  if (kd.h != kd.w) shape_fail("conv2d", "kernel must be square, got " + shape_str(kernel.shape()));
  if (kd.c != in.c) {
    shape_fail("conv2d", "input channel dimension 1 is " + std::to_string(in.c) + " but kernel expects " +
                             std::to_string(kd.c));
  }
  if (stride == 0) shape_fail("conv2d", "stride must be positive");
  const std::size_t k = kd.h;
  if (in.h + 2 * padding < k) shape_fail("conv2d", "input height " + std::to_string(in.h) + " smaller than kernel after padding");
  if (in.w + 2 * padding < k) shape_fail("conv2d", "input width " + std::to_string(in.w) + " smaller than kernel after padding");
  if (bias && (bias->rank() != 1 || bias->dim(0) != kd.n)) {
    shape_fail("conv2d", "bias must have shape [" + std::to_string(kd.n) + "], got " + shape_str(bias->shape()));
  }
  const std::size_t ho = (in.h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (in.w + 2 * padding - k) / stride + 1;
  const std::size_t ckk = in.c * k * k, hw = ho * wo, oc = kd.n;

  std::vector<double> out(in.n * oc * hw);
  std::vector<double> col(ckk * hw);
  ConstMapMat wmat(kernel.data().data(), oc, ckk);
  for (std::size_t b = 0; b < in.n; ++b) {
    im2col(input.data().data() + b * in.c * in.h * in.w, in.c, in.h, in.w, k, stride, padding, ho, wo, col.data());
    MapMat o(out.data() + b * oc * hw, oc, hw);
    o.noalias() = wmat * ConstMapMat(col.data(), ckk, hw);
    if (bias) {
      auto bd = bias->data();
      for (std::size_t c = 0; c < oc; ++c) o.row(static_cast<long>(c)).array() += bd[c];
    }
  }
  std::vector<NodePtr> inputs{input.node(), kernel.node()};
  if (bias) inputs.push_back(bias->node());
  return make_result("conv2d", Shape{in.n, oc, ho, wo}, std::move(out), std::move(inputs),
                     [in, k, stride, padding, ho, wo, ckk, hw, oc](Node& self) {
                       const auto& xn = self.inputs[0];
                       const auto& kn = self.inputs[1];
                       auto* gx = grad_of(xn);
                       auto* gk = grad_of(kn);
                       std::vector<double>* gb = self.inputs.size() > 2 ? grad_of(self.inputs[2]) : nullptr;
                       std::vector<double> col(ckk * hw);
                       std::vector<double> dcol(gx ? ckk * hw : 0);
                       ConstMapMat wmat(kn->data.data(), oc, ckk);
                       for (std::size_t b = 0; b < in.n; ++b) {
                         ConstMapMat g(self.grad.data() + b * oc * hw, oc, hw);
                         if (gk) {
                           im2col(xn->data.data() + b * in.c * in.h * in.w, in.c, in.h, in.w, k, stride, padding, ho,
                                  wo, col.data());
                           MapMat(gk->data(), oc, ckk).noalias() += g * ConstMapMat(col.data(), ckk, hw).transpose();
                         }
                         if (gx) {
                           MapMat(dcol.data(), ckk, hw).noalias() = wmat.transpose() * g;
                           col2im(dcol.data(), in.c, in.h, in.w, k, stride, padding, ho, wo,
                                  gx->data() + b * in.c * in.h * in.w);
                         }
                         if (gb) {
                           for (std::size_t c = 0; c < oc; ++c) (*gb)[c] += g.row(static_cast<long>(c)).sum();
                         }
                       }
                     });
}

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  const auto d = dims4("resize_bilinear", x, "input");
  if (out_h == 0 || out_w == 0 || d.h == 0 || d.w == 0) shape_fail("resize_bilinear", "empty spatial size");
  auto ty = bilinear_taps(d.h, out_h);
  auto tx = bilinear_taps(d.w, out_w);
  std::vector<double> out(d.n * d.c * out_h * out_w);
  auto xd = x.data();
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const double* src = xd.data() + p * d.h * d.w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      const double* r0 = src + a.i0 * d.w;
      const double* r1 = src + a.i1 * d.w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const double top = (1.0 - b.l1) * r0[b.i0] + b.l1 * r0[b.i1];
        const double bot = (1.0 - b.l1) * r1[b.i0] + b.l1 * r1[b.i1];
        dst[oy * out_w + ox] = (1.0 - a.l1) * top + a.l1 * bot;
      }
    }
  }
  return make_result("resize_bilinear", Shape{d.n, d.c, out_h, out_w}, std::move(out), {x.node()},
                     [d, out_h, out_w, ty, tx](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t p = 0; p < d.n * d.c; ++p) {
                         double* dst = g.data() + p * d.h * d.w;
                         const double* src = self.grad.data() + p * out_h * out_w;
                         for (std::size_t oy = 0; oy < out_h; ++oy) {
                           const auto& a = ty[oy];
                           for (std::size_t ox = 0; ox < out_w; ++ox) {
                             const auto& b = tx[ox];
                             const double v = src[oy * out_w + ox];
                             dst[a.i0 * d.w + b.i0] += (1.0 - a.l1) * (1.0 - b.l1) * v;
                             dst[a.i0 * d.w + b.i1] += (1.0 - a.l1) * b.l1 * v;
                             dst[a.i1 * d.w + b.i0] += a.l1 * (1.0 - b.l1) * v;
                             dst[a.i1 * d.w + b.i1] += a.l1 * b.l1 * v;
                           }
                         }
                       }
                     });
}

Tensor upsample2x(const Tensor& x) {
  require_rank("upsample2x", x, 4, "input");
  return resize_bilinear(x, 2 * x.dim(2), 2 * x.dim(3));
}

Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  const auto d = dims4("avg_pool2d", x, "input");
  if (kernel == 0 || stride == 0) shape_fail("avg_pool2d", "kernel and stride must be positive");
  if (d.h + 2 * padding < kernel || d.w + 2 * padding < kernel) shape_fail("avg_pool2d", "input smaller than window");
  const std::size_t ho = (d.h + 2 * padding - kernel) / stride + 1;
  const std::size_t wo = (d.w + 2 * padding - kernel) / stride + 1;
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  auto xd = x.data();
  std::vector<double> out(d.n * d.c * ho * wo, 0.0);
  auto for_window = [=](std::size_t oy, std::size_t ox, auto&& fn) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
      if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
        if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
        fn(static_cast<std::size_t>(iy) * d.w + static_cast<std::size_t>(ix));
      }
    }
  };
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const double* src = xd.data() + p * d.h * d.w;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for_window(oy, ox, [&](std::size_t i) { acc += src[i]; });
        out[(p * ho + oy) * wo + ox] = acc * inv;
      }
  }
  return make_result("avg_pool2d", Shape{d.n, d.c, ho, wo}, std::move(out), {x.node()},
                     [d, ho, wo, inv, for_window](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t p = 0; p < d.n * d.c; ++p) {
                         double* dst = g.data() + p * d.h * d.w;
                         for (std::size_t oy = 0; oy < ho; ++oy)
                           for (std::size_t ox = 0; ox < wo; ++ox) {
                             const double v = self.grad[(p * ho + oy) * wo + ox] * inv;
                             for_window(oy, ox, [&](std::size_t i) { dst[i] += v; });
                           }
                       }
                     });
}

Tensor global_avg_pool(const Tensor& x) {
  const auto d = dims4("global_avg_pool", x, "input");
  return mean_dim(reshape(x, Shape{d.n, d.c, d.h * d.w}), 2);
}

Tensor tile_spatial(const Tensor& z, std::size_t h, std::size_t w) {
  require_rank("tile_spatial", z, 2, "latent");
  const std::size_t n = z.dim(0), l = z.dim(1), hw = h * w;
  if (hw == 0) shape_fail("tile_spatial", "empty spatial size");
  std::vector<double> out(n * l * hw);
  auto zd = z.data();
  for (std::size_t p = 0; p < n * l; ++p) std::fill_n(out.begin() + static_cast<long>(p * hw), hw, zd[p]);
  return make_result("tile_spatial", Shape{n, l, h, w}, std::move(out), {z.node()}, [n, l, hw](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t p = 0; p < n * l; ++p) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += self.grad[p * hw + i];
      g[p] += acc;
    }
  });
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto d = dims4("instance_norm", x, "input");
  if (gamma.numel() != d.c || beta.numel() != d.c) {
    shape_fail("instance_norm", "affine parameters must have " + std::to_string(d.c) + " entries (dimension 1)");
  }
  const std::size_t m = d.h * d.w;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(d.n * d.c);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t p = n * d.c + c;
      const double* src = xd.data() + p * m;
      double mu = 0.0;
      for (std::size_t i = 0; i < m; ++i) mu += src[i];
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
      var /= static_cast<double>(m);
      inv_std[p] = 1.0 / std::sqrt(var + eps);
      for (std::size_t i = 0; i < m; ++i) {
        xhat[p * m + i] = (src[i] - mu) * inv_std[p];
        out[p * m + i] = gd[c] * xhat[p * m + i] + bd[c];
      }
    }
  }
  return make_result("instance_norm", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
                     [d, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       auto* gx = grad_of(self.inputs[0]);
                       auto* gg = grad_of(self.inputs[1]);
                       auto* gb = grad_of(self.inputs[2]);
                       const auto& gamma = self.inputs[1]->data;
                       const double md = static_cast<double>(m);
                       for (std::size_t n = 0; n < d.n; ++n) {
                         for (std::size_t c = 0; c < d.c; ++c) {
                           const std::size_t p = n * d.c + c;
                           const double* g = self.grad.data() + p * m;
                           const double* xh = xhat.data() + p * m;
                           double sum_g = 0.0, sum_gx = 0.0;
                           for (std::size_t i = 0; i < m; ++i) {
                             sum_g += g[i];
                             sum_gx += g[i] * xh[i];
                           }
                           if (gg) (*gg)[c] += sum_gx;
                           if (gb) (*gb)[c] += sum_g;
                           if (gx) {
                             const double scale = gamma[c] * inv_std[p] / md;
                             double* dst = gx->data() + p * m;
                             for (std::size_t i = 0; i < m; ++i) dst[i] += scale * (md * g[i] - sum_g - xh[i] * sum_gx);
                           }
                         }
                       }
                     });
}

}  // namespace mistseg
