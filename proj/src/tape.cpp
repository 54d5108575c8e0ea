#include "funcspace/tape.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "funcspace/mathx.hpp"

namespace funcspace::diff {

namespace {

// dst[y,x] += w * src[y+dy, x+dx] over the intersection of both index
// ranges. The shared kernel behind both convolution directions.
void shifted_mac(double* dst, const double* src, std::size_t h, std::size_t w,
                 int dy, int dx, double coeff) {
  const int hi = static_cast<int>(h);
  const int wi = static_cast<int>(w);
  const int y0 = std::max(0, -dy);
  const int y1 = std::min(hi, hi - dy);
  const int x0 = std::max(0, -dx);
  const int x1 = std::min(wi, wi - dx);
  for (int y = y0; y < y1; ++y) {
    double* d = dst + static_cast<std::size_t>(y) * w;
    const double* s = src + static_cast<std::size_t>(y + dy) * w + dx;
    for (int x = x0; x < x1; ++x) d[x] += coeff * s[x];
  }
}

// sum over the valid window of a[y,x] * b[y+dy, x+dx].
double shifted_dot(const double* a, const double* b, std::size_t h,
                   std::size_t w, int dy, int dx) {
  const int hi = static_cast<int>(h);
  const int wi = static_cast<int>(w);
  const int y0 = std::max(0, -dy);
  const int y1 = std::min(hi, hi - dy);
  const int x0 = std::max(0, -dx);
  const int x1 = std::min(wi, wi - dx);
  double acc = 0.0;
  for (int y = y0; y < y1; ++y) {
    const double* pa = a + static_cast<std::size_t>(y) * w;
    const double* pb = b + static_cast<std::size_t>(y + dy) * w + dx;
    for (int x = x0; x < x1; ++x) acc += pa[x] * pb[x];
  }
  return acc;
}

std::string node_tag(OpKind op, std::uint32_t id) {
  return std::string(op_name(op)) + " (node " + std::to_string(id) + ")";
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kShift: return "shift";
    case OpKind::kAxpy: return "axpy_scalar";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kConv2dT: return "conv2d_transpose";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kAbs: return "abs";
    case OpKind::kPow: return "pow";
    case OpKind::kSum: return "sum";
    case OpKind::kMin: return "min";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice1d: return "slice1d";
    case OpKind::kSlice2d: return "slice2d";
    case OpKind::kScaleCols: return "scale_cols";
    case OpKind::kScaleRows: return "scale_rows";
  }
  return "?";
}

const Tape::Node& Tape::checked(Var v, const char* what) const {
  if (v.tape() != this) {
    throw ShapeError(std::string(what) + ": var belongs to another tape");
  }
  return nodes_[v.id()];
}

// --- Leaves ------------------------------------------------------------------

Var Tape::constant(Tensor v) {
  Node n;
  n.value = std::move(v);
  if (finite_checks_ && !n.value.all_finite()) {
    throw NonFiniteError("constant leaf holds a non-finite value (node " +
                             std::to_string(nodes_.size()) + ")",
                         nodes_.size());
  }
  return make_leaf(std::move(n), false);
}

Var Tape::constant_ref(const Tensor* v) {
  Node n;
  n.external = v;
  return make_leaf(std::move(n), false);
}

Var Tape::variable(Tensor v) {
  Node n;
  n.value = std::move(v);
  if (finite_checks_ && !n.value.all_finite()) {
    throw NonFiniteError("variable leaf holds a non-finite value (node " +
                             std::to_string(nodes_.size()) + ")",
                         nodes_.size());
  }
  return make_leaf(std::move(n), true);
}

Var Tape::param(const Tensor* v, Tensor* grad_sink) {
  Node n;
  n.external = v;
  n.sink = grad_sink;
  return make_leaf(std::move(n), true);
}

// --- Node construction --------------------------------------------------------

Var Tape::make_leaf(Node&& n, bool requires_grad) {
  n.op = OpKind::kLeaf;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

std::uint32_t Tape::push(Node&& n, std::span<const Var> args) {
  n.arg_begin = static_cast<std::uint32_t>(args_.size());
  n.arg_count = static_cast<std::uint32_t>(args.size());
  for (const Var& a : args) {
    checked(a, op_name(n.op));
    args_.push_back(a.id());
    n.requires_grad = n.requires_grad || nodes_[a.id()].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return static_cast<std::uint32_t>(nodes_.size() - 1);
}

Var Tape::make(OpKind op, std::span<const Var> args, double a0,
               std::array<std::uint32_t, 4> bounds, Shape out_shape) {
  Node n;
  n.op = op;
  n.a0 = a0;
  n.bounds = bounds;
  if (!out_shape.empty()) n.value = Tensor(std::move(out_shape));
  const std::uint32_t id = push(std::move(n), args);
  compute(nodes_[id], id);
  if (finite_checks_) check_finite(nodes_[id], id);
  return Var(this, id);
}

void Tape::check_finite(const Node& n, std::uint32_t id) const {
  // Data-movement ops cannot introduce non-finite values.
  switch (n.op) {
    case OpKind::kReshape:
    case OpKind::kConcat:
    case OpKind::kSlice1d:
    case OpKind::kSlice2d:
      return;
    default:
      break;
  }
  const Tensor& v = node_value(n);
  const double* p = v.ptr();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(p[i])) {
      throw NonFiniteError("non-finite value in " + node_tag(n.op, id) +
                               " at element " + std::to_string(i),
                           id);
    }
  }
}

// --- Op factories --------------------------------------------------------------

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shapes differ " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}
void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) +
                     ", got " + shape_str(t.shape()));
  }
}
}  // namespace

Var Tape::add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  return make(OpKind::kAdd, std::array{a, b}, 0.0, {}, a.value().shape());
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  return make(OpKind::kSub, std::array{a, b}, 0.0, {}, a.value().shape());
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  return make(OpKind::kMul, std::array{a, b}, 0.0, {}, a.value().shape());
}

Var Tape::scale(Var a, double c) {
  return make(OpKind::kScale, std::array{a}, c, {}, a.value().shape());
}

Var Tape::shift(Var a, double c) {
  return make(OpKind::kShift, std::array{a}, c, {}, a.value().shape());
}

Var Tape::axpy_scalar(Var a, Var s, double c) {
  if (s.value().size() != 1) {
    throw ShapeError("axpy_scalar: s must be a scalar, got " +
                     shape_str(s.value().shape()));
  }
  return make(OpKind::kAxpy, std::array{a, s}, c, {}, a.value().shape());
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  require_rank(ta, 2, "matmul");
  require_rank(tb, 2, "matmul");
  if (ta.dim(1) != tb.dim(0)) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(ta.shape()) +
                     " x " + shape_str(tb.shape()));
  }
  return make(OpKind::kMatMul, std::array{a, b}, 0.0, {},
              Shape{ta.dim(0), tb.dim(1)});
}

Var Tape::conv2d(Var x, Var kernel) {
  const Tensor& tx = x.value();
  const Tensor& tk = kernel.value();
  require_rank(tx, 3, "conv2d");
  require_rank(tk, 4, "conv2d");
  if (tk.dim(1) != tx.dim(0)) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(tk.dim(1)) +
                     " input channels, image has " + std::to_string(tx.dim(0)));
  }
  if (tk.dim(2) % 2 == 0 || tk.dim(3) % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd for same-padding");
  }
  return make(OpKind::kConv2d, std::array{x, kernel}, 0.0, {},
              Shape{tk.dim(0), tx.dim(1), tx.dim(2)});
}

Var Tape::conv2d_transpose(Var x, Var kernel) {
  const Tensor& tx = x.value();
  const Tensor& tk = kernel.value();
  require_rank(tx, 3, "conv2d_transpose");
  require_rank(tk, 4, "conv2d_transpose");
  if (tk.dim(0) != tx.dim(0)) {
    throw ShapeError("conv2d_transpose: kernel expects " +
                     std::to_string(tk.dim(0)) + " input channels, image has " +
                     std::to_string(tx.dim(0)));
  }
  if (tk.dim(2) % 2 == 0 || tk.dim(3) % 2 == 0) {
    throw ShapeError(
        "conv2d_transpose: kernel extents must be odd for same-padding");
  }
  return make(OpKind::kConv2dT, std::array{x, kernel}, 0.0, {},
              Shape{tk.dim(1), tx.dim(1), tx.dim(2)});
}

Var Tape::sigmoid(Var a) {
  return make(OpKind::kSigmoid, std::array{a}, 0.0, {}, a.value().shape());
}

Var Tape::leaky_relu(Var a, double slope) {
  return make(OpKind::kLeakyRelu, std::array{a}, slope, {}, a.value().shape());
}

Var Tape::abs(Var a) {
  return make(OpKind::kAbs, std::array{a}, 0.0, {}, a.value().shape());
}

Var Tape::pow(Var a, double exponent) {
  return make(OpKind::kPow, std::array{a}, exponent, {}, a.value().shape());
}

Var Tape::sum(Var a) {
  return make(OpKind::kSum, std::array{a}, 0.0, {}, Shape{1});
}

Var Tape::min_of(std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("min: empty input set");
  for (const Var& v : xs) {
    if (v.value().size() != 1) {
      throw ShapeError("min: inputs must be scalars, got " +
                       shape_str(v.value().shape()));
    }
  }
  return make(OpKind::kMin, xs, 0.0, {}, Shape{1});
}

Var Tape::reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw ShapeError("reshape: size mismatch, " + shape_str(a.value().shape()) +
                     " to " + shape_str(shape));
  }
  return make(OpKind::kReshape, std::array{a}, 0.0, {}, std::move(shape));
}

Var Tape::concat(std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("concat: empty input set");
  std::size_t total = 0;
  for (const Var& v : xs) total += v.value().size();
  return make(OpKind::kConcat, xs, 0.0, {}, Shape{total});
}

Var Tape::slice1d(Var a, std::size_t begin, std::size_t end) {
  const Tensor& t = a.value();
  require_rank(t, 1, "slice1d");
  if (begin > end || end > t.dim(0)) {
    throw ShapeError("slice1d: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") out of " + shape_str(t.shape()));
  }
  return make(OpKind::kSlice1d, std::array{a}, 0.0,
              {static_cast<std::uint32_t>(begin),
               static_cast<std::uint32_t>(end), 0, 0},
              Shape{end - begin});
}

Var Tape::slice2d(Var a, std::size_t r0, std::size_t r1, std::size_t c0,
                  std::size_t c1) {
  const Tensor& t = a.value();
  require_rank(t, 2, "slice2d");
  if (r0 > r1 || r1 > t.dim(0) || c0 > c1 || c1 > t.dim(1)) {
    throw ShapeError("slice2d: window out of bounds for " +
                     shape_str(t.shape()));
  }
  return make(OpKind::kSlice2d, std::array{a}, 0.0,
              {static_cast<std::uint32_t>(r0), static_cast<std::uint32_t>(r1),
               static_cast<std::uint32_t>(c0), static_cast<std::uint32_t>(c1)},
              Shape{r1 - r0, c1 - c0});
}

Var Tape::scale_cols(Var a, Var g) {
  const Tensor& ta = a.value();
  const Tensor& tg = g.value();
  require_rank(ta, 2, "scale_cols");
  require_rank(tg, 1, "scale_cols");
  if (tg.dim(0) != ta.dim(1)) {
    throw ShapeError("scale_cols: gate length " + std::to_string(tg.dim(0)) +
                     " vs " + shape_str(ta.shape()));
  }
  return make(OpKind::kScaleCols, std::array{a, g}, 0.0, {}, ta.shape());
}

Var Tape::scale_rows(Var a, Var g) {
  const Tensor& ta = a.value();
  const Tensor& tg = g.value();
  require_rank(ta, 2, "scale_rows");
  require_rank(tg, 1, "scale_rows");
  if (tg.dim(0) != ta.dim(0)) {
    throw ShapeError("scale_rows: gate length " + std::to_string(tg.dim(0)) +
                     " vs " + shape_str(ta.shape()));
  }
  return make(OpKind::kScaleRows, std::array{a, g}, 0.0, {}, ta.shape());
}

// --- Forward ------------------------------------------------------------------

void Tape::compute(Node& n, std::uint32_t id) {
  const std::uint32_t* arg = args_.data() + n.arg_begin;
  auto in = [&](std::size_t i) -> const Tensor& {
    return node_value(nodes_[arg[i]]);
  };
  double* out = n.value.ptr();
  const std::size_t count = n.value.size();

  switch (n.op) {
    case OpKind::kLeaf:
      break;
    case OpKind::kAdd: {
      const double* a = in(0).ptr();
      const double* b = in(1).ptr();
      for (std::size_t i = 0; i < count; ++i) out[i] = a[i] + b[i];
      break;
    }
    case OpKind::kSub: {
      const double* a = in(0).ptr();
      const double* b = in(1).ptr();
      for (std::size_t i = 0; i < count; ++i) out[i] = a[i] - b[i];
      break;
    }
    case OpKind::kMul: {
      const double* a = in(0).ptr();
      const double* b = in(1).ptr();
      for (std::size_t i = 0; i < count; ++i) out[i] = a[i] * b[i];
      break;
    }
    case OpKind::kScale: {
      const double* a = in(0).ptr();
      for (std::size_t i = 0; i < count; ++i) out[i] = n.a0 * a[i];
      break;
    }
    case OpKind::kShift: {
      const double* a = in(0).ptr();
      for (std::size_t i = 0; i < count; ++i) out[i] = a[i] + n.a0;
      break;
    }
    case OpKind::kAxpy: {
      const double* a = in(0).ptr();
      const double s = n.a0 * in(1)[0];
      for (std::size_t i = 0; i < count; ++i) out[i] = a[i] + s;
      break;
    }
    case OpKind::kMatMul: {
      const Tensor& A = in(0);
      const Tensor& B = in(1);
      const std::size_t m = A.dim(0), k = A.dim(1), p = B.dim(1);
      const double* pa = A.ptr();
      const double* pb = B.ptr();
      for (std::size_t i = 0; i < m; ++i) {
        double* row = out + i * p;
        for (std::size_t j = 0; j < p; ++j) row[j] = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double a = pa[i * k + kk];
          const double* brow = pb + kk * p;
          for (std::size_t j = 0; j < p; ++j) row[j] += a * brow[j];
        }
      }
      break;
    }
    case OpKind::kConv2d: {
      const Tensor& X = in(0);
      const Tensor& K = in(1);
      const std::size_t ci_n = X.dim(0), h = X.dim(1), w = X.dim(2);
      const std::size_t co_n = K.dim(0), kh = K.dim(2), kw = K.dim(3);
      const int py = static_cast<int>(kh) / 2, px = static_cast<int>(kw) / 2;
      n.value.fill(0.0);
      for (std::size_t co = 0; co < co_n; ++co) {
        double* plane = out + co * h * w;
        for (std::size_t ci = 0; ci < ci_n; ++ci) {
          const double* src = X.ptr() + ci * h * w;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const double coeff = K.at(co, ci, ky, kx);
              shifted_mac(plane, src, h, w, static_cast<int>(ky) - py,
                          static_cast<int>(kx) - px, coeff);
            }
          }
        }
      }
      break;
    }
    case OpKind::kConv2dT: {
      const Tensor& X = in(0);
      const Tensor& K = in(1);
      const std::size_t ci_n = X.dim(0), h = X.dim(1), w = X.dim(2);
      const std::size_t co_n = K.dim(1), kh = K.dim(2), kw = K.dim(3);
      const int py = static_cast<int>(kh) / 2, px = static_cast<int>(kw) / 2;
      n.value.fill(0.0);
      for (std::size_t ci = 0; ci < ci_n; ++ci) {
        const double* src = X.ptr() + ci * h * w;
        for (std::size_t co = 0; co < co_n; ++co) {
          double* plane = out + co * h * w;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const double coeff = K.at(ci, co, ky, kx);
              shifted_mac(plane, src, h, w, py - static_cast<int>(ky),
                          px - static_cast<int>(kx), coeff);
            }
          }
        }
      }
      break;
    }
    case OpKind::kSigmoid: {
      const double* a = in(0).ptr();
      for (std::size_t i = 0; i < count; ++i) out[i] = funcspace::sigmoid(a[i]);
      break;
    }
    case OpKind::kLeakyRelu: {
      const double* a = in(0).ptr();
      for (std::size_t i = 0; i < count; ++i) {
        out[i] = a[i] > 0.0 ? a[i] : n.a0 * a[i];
      }
      break;
    }
    case OpKind::kAbs: {
      const double* a = in(0).ptr();
      for (std::size_t i = 0; i < count; ++i) out[i] = std::fabs(a[i]);
      break;
    }
    case OpKind::kPow: {
      const double* a = in(0).ptr();
      for (std::size_t i = 0; i < count; ++i) out[i] = std::pow(a[i], n.a0);
      break;
    }
    case OpKind::kSum: {
      const Tensor& a = in(0);
      double acc = 0.0;
      const double* p = a.ptr();
      for (std::size_t i = 0; i < a.size(); ++i) acc += p[i];
      out[0] = acc;
      break;
    }
    case OpKind::kMin: {
      double best = in(0)[0];
      std::uint32_t best_i = 0;
      for (std::uint32_t i = 1; i < n.arg_count; ++i) {
        const double v = in(i)[0];
        if (v < best) {
          best = v;
          best_i = i;
        }
      }
      n.aux = best_i;
      out[0] = best;
      break;
    }
    case OpKind::kReshape: {
      const double* a = in(0).ptr();
      std::memcpy(out, a, count * sizeof(double));
      break;
    }
    case OpKind::kConcat: {
      std::size_t off = 0;
      for (std::uint32_t i = 0; i < n.arg_count; ++i) {
        const Tensor& a = in(i);
        std::memcpy(out + off, a.ptr(), a.size() * sizeof(double));
        off += a.size();
      }
      break;
    }
    case OpKind::kSlice1d: {
      const double* a = in(0).ptr();
      std::memcpy(out, a + n.bounds[0], count * sizeof(double));
      break;
    }
    case OpKind::kSlice2d: {
      const Tensor& a = in(0);
      const std::size_t cols = a.dim(1);
      const std::size_t out_cols = n.bounds[3] - n.bounds[2];
      for (std::size_t r = n.bounds[0]; r < n.bounds[1]; ++r) {
        std::memcpy(out + (r - n.bounds[0]) * out_cols,
                    a.ptr() + r * cols + n.bounds[2],
                    out_cols * sizeof(double));
      }
      break;
    }
    case OpKind::kScaleCols: {
      const Tensor& a = in(0);
      const double* g = in(1).ptr();
      const std::size_t rows = a.dim(0), cols = a.dim(1);
      const double* pa = a.ptr();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          out[r * cols + c] = pa[r * cols + c] * g[c];
        }
      }
      break;
    }
    case OpKind::kScaleRows: {
      const Tensor& a = in(0);
      const double* g = in(1).ptr();
      const std::size_t rows = a.dim(0), cols = a.dim(1);
      const double* pa = a.ptr();
      for (std::size_t r = 0; r < rows; ++r) {
        const double gv = g[r];
        for (std::size_t c = 0; c < cols; ++c) {
          out[r * cols + c] = pa[r * cols + c] * gv;
        }
      }
      break;
    }
  }
  (void)id;
}

// --- Backward -------------------------------------------------------------------

Tensor& Tape::grad_buffer(Node& n) {
  if (n.sink) return *n.sink;
  if (n.grad.empty()) n.grad = Tensor::zeros(node_value(n).shape());
  return n.grad;
}

void Tape::backward(Var out) { backward(out, Tensor::scalar(1.0)); }

void Tape::backward(Var out, const Tensor& seed) {
  const Node& out_node = checked(out, "backward");
  if (!node_value(out_node).same_shape(seed)) {
    throw ShapeError("backward: seed shape " + shape_str(seed.shape()) +
                     " does not match output " +
                     shape_str(node_value(out_node).shape()) + " (node " +
                     std::to_string(out.id()) + ")");
  }
  if (!out_node.requires_grad) return;

  {
    Tensor& g = grad_buffer(nodes_[out.id()]);
    const double* s = seed.ptr();
    double* gp = g.ptr();
    for (std::size_t i = 0; i < seed.size(); ++i) gp[i] += s[i];
  }

  for (std::uint32_t id = out.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.op == OpKind::kLeaf) continue;
    if (n.grad.empty()) continue;  // not reachable from out
    backprop(n, id);
  }
}

void Tape::backprop(Node& n, std::uint32_t id) {
  const std::uint32_t* arg = args_.data() + n.arg_begin;
  auto in_node = [&](std::size_t i) -> Node& { return nodes_[arg[i]]; };
  auto in = [&](std::size_t i) -> const Tensor& {
    return node_value(nodes_[arg[i]]);
  };
  auto wants = [&](std::size_t i) { return nodes_[arg[i]].requires_grad; };
  const double* g = n.grad.ptr();
  const std::size_t count = n.grad.size();

  switch (n.op) {
    case OpKind::kLeaf:
      break;
    case OpKind::kAdd: {
      for (int s = 0; s < 2; ++s) {
        if (!wants(s)) continue;
        double* d = grad_buffer(in_node(s)).ptr();
        for (std::size_t i = 0; i < count; ++i) d[i] += g[i];
      }
      break;
    }
    case OpKind::kSub: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        for (std::size_t i = 0; i < count; ++i) d[i] += g[i];
      }
      if (wants(1)) {
        double* d = grad_buffer(in_node(1)).ptr();
        for (std::size_t i = 0; i < count; ++i) d[i] -= g[i];
      }
      break;
    }
    case OpKind::kMul: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        const double* b = in(1).ptr();
        for (std::size_t i = 0; i < count; ++i) d[i] += g[i] * b[i];
      }
      if (wants(1)) {
        double* d = grad_buffer(in_node(1)).ptr();
        const double* a = in(0).ptr();
        for (std::size_t i = 0; i < count; ++i) d[i] += g[i] * a[i];
      }
      break;
    }
    case OpKind::kScale: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        for (std::size_t i = 0; i < count; ++i) d[i] += n.a0 * g[i];
      }
      break;
    }
    case OpKind::kShift: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        for (std::size_t i = 0; i < count; ++i) d[i] += g[i];
      }
      break;
    }
    case OpKind::kAxpy: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        for (std::size_t i = 0; i < count; ++i) d[i] += g[i];
      }
      if (wants(1)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < count; ++i) acc += g[i];
        grad_buffer(in_node(1)).ptr()[0] += n.a0 * acc;
      }
      break;
    }
    case OpKind::kMatMul: {
      const Tensor& A = in(0);
      const Tensor& B = in(1);
      const std::size_t m = A.dim(0), k = A.dim(1), p = B.dim(1);
      if (wants(0)) {
        // dA[i,kk] += sum_j g[i,j] * B[kk,j]
        double* dA = grad_buffer(in_node(0)).ptr();
        const double* pb = B.ptr();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * p;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = pb + kk * p;
            double acc = 0.0;
            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
            dA[i * k + kk] += acc;
          }
        }
      }
      if (wants(1)) {
        // dB[kk,j] += sum_i A[i,kk] * g[i,j]
        double* dB = grad_buffer(in_node(1)).ptr();
        const double* pa = A.ptr();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * p;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double a = pa[i * k + kk];
            double* brow = dB + kk * p;
            for (std::size_t j = 0; j < p; ++j) brow[j] += a * grow[j];
          }
        }
      }
      break;
    }
    case OpKind::kConv2d: {
      const Tensor& X = in(0);
      const Tensor& K = in(1);
      const std::size_t ci_n = X.dim(0), h = X.dim(1), w = X.dim(2);
      const std::size_t co_n = K.dim(0), kh = K.dim(2), kw = K.dim(3);
      const int py = static_cast<int>(kh) / 2, px = static_cast<int>(kw) / 2;
      if (wants(0)) {
        Tensor& dX = grad_buffer(in_node(0));
        for (std::size_t co = 0; co < co_n; ++co) {
          const double* gp = g + co * h * w;
          for (std::size_t ci = 0; ci < ci_n; ++ci) {
            double* dst = dX.ptr() + ci * h * w;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                shifted_mac(dst, gp, h, w, py - static_cast<int>(ky),
                            px - static_cast<int>(kx), K.at(co, ci, ky, kx));
              }
            }
          }
        }
      }
      if (wants(1)) {
        Tensor& dK = grad_buffer(in_node(1));
        for (std::size_t co = 0; co < co_n; ++co) {
          const double* gp = g + co * h * w;
          for (std::size_t ci = 0; ci < ci_n; ++ci) {
            const double* xp = X.ptr() + ci * h * w;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                dK.at(co, ci, ky, kx) +=
                    shifted_dot(gp, xp, h, w, static_cast<int>(ky) - py,
                                static_cast<int>(kx) - px);
              }
            }
          }
        }
      }
      break;
    }
    case OpKind::kConv2dT: {
      const Tensor& X = in(0);
      const Tensor& K = in(1);
      const std::size_t ci_n = X.dim(0), h = X.dim(1), w = X.dim(2);
      const std::size_t co_n = K.dim(1), kh = K.dim(2), kw = K.dim(3);
      const int py = static_cast<int>(kh) / 2, px = static_cast<int>(kw) / 2;
      if (wants(0)) {
        Tensor& dX = grad_buffer(in_node(0));
        for (std::size_t ci = 0; ci < ci_n; ++ci) {
          double* dst = dX.ptr() + ci * h * w;
          for (std::size_t co = 0; co < co_n; ++co) {
            const double* gp = g + co * h * w;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                shifted_mac(dst, gp, h, w, static_cast<int>(ky) - py,
                            static_cast<int>(kx) - px, K.at(ci, co, ky, kx));
              }
            }
          }
        }
      }
      if (wants(1)) {
        Tensor& dK = grad_buffer(in_node(1));
        for (std::size_t ci = 0; ci < ci_n; ++ci) {
          const double* xp = X.ptr() + ci * h * w;
          for (std::size_t co = 0; co < co_n; ++co) {
            const double* gp = g + co * h * w;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                dK.at(ci, co, ky, kx) +=
                    shifted_dot(xp, gp, h, w, static_cast<int>(ky) - py,
                                static_cast<int>(kx) - px);
              }
            }
          }
        }
      }
      break;
    }
    case OpKind::kSigmoid: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        const double* s = n.value.ptr();
        for (std::size_t i = 0; i < count; ++i) {
          d[i] += g[i] * s[i] * (1.0 - s[i]);
        }
      }
      break;
    }
    case OpKind::kLeakyRelu: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        const double* a = in(0).ptr();
        for (std::size_t i = 0; i < count; ++i) {
          d[i] += a[i] > 0.0 ? g[i] : n.a0 * g[i];
        }
      }
      break;
    }
    case OpKind::kAbs: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        const double* a = in(0).ptr();
        for (std::size_t i = 0; i < count; ++i) {
          const double sign = a[i] > 0.0 ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0);
          d[i] += g[i] * sign;
        }
      }
      break;
    }
    case OpKind::kPow: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        const double* a = in(0).ptr();
        for (std::size_t i = 0; i < count; ++i) {
          d[i] += g[i] * n.a0 * std::pow(a[i], n.a0 - 1.0);
        }
      }
      break;
    }
    case OpKind::kSum: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        const double gv = g[0];
        const std::size_t m = in(0).size();
        for (std::size_t i = 0; i < m; ++i) d[i] += gv;
      }
      break;
    }
    case OpKind::kMin: {
      // Subgradient routed through the arg-min element only.
      if (wants(n.aux)) grad_buffer(in_node(n.aux)).ptr()[0] += g[0];
      break;
    }
    case OpKind::kReshape: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        for (std::size_t i = 0; i < count; ++i) d[i] += g[i];
      }
      break;
    }
    case OpKind::kConcat: {
      std::size_t off = 0;
      for (std::uint32_t i = 0; i < n.arg_count; ++i) {
        const std::size_t m = in(i).size();
        if (wants(i)) {
          double* d = grad_buffer(in_node(i)).ptr();
          for (std::size_t j = 0; j < m; ++j) d[j] += g[off + j];
        }
        off += m;
      }
      break;
    }
    case OpKind::kSlice1d: {
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        for (std::size_t i = 0; i < count; ++i) d[n.bounds[0] + i] += g[i];
      }
      break;
    }
    case OpKind::kSlice2d: {
      if (wants(0)) {
        Tensor& dA = grad_buffer(in_node(0));
        const std::size_t cols = in(0).dim(1);
        const std::size_t out_cols = n.bounds[3] - n.bounds[2];
        for (std::size_t r = n.bounds[0]; r < n.bounds[1]; ++r) {
          double* drow = dA.ptr() + r * cols + n.bounds[2];
          const double* grow = g + (r - n.bounds[0]) * out_cols;
          for (std::size_t c = 0; c < out_cols; ++c) drow[c] += grow[c];
        }
      }
      break;
    }
    case OpKind::kScaleCols: {
      const Tensor& A = in(0);
      const double* gv = in(1).ptr();
      const std::size_t rows = A.dim(0), cols = A.dim(1);
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            d[r * cols + c] += g[r * cols + c] * gv[c];
          }
        }
      }
      if (wants(1)) {
        double* d = grad_buffer(in_node(1)).ptr();
        const double* pa = A.ptr();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            d[c] += g[r * cols + c] * pa[r * cols + c];
          }
        }
      }
      break;
    }
    case OpKind::kScaleRows: {
      const Tensor& A = in(0);
      const double* gv = in(1).ptr();
      const std::size_t rows = A.dim(0), cols = A.dim(1);
      if (wants(0)) {
        double* d = grad_buffer(in_node(0)).ptr();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            d[r * cols + c] += g[r * cols + c] * gv[r];
          }
        }
      }
      if (wants(1)) {
        double* d = grad_buffer(in_node(1)).ptr();
        const double* pa = A.ptr();
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            acc += g[r * cols + c] * pa[r * cols + c];
          }
          d[r] += acc;
        }
      }
      break;
    }
  }
  (void)id;
}

// --- Queries ---------------------------------------------------------------------

const Tensor& Tape::value(Var v) const { return node_value(checked(v, "value")); }

const Tensor& Tape::grad(Var v) const {
  const Node& n = checked(v, "grad");
  if (n.sink) return *n.sink;
  return n.grad;
}

Tensor Tape::replay(Var out) {
  checked(out, "replay");
  for (std::uint32_t id = 0; id <= out.id(); ++id) {
    Node& n = nodes_[id];
    if (n.op != OpKind::kLeaf) compute(n, id);
  }
  return node_value(nodes_[out.id()]);
}

void Tape::reset() {
  nodes_.clear();
  args_.clear();
}

}  // namespace funcspace::diff
