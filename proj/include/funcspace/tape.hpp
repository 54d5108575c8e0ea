#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "funcspace/tensor.hpp"

namespace funcspace::diff {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until the tape is reset
// or destroyed.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::uint32_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

enum class OpKind : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,      // a0 * x
  kShift,      // x + a0
  kAxpy,       // x + a0 * s, s a scalar node
  kMatMul,
  kConv2d,     // x [Cin,H,W], k [Cout,Cin,kh,kw], stride 1, zero same-padding
  kConv2dT,    // x [Cin,H,W], k [Cin,Cout,kh,kw], adjoint geometry of kConv2d
  kSigmoid,
  kLeakyRelu,  // slope in a0
  kAbs,
  kPow,        // exponent in a0; base must stay positive unless a0 >= 1
  kSum,        // scalar
  kMin,        // min over scalar inputs; ties resolve to the lowest index
  kReshape,
  kConcat,     // inputs flattened and concatenated into a 1-D tensor
  kSlice1d,
  kSlice2d,
  kScaleCols,  // A[i,j] * g[j]
  kScaleRows,  // A[i,j] * g[i]
};

const char* op_name(OpKind op);

// Records a forward computation as a flat node list in topological order and
// replays it backwards to accumulate gradients. Single-owner: a Tape must not
// be shared across threads, but any number of tapes may run concurrently and
// may all read the same parameter tensors.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- Leaves -------------------------------------------------------------
  // constant/variable copy their tensor; *_ref leaves alias caller storage,
  // which must stay alive and unchanged while the tape is in use.
  Var constant(Tensor v);
  Var constant_ref(const Tensor* v);
  Var variable(Tensor v);
  // Trainable leaf over external storage. When grad_sink is given, backward
  // accumulates straight into it (never zeroing it first), so one sink can
  // collect gradients across many tapes.
  Var param(const Tensor* v, Tensor* grad_sink = nullptr);

  // --- Primitives ----------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var shift(Var a, double c);
  Var axpy_scalar(Var a, Var s, double c);
  Var matmul(Var a, Var b);
  Var conv2d(Var x, Var kernel);
  Var conv2d_transpose(Var x, Var kernel);
  Var sigmoid(Var a);
  Var leaky_relu(Var a, double slope);
  Var abs(Var a);
  Var pow(Var a, double exponent);
  Var sum(Var a);
  Var min_of(std::span<const Var> xs);
  Var reshape(Var a, Shape shape);
  Var concat(std::span<const Var> xs);
  Var slice1d(Var a, std::size_t begin, std::size_t end);
  Var slice2d(Var a, std::size_t r0, std::size_t r1, std::size_t c0,
              std::size_t c1);
  Var scale_cols(Var a, Var g);
  Var scale_rows(Var a, Var g);

  // --- Execution ------------------------------------------------------------
  // Seeds the output gradient and walks the tape in reverse. The scalar
  // overload seeds with 1.
  void backward(Var out);
  void backward(Var out, const Tensor& seed);

  const Tensor& value(Var v) const;
  // Gradient accumulated for v by the last backward(). Empty tensor when the
  // node was never reached. For param leaves with a sink, gradients are in
  // the sink instead.
  const Tensor& grad(Var v) const;

  // Recomputes every node value in recording order from the current leaf
  // contents. Deterministic: identical inputs give bit-identical outputs.
  Tensor replay(Var out);

  void reset();
  std::size_t size() const { return nodes_.size(); }

  // NaN/Inf screening of op outputs (leaf aliases are trusted). On by
  // default; failures throw NonFiniteError with the offending node id.
  void set_finite_checks(bool on) { finite_checks_ = on; }

 private:
  struct Node {
    OpKind op = OpKind::kLeaf;
    bool requires_grad = false;
    std::uint32_t arg_begin = 0;
    std::uint32_t arg_count = 0;
    std::uint32_t aux = 0;  // argmin index for kMin
    double a0 = 0.0;
    std::array<std::uint32_t, 4> bounds{};
    const Tensor* external = nullptr;
    Tensor* sink = nullptr;
    Tensor value;
    Tensor grad;
  };

  const Tensor& node_value(const Node& n) const {
    return n.external ? *n.external : n.value;
  }
  Tensor& grad_buffer(Node& n);
  void compute(Node& n, std::uint32_t id);
  void backprop(Node& n, std::uint32_t id);
  void check_finite(const Node& n, std::uint32_t id) const;
  std::uint32_t push(Node&& n, std::span<const Var> args);
  Var make_leaf(Node&& n, bool requires_grad);
  Var make(OpKind op, std::span<const Var> args, double a0 = 0.0,
           std::array<std::uint32_t, 4> bounds = {}, Shape out_shape = {});
  const Node& checked(Var v, const char* what) const;

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> args_;
  bool finite_checks_ = true;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

// Free-function spellings so expressions read naturally.
inline Var add(Var a, Var b) { return a.tape()->add(a, b); }
inline Var sub(Var a, Var b) { return a.tape()->sub(a, b); }
inline Var mul(Var a, Var b) { return a.tape()->mul(a, b); }
inline Var matmul(Var a, Var b) { return a.tape()->matmul(a, b); }
inline Var sigmoid(Var a) { return a.tape()->sigmoid(a); }
inline Var abs(Var a) { return a.tape()->abs(a); }
inline Var sum(Var a) { return a.tape()->sum(a); }

}  // namespace funcspace::diff
