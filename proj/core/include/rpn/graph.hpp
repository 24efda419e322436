#pragma once

// Reverse-mode automatic differentiation on a flat tape of matrix-valued
// nodes.  A node's value is an Eigen matrix (1x1 for scalars, 1xN rows for
// per-example quantities batched over a minibatch), operations evaluate
// eagerly at construction, and backward() runs one reverse sweep that
// accumulates exact adjoints.  Coefficient-wise binary operations broadcast
// a 1x1 operand against any shape; the corresponding adjoint is
// sum-reduced.  Element-wise special functions use the same scalar
// implementations as the plain evaluation path, so graph forward values
// agree bitwise with direct evaluation.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace rpn::ad {

class Tape;

// Cheap handle to a node on a tape.
struct Value {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  const Eigen::MatrixXd& val() const;
  const Eigen::MatrixXd& grad() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
  // Scalar accessors for 1x1 nodes.
  double scalar() const;
};

class Tape {
 public:
  // Leaf whose adjoint is of interest (parameters, inputs under test).
  Value input(Eigen::MatrixXd v);
  // Leaf that only carries data; mechanically identical to input.
  Value constant(Eigen::MatrixXd v);
  Value constant(double v);

  // Runs the reverse sweep from a 1x1 root.  All adjoints at or below the
  // root are zeroed first, so repeated calls on one tape stay correct.
  void backward(const Value& root);

  const Eigen::MatrixXd& value(const Value& v) const;
  const Eigen::MatrixXd& adjoint(const Value& v) const;

  std::size_t size() const { return nodes_.size(); }
  // Drops all nodes (capacity retained); outstanding handles become invalid.
  void clear();

  // --- node construction; used by the free-function layer below ---
  enum class Op : std::uint8_t {
    kLeaf,
    kAdd, kSub, kMul, kDiv,      // coefficient-wise with 1x1 broadcast
    kNeg,
    kMatMul,
    kAddBias,                    // (r x c) + (r x 1), broadcast over columns
    kRelu, kSoftplus, kLog, kExp, kSqrt, kSquare, kLogGamma, kDigamma,
    kSum, kMean,                 // full reductions to 1x1
    kRow, kEntry,                // slicing
  };
  Value emit(Op op, const Value& a, const Value& b, int i0 = 0, int i1 = 0);
  Value emit(Op op, const Value& a, int i0 = 0, int i1 = 0);

 private:
  struct Node {
    Op op;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t i0 = 0;  // row / entry indices for slicing ops
    std::int32_t i1 = 0;
    Eigen::MatrixXd value;
    Eigen::MatrixXd adjoint;
  };

  Value push(Node node);
  std::vector<Node> nodes_;
};

// ---- coefficient-wise arithmetic (shapes equal, or either side 1x1) ----
Value operator+(const Value& a, const Value& b);
Value operator-(const Value& a, const Value& b);
Value operator*(const Value& a, const Value& b);
Value operator/(const Value& a, const Value& b);
Value operator-(const Value& a);
Value operator+(const Value& a, double b);
Value operator+(double a, const Value& b);
Value operator-(const Value& a, double b);
Value operator-(double a, const Value& b);
Value operator*(const Value& a, double b);
Value operator*(double a, const Value& b);
Value operator/(const Value& a, double b);
Value operator/(double a, const Value& b);

// ---- structural ----
Value matmul(const Value& a, const Value& b);
Value add_bias(const Value& m, const Value& col);
Value row(const Value& m, int i);
Value entry(const Value& m, int i, int j);
Value sum(const Value& m);
Value mean(const Value& m);

// ---- element-wise functions (names match the scalar versions so generic
// code can call them unqualified on either doubles or Values) ----
Value relu(const Value& a);
Value softplus(const Value& a);
Value log(const Value& a);
Value exp(const Value& a);
Value sqrt(const Value& a);
Value square(const Value& a);
Value log_gamma(const Value& a);
Value digamma(const Value& a);

}  // namespace rpn::ad
