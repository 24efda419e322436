#include "rpn/graph.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "rpn/special.hpp"

namespace rpn::ad {
namespace {

// Element-wise special functions must not throw inside the graph: out-of
// -domain arguments become NaN, which the training loop's divergence guard
// turns into a clean abort.
double nan_guarded_log_gamma(double x) {
  return x > 0.0 ? rpn::log_gamma(x) : std::numeric_limits<double>::quiet_NaN();
}
double nan_guarded_digamma(double x) {
  return x > 0.0 ? rpn::digamma(x) : std::numeric_limits<double>::quiet_NaN();
}
double nan_guarded_trigamma(double x) {
  return x > 0.0 ? rpn::trigamma(x) : std::numeric_limits<double>::quiet_NaN();
}

bool is_scalar(const Eigen::MatrixXd& m) { return m.rows() == 1 && m.cols() == 1; }

void check_cwise_shapes(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                        const char* what) {
  if (is_scalar(a) || is_scalar(b)) return;
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) +
                                ": shape mismatch and neither side is 1x1");
  }
}

// Applies a coefficient-wise binary functor under the 1x1 broadcast rule.
template <typename F>
Eigen::MatrixXd cwise(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, F f) {
  if (is_scalar(a) && !is_scalar(b)) {
    return b.unaryExpr([&](double y) { return f(a(0, 0), y); });
  }
  if (!is_scalar(a) && is_scalar(b)) {
    return a.unaryExpr([&](double x) { return f(x, b(0, 0)); });
  }
  return a.binaryExpr(b, f);
}

// Accumulates a gradient contribution into an operand's adjoint, reducing
// over the broadcast if the operand was 1x1.
void accumulate(Eigen::MatrixXd& adj, const Eigen::MatrixXd& contribution) {
  if (is_scalar(adj) && !is_scalar(contribution)) {
    adj(0, 0) += contribution.sum();
  } else {
    adj += contribution;
  }
}

}  // namespace

const Eigen::MatrixXd& Value::val() const { return tape->value(*this); }
const Eigen::MatrixXd& Value::grad() const { return tape->adjoint(*this); }

double Value::scalar() const {
  const Eigen::MatrixXd& v = val();
  if (!is_scalar(v)) {
    throw std::invalid_argument("Value::scalar: node is not 1x1");
  }
  return v(0, 0);
}

Value Tape::push(Node node) {
  if (nodes_.size() >= static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
    throw std::length_error("Tape: node limit exceeded");
  }
  node.adjoint = Eigen::MatrixXd::Zero(node.value.rows(), node.value.cols());
  nodes_.push_back(std::move(node));
  return Value{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Value Tape::input(Eigen::MatrixXd v) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(v);
  return push(std::move(n));
}

Value Tape::constant(Eigen::MatrixXd v) { return input(std::move(v)); }

Value Tape::constant(double v) {
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = v;
  return input(std::move(m));
}

const Eigen::MatrixXd& Tape::value(const Value& v) const {
  return nodes_.at(static_cast<std::size_t>(v.id)).value;
}

const Eigen::MatrixXd& Tape::adjoint(const Value& v) const {
  return nodes_.at(static_cast<std::size_t>(v.id)).adjoint;
}

void Tape::clear() { nodes_.clear(); }

Value Tape::emit(Op op, const Value& a, const Value& b, int i0, int i1) {
  if (a.tape != this || b.tape != this) {
    throw std::invalid_argument("Tape::emit: operands live on a different tape");
  }
  const Eigen::MatrixXd& va = nodes_[a.id].value;
  const Eigen::MatrixXd& vb = nodes_[b.id].value;
  Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  n.i0 = i0;
  n.i1 = i1;
  switch (op) {
    case Op::kAdd:
      check_cwise_shapes(va, vb, "add");
      n.value = cwise(va, vb, [](double x, double y) { return x + y; });
      break;
    case Op::kSub:
      check_cwise_shapes(va, vb, "sub");
      n.value = cwise(va, vb, [](double x, double y) { return x - y; });
      break;
    case Op::kMul:
      check_cwise_shapes(va, vb, "mul");
      n.value = cwise(va, vb, [](double x, double y) { return x * y; });
      break;
    case Op::kDiv:
      check_cwise_shapes(va, vb, "div");
      n.value = cwise(va, vb, [](double x, double y) { return x / y; });
      break;
    case Op::kMatMul:
      if (va.cols() != vb.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ");
      }
      n.value = va * vb;
      break;
    case Op::kAddBias:
      if (vb.cols() != 1 || vb.rows() != va.rows()) {
        throw std::invalid_argument("add_bias: bias must be a column matching the rows");
      }
      n.value = va.colwise() + vb.col(0);
      break;
    default:
      throw std::invalid_argument("Tape::emit: not a binary op");
  }
  return push(std::move(n));
}

Value Tape::emit(Op op, const Value& a, int i0, int i1) {
  if (a.tape != this) {
    throw std::invalid_argument("Tape::emit: operand lives on a different tape");
  }
  const Eigen::MatrixXd& va = nodes_[a.id].value;
  Node n;
  n.op = op;
  n.a = a.id;
  n.i0 = i0;
  n.i1 = i1;
  switch (op) {
    case Op::kNeg:
      n.value = -va;
      break;
    case Op::kRelu:
      n.value = va.cwiseMax(0.0);
      break;
    case Op::kSoftplus:
      n.value = va.unaryExpr([](double x) { return rpn::softplus(x); });
      break;
    case Op::kLog:
      n.value = va.unaryExpr([](double x) { return std::log(x); });
      break;
    case Op::kExp:
      n.value = va.unaryExpr([](double x) { return std::exp(x); });
      break;
    case Op::kSqrt:
      n.value = va.unaryExpr([](double x) { return std::sqrt(x); });
      break;
    case Op::kSquare:
      n.value = va.unaryExpr([](double x) { return x * x; });
      break;
    case Op::kLogGamma:
      n.value = va.unaryExpr(&nan_guarded_log_gamma);
      break;
    case Op::kDigamma:
      n.value = va.unaryExpr(&nan_guarded_digamma);
      break;
    case Op::kSum:
      n.value = Eigen::MatrixXd::Constant(1, 1, va.sum());
      break;
    case Op::kMean:
      n.value = Eigen::MatrixXd::Constant(1, 1, va.mean());
      break;
    case Op::kRow:
      if (i0 < 0 || i0 >= va.rows()) {
        throw std::invalid_argument("row: index out of range");
      }
      n.value = va.row(i0);
      break;
    case Op::kEntry:
      if (i0 < 0 || i0 >= va.rows() || i1 < 0 || i1 >= va.cols()) {
        throw std::invalid_argument("entry: index out of range");
      }
      n.value = Eigen::MatrixXd::Constant(1, 1, va(i0, i1));
      break;
    default:
      throw std::invalid_argument("Tape::emit: not a unary op");
  }
  return push(std::move(n));
}

void Tape::backward(const Value& root) {
  if (root.tape != this) {
    throw std::invalid_argument("Tape::backward: root lives on a different tape");
  }
  const auto root_id = static_cast<std::size_t>(root.id);
  if (!is_scalar(nodes_.at(root_id).value)) {
    throw std::invalid_argument("Tape::backward: root must be 1x1");
  }
  for (std::size_t i = 0; i <= root_id; ++i) {
    nodes_[i].adjoint.setZero();
  }
  nodes_[root_id].adjoint(0, 0) = 1.0;

  for (std::size_t idx = root_id + 1; idx-- > 0;) {
    Node& n = nodes_[idx];
    const Eigen::MatrixXd& g = n.adjoint;
    if (n.op == Op::kLeaf || g.isZero(0.0)) continue;
    const Eigen::MatrixXd& va = nodes_[n.a].value;
    Eigen::MatrixXd& da = nodes_[n.a].adjoint;
    switch (n.op) {
      case Op::kAdd:
        accumulate(da, g);
        accumulate(nodes_[n.b].adjoint, g);
        break;
      case Op::kSub:
        accumulate(da, g);
        accumulate(nodes_[n.b].adjoint, -g);
        break;
      case Op::kMul: {
        const Eigen::MatrixXd& vb = nodes_[n.b].value;
        accumulate(da, cwise(g, vb, [](double gg, double y) { return gg * y; }));
        accumulate(nodes_[n.b].adjoint,
                   cwise(g, va, [](double gg, double x) { return gg * x; }));
        break;
      }
      case Op::kDiv: {
        const Eigen::MatrixXd& vb = nodes_[n.b].value;
        accumulate(da, cwise(g, vb, [](double gg, double y) { return gg / y; }));
        Eigen::MatrixXd num = cwise(g, va, [](double gg, double x) { return gg * x; });
        accumulate(nodes_[n.b].adjoint,
                   cwise(num, vb, [](double t, double y) { return -t / (y * y); }));
        break;
      }
      case Op::kNeg:
        accumulate(da, -g);
        break;
      case Op::kMatMul: {
        const Eigen::MatrixXd& vb = nodes_[n.b].value;
        da.noalias() += g * vb.transpose();
        nodes_[n.b].adjoint.noalias() += va.transpose() * g;
        break;
      }
      case Op::kAddBias:
        da += g;
        nodes_[n.b].adjoint += g.rowwise().sum();
        break;
      case Op::kRelu:
        // Subgradient at exactly zero is zero (strict inequality).
        da += (va.array() > 0.0).cast<double>().matrix().cwiseProduct(g);
        break;
      case Op::kSoftplus:
        da += va.unaryExpr([](double x) { return rpn::sigmoid(x); }).cwiseProduct(g);
        break;
      case Op::kLog:
        da += g.cwiseQuotient(va);
        break;
      case Op::kExp:
        da += n.value.cwiseProduct(g);
        break;
      case Op::kSqrt:
        da += (0.5 * n.value.cwiseInverse()).cwiseProduct(g);
        break;
      case Op::kSquare:
        da += (2.0 * va).cwiseProduct(g);
        break;
      case Op::kLogGamma:
        da += va.unaryExpr(&nan_guarded_digamma).cwiseProduct(g);
        break;
      case Op::kDigamma:
        da += va.unaryExpr(&nan_guarded_trigamma).cwiseProduct(g);
        break;
      case Op::kSum:
        da.array() += g(0, 0);
        break;
      case Op::kMean:
        da.array() += g(0, 0) / static_cast<double>(va.size());
        break;
      case Op::kRow:
        da.row(n.i0) += g;
        break;
      case Op::kEntry:
        da(n.i0, n.i1) += g(0, 0);
        break;
      case Op::kLeaf:
        break;
    }
  }
}

// ---- free-function layer ----

namespace {
Tape& tape_of(const Value& v) {
  if (v.tape == nullptr) throw std::invalid_argument("Value: null tape");
  return *v.tape;
}
}  // namespace

Value operator+(const Value& a, const Value& b) {
  return tape_of(a).emit(Tape::Op::kAdd, a, b);
}
Value operator-(const Value& a, const Value& b) {
  return tape_of(a).emit(Tape::Op::kSub, a, b);
}
Value operator*(const Value& a, const Value& b) {
  return tape_of(a).emit(Tape::Op::kMul, a, b);
}
Value operator/(const Value& a, const Value& b) {
  return tape_of(a).emit(Tape::Op::kDiv, a, b);
}
Value operator-(const Value& a) { return tape_of(a).emit(Tape::Op::kNeg, a); }

Value operator+(const Value& a, double b) { return a + tape_of(a).constant(b); }
Value operator+(double a, const Value& b) { return tape_of(b).constant(a) + b; }
Value operator-(const Value& a, double b) { return a - tape_of(a).constant(b); }
Value operator-(double a, const Value& b) { return tape_of(b).constant(a) - b; }
Value operator*(const Value& a, double b) { return a * tape_of(a).constant(b); }
Value operator*(double a, const Value& b) { return tape_of(b).constant(a) * b; }
Value operator/(const Value& a, double b) { return a / tape_of(a).constant(b); }
Value operator/(double a, const Value& b) { return tape_of(b).constant(a) / b; }

Value matmul(const Value& a, const Value& b) {
  return tape_of(a).emit(Tape::Op::kMatMul, a, b);
}
Value add_bias(const Value& m, const Value& col) {
  return tape_of(m).emit(Tape::Op::kAddBias, m, col);
}
Value row(const Value& m, int i) { return tape_of(m).emit(Tape::Op::kRow, m, i); }
Value entry(const Value& m, int i, int j) {
  return tape_of(m).emit(Tape::Op::kEntry, m, i, j);
}
Value sum(const Value& m) { return tape_of(m).emit(Tape::Op::kSum, m); }
Value mean(const Value& m) { return tape_of(m).emit(Tape::Op::kMean, m); }

Value relu(const Value& a) { return tape_of(a).emit(Tape::Op::kRelu, a); }
Value softplus(const Value& a) { return tape_of(a).emit(Tape::Op::kSoftplus, a); }
Value log(const Value& a) { return tape_of(a).emit(Tape::Op::kLog, a); }
Value exp(const Value& a) { return tape_of(a).emit(Tape::Op::kExp, a); }
Value sqrt(const Value& a) { return tape_of(a).emit(Tape::Op::kSqrt, a); }
Value square(const Value& a) { return tape_of(a).emit(Tape::Op::kSquare, a); }
Value log_gamma(const Value& a) { return tape_of(a).emit(Tape::Op::kLogGamma, a); }
Value digamma(const Value& a) { return tape_of(a).emit(Tape::Op::kDigamma, a); }

}  // namespace rpn::ad
