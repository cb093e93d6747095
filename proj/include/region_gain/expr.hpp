#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace region_gain::expr {

enum class UnaryOp { neg, abs, sin, cos, exp, sqrt };
enum class BinaryOp { add, sub, mul, div, pow };
enum class NaryOp { min, max };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

/// Immutable AST node. Exactly one of the payload groups is meaningful,
/// selected by `kind`.
struct Node {
  enum class Kind { constant, variable, unary, binary, nary };

  Kind kind = Kind::constant;
  double value = 0.0;
  std::string name;
  UnaryOp unary_op = UnaryOp::neg;
  BinaryOp binary_op = BinaryOp::add;
  NaryOp nary_op = NaryOp::min;
  std::vector<NodePtr> children;
};

NodePtr constant(double v);
NodePtr variable(std::string name);
NodePtr unary(UnaryOp op, NodePtr arg);
NodePtr binary(BinaryOp op, NodePtr lhs, NodePtr rhs);
NodePtr nary(NaryOp op, std::vector<NodePtr> args);

/// Structural equality (constants compared exactly).
bool equal(const Node& a, const Node& b);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t position);
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Unbound variable or a domain error (division by zero, sqrt of a negative,
/// non-real power, non-finite result).
class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Expression {
 public:
  Expression() = default;
  explicit Expression(NodePtr root) : root_(std::move(root)) {}

  const Node& root() const { return *root_; }
  bool empty() const { return root_ == nullptr; }

  /// Sorted, de-duplicated variable names.
  std::vector<std::string> variables() const;

  /// Fully parenthesized form that re-parses to an equivalent tree.
  std::string to_string() const;

  friend bool operator==(const Expression& a, const Expression& b) {
    return a.root_ && b.root_ && equal(*a.root_, *b.root_);
  }

 private:
  NodePtr root_;
};

Expression parse(std::string_view source);

double evaluate(const Expression& e, const std::map<std::string, double>& bindings);

/// Throws EvalError naming the first variable of `e` missing from `allowed`.
void require_variables(const Expression& e, std::span<const std::string> allowed);

/// Postfix program with variables resolved to slots. Evaluation is pure, so a
/// single instance can be shared across threads.
class CompiledExpression {
 public:
  CompiledExpression() = default;
  CompiledExpression(const Expression& e, std::span<const std::string> slots);

  double operator()(std::span<const double> values) const;
  double operator()(double single) const { return (*this)(std::span<const double>(&single, 1)); }

  const std::string& source() const { return source_; }

 private:
  enum class Op : unsigned char { push, load, neg, abs, sin, cos, exp, sqrt, add, sub, mul, div, pow, min, max };
  struct Instr {
    Op op;
    unsigned arity = 0;
    std::size_t slot = 0;
    double value = 0.0;
  };

  void emit(const Node& n, std::span<const std::string> slots);

  std::vector<Instr> code_;
  std::size_t max_stack_ = 0;
  std::size_t slot_count_ = 0;
  std::string source_;
};

}  // namespace region_gain::expr
