#include "region_gain/expr.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace region_gain::expr {

NodePtr constant(double v) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::constant;
  n->value = v;
  return n;
}

NodePtr variable(std::string name) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::variable;
  n->name = std::move(name);
  return n;
}

NodePtr unary(UnaryOp op, NodePtr arg) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::unary;
  n->unary_op = op;
  n->children = {std::move(arg)};
  return n;
}

NodePtr binary(BinaryOp op, NodePtr lhs, NodePtr rhs) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::binary;
  n->binary_op = op;
  n->children = {std::move(lhs), std::move(rhs)};
  return n;
}

NodePtr nary(NaryOp op, std::vector<NodePtr> args) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::nary;
  n->nary_op = op;
  n->children = std::move(args);
  return n;
}

bool equal(const Node& a, const Node& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case Node::Kind::constant:
      return a.value == b.value;
    case Node::Kind::variable:
      return a.name == b.name;
    case Node::Kind::unary:
      if (a.unary_op != b.unary_op) return false;
      break;
    case Node::Kind::binary:
      if (a.binary_op != b.binary_op) return false;
      break;
    case Node::Kind::nary:
      if (a.nary_op != b.nary_op) return false;
      break;
  }
  if (a.children.size() != b.children.size()) return false;
  for (std::size_t i = 0; i < a.children.size(); ++i)
    if (!equal(*a.children[i], *b.children[i])) return false;
  return true;
}

ParseError::ParseError(const std::string& message, std::size_t position)
    : std::runtime_error(message + " at position " + std::to_string(position)), position_(position) {}

namespace {

// ---------------------------------------------------------------------------
// Arithmetic shared by the tree walker and the compiled program.

double checked(double r, const char* what) {
  if (!std::isfinite(r)) throw EvalError(std::string("non-finite result in ") + what);
  return r;
}

double apply_op(UnaryOp op, double a) {
  switch (op) {
    case UnaryOp::neg: return -a;
    case UnaryOp::abs: return std::fabs(a);
    case UnaryOp::sin: return std::sin(a);
    case UnaryOp::cos: return std::cos(a);
    case UnaryOp::exp: return checked(std::exp(a), "exp");
    case UnaryOp::sqrt:
      if (a < 0.0) throw EvalError("sqrt of negative value");
      return std::sqrt(a);
  }
  return a;
}

double apply_op(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::add: return checked(a + b, "add");
    case BinaryOp::sub: return checked(a - b, "sub");
    case BinaryOp::mul: return checked(a * b, "mul");
    case BinaryOp::div:
      if (b == 0.0) throw EvalError("division by zero");
      return checked(a / b, "div");
    case BinaryOp::pow: {
      if (a < 0.0 && std::trunc(b) != b) throw EvalError("pow of negative base with non-integer exponent");
      if (a == 0.0 && b < 0.0) throw EvalError("pow of zero with negative exponent");
      // Small integer exponents by repeated multiplication: exact for the
      // polynomial gains that dominate the workload.
      if (b == 2.0) return checked(a * a, "pow");
      if (b == 3.0) return checked(a * a * a, "pow");
      return checked(std::pow(a, b), "pow");
    }
  }
  return a;
}

double apply_op(NaryOp op, std::span<const double> args) {
  return op == NaryOp::min ? *std::min_element(args.begin(), args.end())
                           : *std::max_element(args.begin(), args.end());
}

// ---------------------------------------------------------------------------
// Recursive-descent parser.
//
//   expr  := term (('+'|'-') term)*
//   term  := unary (('*'|'/') unary)*
//   unary := ('-'|'+') unary | power
//   power := primary ('^' unary)?
//   primary := number | ident | ident '(' args ')' | '(' expr ')'

struct Token {
  enum class Kind { number, ident, op, lparen, rparen, comma, end };
  Kind kind;
  std::string text;
  double number = 0.0;
  std::size_t pos = 0;
};

std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const std::size_t start = i;
      while (i < src.size() && (std::isdigit(static_cast<unsigned char>(src[i])) || src[i] == '.')) ++i;
      if (i < src.size() && (src[i] == 'e' || src[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < src.size() && (src[j] == '+' || src[j] == '-')) ++j;
        if (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) {
          i = j;
          while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
        }
      }
      const std::string text(src.substr(start, i - start));
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size())
        throw ParseError("malformed number '" + text + "'", start);
      out.push_back({Token::Kind::number, text, v, start});
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = i;
      while (i < src.size() && (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
      out.push_back({Token::Kind::ident, std::string(src.substr(start, i - start)), 0.0, start});
      continue;
    }
    switch (c) {
      case '+': case '-': case '*': case '/': case '^':
        out.push_back({Token::Kind::op, std::string(1, c), 0.0, i});
        break;
      case '(':
        out.push_back({Token::Kind::lparen, "(", 0.0, i});
        break;
      case ')':
        out.push_back({Token::Kind::rparen, ")", 0.0, i});
        break;
      case ',':
        out.push_back({Token::Kind::comma, ",", 0.0, i});
        break;
      default:
        throw ParseError(std::string("unexpected character '") + c + "'", i);
    }
    ++i;
  }
  out.push_back({Token::Kind::end, "", 0.0, src.size()});
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view src) : tokens_(tokenize(src)) {}

  NodePtr parse_all() {
    NodePtr e = parse_expr();
    if (peek().kind != Token::Kind::end) unexpected();
    return e;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& next() { return tokens_[pos_++]; }

  bool accept_op(char c) {
    if (peek().kind == Token::Kind::op && peek().text[0] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  [[noreturn]] void unexpected() const {
    const Token& t = peek();
    if (t.kind == Token::Kind::end) throw ParseError("unexpected end of input", t.pos);
    throw ParseError("unexpected token '" + t.text + "'", t.pos);
  }

  NodePtr parse_expr() {
    NodePtr lhs = parse_term();
    for (;;) {
      if (accept_op('+'))
        lhs = binary(BinaryOp::add, lhs, parse_term());
      else if (accept_op('-'))
        lhs = binary(BinaryOp::sub, lhs, parse_term());
      else
        return lhs;
    }
  }

  NodePtr parse_term() {
    NodePtr lhs = parse_unary();
    for (;;) {
      if (accept_op('*'))
        lhs = binary(BinaryOp::mul, lhs, parse_unary());
      else if (accept_op('/'))
        lhs = binary(BinaryOp::div, lhs, parse_unary());
      else
        return lhs;
    }
  }

  NodePtr parse_unary() {
    if (accept_op('-')) return unary(UnaryOp::neg, parse_unary());
    if (accept_op('+')) return parse_unary();
    return parse_power();
  }

  NodePtr parse_power() {
    NodePtr base = parse_primary();
    if (accept_op('^')) return binary(BinaryOp::pow, base, parse_unary());
    return base;
  }

  NodePtr parse_primary() {
    const Token& t = peek();
    switch (t.kind) {
      case Token::Kind::number:
        ++pos_;
        return constant(t.number);
      case Token::Kind::lparen: {
        const std::size_t open = t.pos;
        ++pos_;
        NodePtr e = parse_expr();
        if (peek().kind != Token::Kind::rparen) {
          if (peek().kind == Token::Kind::end) throw ParseError("unbalanced parenthesis opened", open);
          unexpected();
        }
        ++pos_;
        return e;
      }
      case Token::Kind::ident: {
        const Token id = next();
        if (peek().kind != Token::Kind::lparen) return variable(id.text);
        return parse_call(id);
      }
      default:
        unexpected();
    }
  }

  NodePtr parse_call(const Token& id) {
    const std::size_t open = peek().pos;
    ++pos_;  // '('
    std::vector<NodePtr> args;
    if (peek().kind != Token::Kind::rparen) {
      args.push_back(parse_expr());
      while (peek().kind == Token::Kind::comma) {
        ++pos_;
        args.push_back(parse_expr());
      }
    }
    if (peek().kind != Token::Kind::rparen) {
      if (peek().kind == Token::Kind::end) throw ParseError("unbalanced parenthesis opened", open);
      unexpected();
    }
    ++pos_;

    static const std::map<std::string, UnaryOp> unaries = {
        {"abs", UnaryOp::abs}, {"sin", UnaryOp::sin}, {"cos", UnaryOp::cos},
        {"exp", UnaryOp::exp}, {"sqrt", UnaryOp::sqrt}, {"neg", UnaryOp::neg}};
    auto arity_error = [&](const char* expected) {
      return ParseError("function '" + id.text + "' expects " + expected + " argument(s), got " +
                            std::to_string(args.size()),
                        id.pos);
    };
    if (auto it = unaries.find(id.text); it != unaries.end()) {
      if (args.size() != 1) throw arity_error("1");
      return unary(it->second, args[0]);
    }
    if (id.text == "min" || id.text == "max") {
      if (args.empty()) throw arity_error("at least 1");
      if (args.size() == 1) return args[0];
      return nary(id.text == "min" ? NaryOp::min : NaryOp::max, std::move(args));
    }
    if (id.text == "pow") {
      if (args.size() != 2) throw arity_error("2");
      return binary(BinaryOp::pow, args[0], args[1]);
    }
    throw ParseError("unknown function '" + id.text + "'", id.pos);
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

double eval_node(const Node& n, const std::map<std::string, double>& b) {
  switch (n.kind) {
    case Node::Kind::constant:
      return n.value;
    case Node::Kind::variable: {
      auto it = b.find(n.name);
      if (it == b.end()) throw EvalError("unbound variable '" + n.name + "'");
      if (!std::isfinite(it->second)) throw EvalError("non-finite binding for '" + n.name + "'");
      return it->second;
    }
    case Node::Kind::unary:
      return apply_op(n.unary_op, eval_node(*n.children[0], b));
    case Node::Kind::binary:
      return apply_op(n.binary_op, eval_node(*n.children[0], b), eval_node(*n.children[1], b));
    case Node::Kind::nary: {
      std::vector<double> args;
      args.reserve(n.children.size());
      for (const auto& c : n.children) args.push_back(eval_node(*c, b));
      return apply_op(n.nary_op, args);
    }
  }
  return 0.0;
}

void collect_vars(const Node& n, std::set<std::string>& out) {
  if (n.kind == Node::Kind::variable) out.insert(n.name);
  for (const auto& c : n.children) collect_vars(*c, out);
}

void print(const Node& n, std::ostringstream& os) {
  switch (n.kind) {
    case Node::Kind::constant: {
      std::array<char, 40> buf{};
      std::snprintf(buf.data(), buf.size(), "%.17g", n.value);
      if (n.value < 0.0)
        os << '(' << buf.data() << ')';
      else
        os << buf.data();
      return;
    }
    case Node::Kind::variable:
      os << n.name;
      return;
    case Node::Kind::unary: {
      static const char* names[] = {"neg", "abs", "sin", "cos", "exp", "sqrt"};
      os << names[static_cast<int>(n.unary_op)] << '(';
      print(*n.children[0], os);
      os << ')';
      return;
    }
    case Node::Kind::binary: {
      static const char ops[] = {'+', '-', '*', '/', '^'};
      os << '(';
      print(*n.children[0], os);
      os << ' ' << ops[static_cast<int>(n.binary_op)] << ' ';
      print(*n.children[1], os);
      os << ')';
      return;
    }
    case Node::Kind::nary: {
      os << (n.nary_op == NaryOp::min ? "min(" : "max(");
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        if (i) os << ", ";
        print(*n.children[i], os);
      }
      os << ')';
      return;
    }
  }
}

}  // namespace

std::vector<std::string> Expression::variables() const {
  std::set<std::string> names;
  if (root_) collect_vars(*root_, names);
  return {names.begin(), names.end()};
}

std::string Expression::to_string() const {
  std::ostringstream os;
  if (root_) print(*root_, os);
  return os.str();
}

Expression parse(std::string_view source) { return Expression(Parser(source).parse_all()); }

double evaluate(const Expression& e, const std::map<std::string, double>& bindings) {
  if (e.empty()) throw EvalError("empty expression");
  return eval_node(e.root(), bindings);
}

void require_variables(const Expression& e, std::span<const std::string> allowed) {
  for (const auto& v : e.variables())
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end())
      throw EvalError("undeclared variable '" + v + "' in '" + e.to_string() + "'");
}

// ---------------------------------------------------------------------------

CompiledExpression::CompiledExpression(const Expression& e, std::span<const std::string> slots)
    : slot_count_(slots.size()), source_(e.to_string()) {
  if (e.empty()) throw EvalError("empty expression");
  require_variables(e, slots);
  emit(e.root(), slots);
  std::size_t depth = 0;
  for (const auto& ins : code_) {
    switch (ins.op) {
      case Op::push:
      case Op::load:
        ++depth;
        break;
      case Op::add: case Op::sub: case Op::mul: case Op::div: case Op::pow:
        --depth;
        break;
      case Op::min:
      case Op::max:
        depth -= ins.arity - 1;
        break;
      default:
        break;
    }
    max_stack_ = std::max(max_stack_, depth);
  }
}

void CompiledExpression::emit(const Node& n, std::span<const std::string> slots) {
  switch (n.kind) {
    case Node::Kind::constant:
      code_.push_back({Op::push, 0, 0, n.value});
      return;
    case Node::Kind::variable: {
      const auto it = std::find(slots.begin(), slots.end(), n.name);
      code_.push_back({Op::load, 0, static_cast<std::size_t>(it - slots.begin()), 0.0});
      return;
    }
    case Node::Kind::unary:
      emit(*n.children[0], slots);
      code_.push_back({static_cast<Op>(static_cast<int>(Op::neg) + static_cast<int>(n.unary_op))});
      return;
    case Node::Kind::binary:
      emit(*n.children[0], slots);
      emit(*n.children[1], slots);
      code_.push_back({static_cast<Op>(static_cast<int>(Op::add) + static_cast<int>(n.binary_op))});
      return;
    case Node::Kind::nary:
      for (const auto& c : n.children) emit(*c, slots);
      code_.push_back({n.nary_op == NaryOp::min ? Op::min : Op::max,
                       static_cast<unsigned>(n.children.size())});
      return;
  }
}

double CompiledExpression::operator()(std::span<const double> values) const {
  if (values.size() < slot_count_) throw EvalError("too few values for compiled expression '" + source_ + "'");
  std::array<double, 64> small{};
  std::vector<double> large;
  double* stack = small.data();
  if (max_stack_ > small.size()) {
    large.resize(max_stack_);
    stack = large.data();
  }
  std::size_t sp = 0;
  for (const auto& ins : code_) {
    switch (ins.op) {
      case Op::push:
        stack[sp++] = ins.value;
        break;
      case Op::load: {
        const double v = values[ins.slot];
        if (!std::isfinite(v)) throw EvalError("non-finite input to '" + source_ + "'");
        stack[sp++] = v;
        break;
      }
      case Op::neg: case Op::abs: case Op::sin: case Op::cos: case Op::exp: case Op::sqrt:
        stack[sp - 1] =
            apply_op(static_cast<UnaryOp>(static_cast<int>(ins.op) - static_cast<int>(Op::neg)), stack[sp - 1]);
        break;
      case Op::add: case Op::sub: case Op::mul: case Op::div: case Op::pow:
        --sp;
        stack[sp - 1] = apply_op(static_cast<BinaryOp>(static_cast<int>(ins.op) - static_cast<int>(Op::add)),
                              stack[sp - 1], stack[sp]);
        break;
      case Op::min:
      case Op::max: {
        sp -= ins.arity;
        stack[sp] = apply_op(ins.op == Op::min ? NaryOp::min : NaryOp::max,
                          std::span<const double>(stack + sp, ins.arity));
        ++sp;
        break;
      }
    }
  }
  return stack[0];
}

}  // namespace region_gain::expr
