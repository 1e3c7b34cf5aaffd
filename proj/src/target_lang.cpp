#include "forge/target_lang.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "forge/errors.hpp"
#include "forge/topology.hpp"

namespace forge {

namespace {

ExprPtr node(ExprOp op, std::vector<ExprPtr> kids = {}) {
  auto n = std::make_shared<ExprNode>();
  n->op = op;
  n->kids = std::move(kids);
  return n;
}

ExprPtr const_node(double v) {
  auto n = std::make_shared<ExprNode>();
  n->op = ExprOp::Const;
  n->value = v;
  return n;
}

ExprPtr var_node(int idx) {
  auto n = std::make_shared<ExprNode>();
  n->op = ExprOp::Var;
  n->index = idx;
  return n;
}

// ---- recursive descent parser ------------------------------------------
//
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := unary ('^' factor)?
//   unary  := '-' unary | atom
//   atom   := number | 'pi' | ident '(' args ')' | var | '(' expr ')'
//   var    := 'x' digits
struct Parser {
  const std::string& s;
  std::size_t pos = 0;
  int d_x_hint;
  int max_var = 0;

  Parser(const std::string& text, int hint) : s(text), d_x_hint(hint) {}

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\n'))
      ++pos;
  }

  bool eat(char c) {
    skip_ws();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  char peek() {
    skip_ws();
    return pos < s.size() ? s[pos] : '\0';
  }

  [[noreturn]] void fail(const std::string& msg) { throw ParseError(msg, pos); }

  ExprPtr expr() {
    ExprPtr lhs = term();
    while (true) {
      if (eat('+')) lhs = node(ExprOp::Add, {lhs, term()});
      else if (eat('-')) lhs = node(ExprOp::Sub, {lhs, term()});
      else return lhs;
    }
  }

  ExprPtr term() {
    ExprPtr lhs = factor();
    while (true) {
      if (eat('*')) lhs = node(ExprOp::Mul, {lhs, factor()});
      else if (eat('/')) lhs = node(ExprOp::Div, {lhs, factor()});
      else return lhs;
    }
  }

  ExprPtr factor() {
    ExprPtr base = unary();
    if (eat('^')) return node(ExprOp::Pow, {base, factor()});
    return base;
  }

  ExprPtr unary() {
    if (eat('-')) return node(ExprOp::Neg, {unary()});
    return atom();
  }

  ExprPtr atom() {
    skip_ws();
    if (pos >= s.size()) fail("unexpected end of expression");
    char c = s[pos];
    if (c == '(') {
      ++pos;
      ExprPtr e = expr();
      if (!eat(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c))) return ident();
    fail(std::string("unexpected character '") + c + "'");
  }

  ExprPtr number() {
    std::size_t start = pos;
    while (pos < s.size() &&
           (std::isdigit(static_cast<unsigned char>(s[pos])) || s[pos] == '.'))
      ++pos;
    if (pos < s.size() && (s[pos] == 'e' || s[pos] == 'E')) {
      std::size_t save = pos++;
      if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) ++pos;
      if (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
      } else {
        pos = save;
      }
    }
    std::string tok = s.substr(start, pos - start);
    try {
      std::size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return const_node(v);
    } catch (const std::exception&) {
      pos = start;
      fail("bad number literal");
    }
  }

  ExprPtr ident() {
    std::size_t start = pos;
    while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) ||
                              s[pos] == '_'))
      ++pos;
    std::string name = s.substr(start, pos - start);
    if (name == "pi") return const_node(M_PI);
    if (name.size() >= 2 && name[0] == 'x') {
      bool digits = true;
      for (std::size_t i = 1; i < name.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(name[i]))) digits = false;
      if (digits) {
        int idx = std::stoi(name.substr(1));
        if (idx < 1) { pos = start; fail("variable indices start at 1"); }
        if (d_x_hint > 0 && idx > d_x_hint) {
          pos = start;
          fail("variable index out of range");
        }
        max_var = std::max(max_var, idx);
        return var_node(idx);
      }
    }
    static const std::map<std::string, ExprOp> unary_fns{
        {"sin", ExprOp::Sin}, {"cos", ExprOp::Cos}, {"exp", ExprOp::Exp},
        {"tanh", ExprOp::Tanh}, {"abs", ExprOp::Abs}};
    auto it = unary_fns.find(name);
    if (it != unary_fns.end()) {
      if (!eat('(')) fail("expected '(' after function name");
      ExprPtr arg = expr();
      if (!eat(')')) fail("expected ')'");
      return node(it->second, {arg});
    }
    if (name == "sqnorm") {
      if (!eat('(')) fail("expected '(' after function name");
      // sqnorm(x) sums squares of the whole input vector
      skip_ws();
      if (pos + 1 < s.size() && s[pos] == 'x' &&
          !std::isalnum(static_cast<unsigned char>(s[pos + 1]))) {
        std::size_t save = pos;
        ++pos;
        if (eat(')')) return node(ExprOp::SqNormAll);
        pos = save;
      } else if (pos + 1 == s.size() && s[pos] == 'x') {
        fail("expected ')'");
      }
      std::vector<ExprPtr> args{expr()};
      while (eat(',')) args.push_back(expr());
      if (!eat(')')) fail("expected ')'");
      return node(ExprOp::SqNorm, std::move(args));
    }
    pos = start;
    fail("unknown identifier '" + name + "'");
  }
};

double checked(double v) {
  if (!std::isfinite(v)) throw EvalDomainError("expression value is not finite");
  return v;
}

double eval_expr(const ExprPtr& e, const Vec& x) {
  switch (e->op) {
    case ExprOp::Const: return e->value;
    case ExprOp::Var: return x[e->index - 1];
    case ExprOp::Add: return checked(eval_expr(e->kids[0], x) + eval_expr(e->kids[1], x));
    case ExprOp::Sub: return checked(eval_expr(e->kids[0], x) - eval_expr(e->kids[1], x));
    case ExprOp::Mul: return checked(eval_expr(e->kids[0], x) * eval_expr(e->kids[1], x));
    case ExprOp::Div: {
      double den = eval_expr(e->kids[1], x);
      if (den == 0.0) throw EvalDomainError("division by zero");
      return checked(eval_expr(e->kids[0], x) / den);
    }
    case ExprOp::Pow:
      return checked(std::pow(eval_expr(e->kids[0], x), eval_expr(e->kids[1], x)));
    case ExprOp::Neg: return -eval_expr(e->kids[0], x);
    case ExprOp::Sin: return std::sin(eval_expr(e->kids[0], x));
    case ExprOp::Cos: return std::cos(eval_expr(e->kids[0], x));
    case ExprOp::Exp: return checked(std::exp(eval_expr(e->kids[0], x)));
    case ExprOp::Tanh: return std::tanh(eval_expr(e->kids[0], x));
    case ExprOp::Abs: return std::fabs(eval_expr(e->kids[0], x));
    case ExprOp::SqNorm: {
      double s = 0.0;
      for (const ExprPtr& k : e->kids) {
        double v = eval_expr(k, x);
        s += v * v;
      }
      return checked(s);
    }
    case ExprOp::SqNormAll: {
      double s = 0.0;
      for (double v : x) s += v * v;
      return checked(s);
    }
  }
  throw EvalDomainError("unhandled expression node");
}

int max_var_index(const ExprPtr& e) {
  int m = e->op == ExprOp::Var ? e->index : 0;
  if (e->op == ExprOp::SqNormAll) m = std::max(m, 1);
  for (const ExprPtr& k : e->kids) m = std::max(m, max_var_index(k));
  return m;
}

// Precedence: Add/Sub 1, Mul/Div 2, Neg 3, Pow 4, leaves 5.
int prec(const ExprPtr& e) {
  switch (e->op) {
    case ExprOp::Add:
    case ExprOp::Sub: return 1;
    case ExprOp::Mul:
    case ExprOp::Div: return 2;
    case ExprOp::Neg: return 3;
    case ExprOp::Pow: return 4;
    default: return 5;
  }
}

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void print_expr(const ExprPtr& e, std::string& out);

void print_child(const ExprPtr& e, std::string& out, bool parens) {
  if (parens) out += '(';
  print_expr(e, out);
  if (parens) out += ')';
}

void print_expr(const ExprPtr& e, std::string& out) {
  switch (e->op) {
    case ExprOp::Const:
      if (e->value == M_PI) { out += "pi"; return; }
      out += fmt_num(e->value);
      return;
    case ExprOp::Var:
      out += 'x';
      out += std::to_string(e->index);
      return;
    case ExprOp::Add:
    case ExprOp::Sub:
      print_child(e->kids[0], out, prec(e->kids[0]) < 1);
      out += e->op == ExprOp::Add ? '+' : '-';
      print_child(e->kids[1], out, prec(e->kids[1]) <= 1);
      return;
    case ExprOp::Mul:
    case ExprOp::Div:
      print_child(e->kids[0], out, prec(e->kids[0]) < 2);
      out += e->op == ExprOp::Mul ? '*' : '/';
      print_child(e->kids[1], out, prec(e->kids[1]) <= 2);
      return;
    case ExprOp::Pow:
      // base must parse as a unary: parenthesize anything at or below Mul
      // precedence and chained powers (the operator is right associative).
      print_child(e->kids[0], out,
                  prec(e->kids[0]) < 3 || e->kids[0]->op == ExprOp::Pow);
      out += '^';
      print_child(e->kids[1], out, prec(e->kids[1]) < 3);
      return;
    case ExprOp::Neg:
      out += '-';
      print_child(e->kids[0], out,
                  prec(e->kids[0]) < 3 || e->kids[0]->op == ExprOp::Pow);
      return;
    case ExprOp::Sin: out += "sin"; break;
    case ExprOp::Cos: out += "cos"; break;
    case ExprOp::Exp: out += "exp"; break;
    case ExprOp::Tanh: out += "tanh"; break;
    case ExprOp::Abs: out += "abs"; break;
    case ExprOp::SqNorm: out += "sqnorm"; break;
    case ExprOp::SqNormAll:
      out += "sqnorm(x)";
      return;
  }
  out += '(';
  for (std::size_t i = 0; i < e->kids.size(); ++i) {
    if (i) out += ',';
    print_expr(e->kids[i], out);
  }
  out += ')';
}

}  // namespace

TargetFunction parse_target(const std::string& text, int d_x_hint) {
  Parser p(text, d_x_hint);
  TargetFunction f;
  f.name = text;
  while (true) {
    f.outputs.push_back(p.expr());
    p.skip_ws();
    if (p.pos >= text.size()) break;
    if (!p.eat(';')) p.fail("expected ';' or end of input");
    p.skip_ws();
    if (p.pos >= text.size()) break;  // trailing ';' tolerated
  }
  f.d_y = static_cast<int>(f.outputs.size());
  f.d_x = d_x_hint > 0 ? d_x_hint : std::max(1, p.max_var);
  return f;
}

Vec eval_target(const TargetFunction& f, const Vec& x) {
  if (static_cast<int>(x.size()) != f.d_x)
    throw StructureError("target evaluated at point of wrong dimension");
  if (f.is_polyline()) {
    int m = static_cast<int>(f.vertices.size());
    double s = std::min(1.0, std::max(0.0, x[0])) * (m - 1);
    int seg = std::min(m - 2, static_cast<int>(s));
    double t = s - seg;
    Vec y(f.d_y);
    for (int j = 0; j < f.d_y; ++j)
      y[j] = (1.0 - t) * f.vertices[seg][j] + t * f.vertices[seg + 1][j];
    return y;
  }
  Vec y(f.d_y);
  for (int j = 0; j < f.d_y; ++j) y[j] = eval_expr(f.outputs[j], x);
  return y;
}

std::string print_target(const TargetFunction& f) {
  if (f.is_polyline()) return f.name;
  std::string out;
  for (int j = 0; j < f.d_y; ++j) {
    if (j) out += ';';
    print_expr(f.outputs[j], out);
  }
  return out;
}

bool expr_equal(const ExprPtr& a, const ExprPtr& b) {
  if (a->op != b->op) return false;
  if (a->op == ExprOp::Const && a->value != b->value) return false;
  if (a->op == ExprOp::Var && a->index != b->index) return false;
  if (a->kids.size() != b->kids.size()) return false;
  for (std::size_t i = 0; i < a->kids.size(); ++i)
    if (!expr_equal(a->kids[i], b->kids[i])) return false;
  return true;
}

TargetFunction builtin_target(const std::string& name, int d) {
  if (name == "sqnorm") {
    if (d < 1) throw StructureError("sqnorm: need d >= 1");
    TargetFunction f;
    f.d_x = d;
    f.d_y = 1;
    f.name = "sqnorm";
    f.outputs.push_back(node(ExprOp::SqNormAll));
    return f;
  }
  if (name == "identity_d") {
    if (d < 1) throw StructureError("identity_d: need d >= 1");
    TargetFunction f;
    f.d_x = f.d_y = d;
    f.name = "identity_d";
    for (int j = 1; j <= d; ++j) f.outputs.push_back(var_node(j));
    return f;
  }
  if (name == "swap2") {
    TargetFunction f;
    f.d_x = f.d_y = 2;
    f.name = "swap2";
    f.outputs.push_back(var_node(2));
    f.outputs.push_back(var_node(1));
    return f;
  }
  if (name == "four_curve") {
    TargetFunction f;
    f.d_x = 1;
    f.d_y = 2;
    f.name = "four_curve";
    f.vertices = four_curve(2).vertices;
    return f;
  }
  if (name == "four_curve_3d") {
    TargetFunction f;
    f.d_x = 1;
    f.d_y = 3;
    f.name = "four_curve_3d";
    f.vertices = four_curve(3, 0.1).vertices;
    return f;
  }
  throw StructureError("unknown builtin target '" + name + "'");
}

std::vector<std::string> builtin_names() {
  return {"sqnorm", "four_curve", "four_curve_3d", "identity_d", "swap2"};
}

}  // namespace forge
