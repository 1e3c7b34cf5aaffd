#pragma once

#include <memory>
#include <string>
#include <vector>

#include "forge/linalg.hpp"

namespace forge {

enum class ExprOp {
  Const, Var, Add, Sub, Mul, Div, Pow, Neg,
  Sin, Cos, Exp, Tanh, Abs,
  SqNorm,      // squared euclidean norm of listed arguments
  SqNormAll,   // squared euclidean norm of the whole input vector
};

struct ExprNode;
using ExprPtr = std::shared_ptr<const ExprNode>;

struct ExprNode {
  ExprOp op;
  double value = 0.0;  // Const
  int index = 0;       // Var, 1-based
  std::vector<ExprPtr> kids;
};

// A target map from a compact box in R^{d_x} to R^{d_y}. Either one
// expression tree per output, or a piecewise-linear curve given by vertices
// under uniform parameterization on [0, 1] (then d_x == 1).
struct TargetFunction {
  int d_x = 0;
  int d_y = 0;
  std::string name;
  std::vector<ExprPtr> outputs;
  std::vector<Vec> vertices;

  bool is_polyline() const { return !vertices.empty(); }
};

// Outputs are ';'-separated expressions; their count defines d_y. When
// d_x_hint > 0 every variable index must lie in 1..d_x_hint; otherwise d_x
// is the largest index that appears (at least 1).
TargetFunction parse_target(const std::string& text, int d_x_hint = 0);

Vec eval_target(const TargetFunction& f, const Vec& x);

// Text that parses back to a structurally identical tree.
std::string print_target(const TargetFunction& f);

bool expr_equal(const ExprPtr& a, const ExprPtr& b);

// Registered names: sqnorm, four_curve, four_curve_3d, identity_d, swap2.
// `d` is consulted only by the dimension-generic entries.
TargetFunction builtin_target(const std::string& name, int d = 2);

std::vector<std::string> builtin_names();

}  // namespace forge
