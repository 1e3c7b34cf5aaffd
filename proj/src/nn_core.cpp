#include "forge/nn_core.hpp"

#include <cmath>

#include "forge/errors.hpp"
#include "json.hpp"

namespace forge {

Activation::Activation(double a) : alpha(a) {
  if (!(a > 0.0) || a == 1.0)
    throw StructureError("activation slope must be positive and != 1");
}

double leaky_relu(double s, double alpha) {
  return s > 0.0 ? s : alpha * s;
}

double leaky_relu_inverse(double s, double alpha) {
  return s > 0.0 ? s : s / alpha;
}

AffineMap::AffineMap(Mat w, Vec bias) : W(std::move(w)), b(std::move(bias)) {
  if (static_cast<int>(b.size()) != W.rows)
    throw StructureError("affine: bias length must match row count");
  if (W.rows == W.cols && W.rows > 0) {
    double scale = 0.0;
    for (double v : W.a) scale = std::max(scale, std::fabs(v));
    if (scale > 0.0) {
      double thresh = 1e-12 * std::pow(scale, W.rows);
      nonsingular = std::fabs(lu_det(W)) >= thresh;
    }
  }
}

NarrowNet::NarrowNet(int d_in, int d_out, int width, double alpha_,
                     std::vector<Layer> ls)
    : input_dim(d_in), output_dim(d_out), declared_width(width), alpha(alpha_),
      layers(std::move(ls)) {
  Activation check(alpha);  // validates the slope
  (void)check;
  if (layers.empty()) throw StructureError("net: needs at least one affine");
  if (declared_width < 1) throw StructureError("net: width must be positive");
  if (layers.front().map.cols() != input_dim)
    throw StructureError("net: first layer input dimension mismatch");
  if (layers.back().map.rows() != output_dim)
    throw StructureError("net: last layer output dimension mismatch");
  if (layers.back().activated)
    throw StructureError("net: final affine must not be activated");
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    if (layers[i].map.rows() != layers[i + 1].map.cols())
      throw StructureError("net: layer dimension chain broken");
    if (layers[i].map.rows() > declared_width)
      throw StructureError("net: intermediate dimension exceeds declared width");
  }
}

int NarrowNet::depth_activated() const {
  int d = 0;
  for (const Layer& l : layers)
    if (l.activated) ++d;
  return d;
}

Vec eval_net(const NarrowNet& net, const Vec& x) {
  if (static_cast<int>(x.size()) != net.input_dim)
    throw StructureError("eval: input dimension mismatch");
  Vec v = x;
  for (const Layer& l : net.layers) {
    v = l.map.apply(v);
    if (l.activated)
      for (double& s : v) s = leaky_relu(s, net.alpha);
  }
  return v;
}

Vec invert_net(const NarrowNet& net, const Vec& y) {
  if (net.input_dim != net.declared_width || net.output_dim != net.declared_width)
    throw NonInvertibleError("invert: net is not constant-width");
  for (const Layer& l : net.layers) {
    if (l.map.rows() != l.map.cols())
      throw NonInvertibleError("invert: non-square layer");
    if (!l.map.nonsingular)
      throw NonInvertibleError("invert: singular layer");
  }
  if (static_cast<int>(y.size()) != net.output_dim)
    throw StructureError("invert: output dimension mismatch");
  Vec v = y;
  for (auto it = net.layers.rbegin(); it != net.layers.rend(); ++it) {
    if (it->activated)
      for (double& s : v) s = leaky_relu_inverse(s, net.alpha);
    v = lu_solve(it->map.W, vsub(v, it->map.b));
  }
  return v;
}

int min_width(int d_x, int d_y) {
  if (d_x < 1 || d_y < 1) throw StructureError("min_width: dimensions must be positive");
  int w = std::max(d_x + 1, d_y);
  if (d_y == d_x + 1) ++w;
  return w;
}

using nlohmann::ordered_json;

std::string serialize_net(const NarrowNet& net) {
  ordered_json j;
  j["alpha"] = net.alpha;
  j["alpha_hex"] = hex_double(net.alpha);
  j["declared_width"] = net.declared_width;
  j["input_dim"] = net.input_dim;
  j["output_dim"] = net.output_dim;
  j["layers"] = ordered_json::array();
  for (const Layer& l : net.layers) {
    ordered_json jl;
    ordered_json w = ordered_json::array(), wx = ordered_json::array();
    for (int i = 0; i < l.map.rows(); ++i) {
      ordered_json row = ordered_json::array(), rowx = ordered_json::array();
      for (int c = 0; c < l.map.cols(); ++c) {
        row.push_back(l.map.W(i, c));
        rowx.push_back(hex_double(l.map.W(i, c)));
      }
      w.push_back(row);
      wx.push_back(rowx);
    }
    ordered_json b = ordered_json::array(), bx = ordered_json::array();
    for (double v : l.map.b) {
      b.push_back(v);
      bx.push_back(hex_double(v));
    }
    jl["W"] = w;
    jl["b"] = b;
    jl["W_hex"] = wx;
    jl["b_hex"] = bx;
    jl["activated"] = l.activated;
    j["layers"].push_back(jl);
  }
  return j.dump(1);
}

namespace {

double load_double(const ordered_json& dec, const ordered_json* hex) {
  if (hex != nullptr) return parse_hex_double(hex->get<std::string>());
  return dec.get<double>();
}

}  // namespace

NarrowNet deserialize_net(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw SchemaError(std::string("net file is not valid JSON: ") + e.what());
  }
  try {
    double alpha = j.contains("alpha_hex")
                       ? parse_hex_double(j["alpha_hex"].get<std::string>())
                       : j.at("alpha").get<double>();
    int width = j.at("declared_width").get<int>();
    int d_in = j.at("input_dim").get<int>();
    int d_out = j.at("output_dim").get<int>();
    std::vector<Layer> layers;
    for (const auto& jl : j.at("layers")) {
      const auto& w = jl.at("W");
      int rows = static_cast<int>(w.size());
      if (rows == 0) throw SchemaError("net file: empty weight matrix");
      int cols = static_cast<int>(w[0].size());
      const ordered_json* wx = jl.contains("W_hex") ? &jl["W_hex"] : nullptr;
      Mat W(rows, cols);
      for (int i = 0; i < rows; ++i) {
        if (static_cast<int>(w[i].size()) != cols)
          throw SchemaError("net file: ragged weight matrix");
        for (int c = 0; c < cols; ++c)
          W(i, c) = load_double(w[i][c], wx ? &(*wx)[i][c] : nullptr);
      }
      const auto& b = jl.at("b");
      const ordered_json* bx = jl.contains("b_hex") ? &jl["b_hex"] : nullptr;
      if (static_cast<int>(b.size()) != rows)
        throw SchemaError("net file: bias length mismatch");
      Vec bias(rows);
      for (int i = 0; i < rows; ++i)
        bias[i] = load_double(b[i], bx ? &(*bx)[i] : nullptr);
      layers.push_back(Layer{AffineMap(std::move(W), std::move(bias)),
                             jl.at("activated").get<bool>()});
    }
    return NarrowNet(d_in, d_out, width, alpha, std::move(layers));
  } catch (const SchemaError&) {
    throw;
  } catch (const StructureError& e) {
    throw SchemaError(std::string("net file violates structure rules: ") + e.what());
  } catch (const std::exception& e) {
    throw SchemaError(std::string("net file malformed: ") + e.what());
  }
}

BoxDomain::BoxDomain(Vec l, Vec h) : lo(std::move(l)), hi(std::move(h)) {
  if (lo.size() != hi.size() || lo.empty())
    throw StructureError("box: bound lists must match and be nonempty");
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (!(lo[i] < hi[i]))
      throw StructureError("box: every lower bound must be strictly below the upper");
}

bool BoxDomain::contains(const Vec& x, double slack) const {
  if (x.size() != lo.size()) return false;
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
  return true;
}

Vec BoxDomain::center() const {
  Vec c(lo.size());
  for (std::size_t i = 0; i < lo.size(); ++i) c[i] = 0.5 * (lo[i] + hi[i]);
  return c;
}

BoxDomain BoxDomain::inflate(double factor) const {
  Vec l = lo, h = hi;
  for (std::size_t i = 0; i < lo.size(); ++i) {
    double half = 0.5 * (hi[i] - lo[i]) * factor;
    l[i] -= half;
    h[i] += half;
  }
  return BoxDomain(l, h);
}

}  // namespace forge
