#include "lesinr/numkit/tape.hpp"

#include <algorithm>
#include <cmath>

#include "lesinr/numkit/kernels.hpp"

namespace lesinr::numkit {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::affine: return "affine";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::dot: return "dot";
    case OpKind::sum: return "sum";
    case OpKind::scale: return "scale";
    case OpKind::add: return "add";
    case OpKind::log_loss: return "log_loss";
  }
  return "?";
}

namespace {

template <typename T>
T sigmoid_scalar(T z) {
  if (z >= T{0}) return T{1} / (T{1} + std::exp(-z));
  const T e = std::exp(z);
  return e / (T{1} + e);
}

template <typename T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
Var Tape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw LookupError("var " + std::to_string(v.id) + " not on this tape");
  return nodes_[v.id];
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  const auto& n = node(v);
  return n.ref ? *n.ref : n.owned;
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n = make_node(OpKind::constant, {});
  n.owned = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::parameter(const std::string& name, const Tensor<T>& value) {
  Node n = make_node(OpKind::parameter, {});
  n.ref = &value;
  n.name = name;
  return push(std::move(n));
}

template <typename T>
Tensor<T> Tape<T>::evaluate(const Node& n, const std::vector<const Tensor<T>*>& in) const {
  switch (n.kind) {
    case OpKind::constant:
    case OpKind::parameter:
      return n.ref ? *n.ref : n.owned;

    case OpKind::affine: {
      const auto& x = *in[0];
      const auto& w = *in[1];
      const std::size_t rows = x.rows();
      const std::size_t inner = w.shape()[0];
      const std::size_t cols = w.shape()[1];
      Shape out_shape = x.rank() == 2 ? Shape{rows, cols} : Shape{cols};
      Tensor<T> out(out_shape);
      kernels::matmul<T>(x.data(), w.data(), out.data(), rows, inner, cols);
      if (in.size() == 3) {
        const auto bias = in[2]->data();
        for (std::size_t r = 0; r < rows; ++r) {
          auto o = out.row(r);
          for (std::size_t j = 0; j < cols; ++j) o[j] += bias[j];
        }
      }
      return out;
    }

    case OpKind::relu: {
      Tensor<T> out = *in[0];
      for (auto& v : out.data()) v = v > T{0} ? v : T{0};
      return out;
    }

    case OpKind::sigmoid: {
      Tensor<T> out = *in[0];
      for (auto& v : out.data()) v = sigmoid_scalar(v);
      return out;
    }

    case OpKind::add: {
      Tensor<T> out = *in[0];
      add_into<T>(out.data(), in[1]->data());
      return out;
    }

    case OpKind::scale: {
      Tensor<T> out = *in[0];
      for (auto& v : out.data()) v *= n.factor;
      return out;
    }

    case OpKind::sum: {
      T s{0};
      for (auto v : in[0]->data()) s += v;
      return Tensor<T>::scalar(s);
    }

    case OpKind::dot: {
      const auto& a = *in[0];
      const auto& b = *in[1];
      if (n.scalar_dot) return Tensor<T>::scalar(kernels::dot<T>(a.data(), b.data()));
      Tensor<T> out(Shape{n.pairs.size()});
      for (std::size_t p = 0; p < n.pairs.size(); ++p) {
        out[p] = kernels::dot<T>(a.row(n.pairs[p].first), b.row(n.pairs[p].second));
      }
      return out;
    }

    case OpKind::log_loss: {
      const auto probs = in[0]->data();
      const T lo = static_cast<T>(kProbClamp);
      const T hi = T{1} - lo;
      T s{0};
      for (std::size_t i = 0; i < probs.size(); ++i) {
        const T p = std::clamp(probs[i], lo, hi);
        s += n.weights[i] * (n.targets[i] ? std::log(p) : std::log(T{1} - p));
      }
      return Tensor<T>::scalar(-s);
    }
  }
  throw ConfigError("unknown op");
}

template <typename T>
Var Tape<T>::affine(Var x, Var weight, Var bias) {
  const auto& xv = value(x);
  const auto& wv = value(weight);
  const auto& bv = value(bias);
  if (wv.rank() != 2 || xv.rank() < 1 || xv.rank() > 2 || xv.cols() != wv.shape()[0]) {
    throw DimensionError("affine: input " + shape_string(xv.shape()) + " does not conform to weight " +
                         shape_string(wv.shape()));
  }
  if (bv.rank() != 1 || bv.size() != wv.shape()[1]) {
    throw DimensionError("affine: bias " + shape_string(bv.shape()) + " does not match weight " +
                         shape_string(wv.shape()));
  }
  Node n = make_node(OpKind::affine, {x.id, weight.id, bias.id});
  n.owned = evaluate(n, {&xv, &wv, &bv});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::affine(Var x, Var weight) {
  const auto& xv = value(x);
  const auto& wv = value(weight);
  if (wv.rank() != 2 || xv.rank() < 1 || xv.rank() > 2 || xv.cols() != wv.shape()[0]) {
    throw DimensionError("affine: input " + shape_string(xv.shape()) + " does not conform to weight " +
                         shape_string(wv.shape()));
  }
  Node n = make_node(OpKind::affine, {x.id, weight.id});
  n.owned = evaluate(n, {&xv, &wv});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::relu(Var x) {
  Node n = make_node(OpKind::relu, {x.id});
  n.owned = evaluate(n, {&value(x)});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::sigmoid(Var x) {
  Node n = make_node(OpKind::sigmoid, {x.id});
  n.owned = evaluate(n, {&value(x)});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()) +
                         " differ");
  }
  Node n = make_node(OpKind::add, {a.id, b.id});
  n.owned = evaluate(n, {&av, &bv});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::scale(Var x, T factor) {
  Node n = make_node(OpKind::scale, {x.id});
  n.factor = factor;
  n.owned = evaluate(n, {&value(x)});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::sum(Var x) {
  Node n = make_node(OpKind::sum, {x.id});
  n.owned = evaluate(n, {&value(x)});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::dot(Var a, Var b, std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs) {
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.rank() > 2 || bv.rank() > 2 || av.cols() != bv.cols()) {
    throw DimensionError("dot: rows of " + shape_string(av.shape()) + " and " + shape_string(bv.shape()) +
                         " differ in length");
  }
  if (pairs.empty()) throw DimensionError("dot: empty pair list");
  for (const auto& [i, j] : pairs) {
    if (i >= av.rows() || j >= bv.rows()) {
      throw DimensionError("dot: pair (" + std::to_string(i) + ", " + std::to_string(j) +
                           ") out of range for " + shape_string(av.shape()) + " and " +
                           shape_string(bv.shape()));
    }
  }
  Node n = make_node(OpKind::dot, {a.id, b.id});
  n.pairs = std::move(pairs);
  n.owned = evaluate(n, {&av, &bv});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::dot(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  if (av.shape() != bv.shape() || av.rank() != 1) {
    throw DimensionError("dot: expected equal-length vectors, got " + shape_string(av.shape()) +
                         " and " + shape_string(bv.shape()));
  }
  Node n = make_node(OpKind::dot, {a.id, b.id});
  n.scalar_dot = true;
  n.owned = evaluate(n, {&av, &bv});
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::log_loss(Var probs, std::vector<std::uint8_t> targets, std::vector<T> weights) {
  const auto& pv = value(probs);
  if (targets.size() != pv.size() || weights.size() != pv.size()) {
    throw DimensionError("log_loss: " + std::to_string(pv.size()) + " probabilities, " +
                         std::to_string(targets.size()) + " targets, " + std::to_string(weights.size()) +
                         " weights");
  }
  Node n = make_node(OpKind::log_loss, {probs.id});
  n.targets = std::move(targets);
  n.weights = std::move(weights);
  n.owned = evaluate(n, {&pv});
  return push(std::move(n));
}

template <typename T>
GradientSet<T> Tape<T>::backward(Var loss) const {
  const auto& lv = value(loss);
  if (lv.size() != 1 || lv.rank() > 1) {
    throw ConfigError("backward: loss must be a scalar, got shape " + shape_string(lv.shape()));
  }

  const std::size_t count = loss.id + 1;
  std::vector<bool> needs(count, false);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& n = nodes_[i];
    if (n.kind == OpKind::parameter) {
      needs[i] = true;
    } else {
      for (auto in : n.inputs) needs[i] = needs[i] || needs[in];
    }
  }

  std::vector<Tensor<T>> grads(count);
  std::vector<bool> has(count, false);
  auto grad_of = [&](std::uint32_t id) -> Tensor<T>& {
    if (!has[id]) {
      grads[id] = Tensor<T>(value(Var{id}).shape());
      has[id] = true;
    }
    return grads[id];
  };

  grads[loss.id] = Tensor<T>(lv.shape());
  grads[loss.id][0] = T{1};
  has[loss.id] = true;

  for (std::size_t idx = count; idx-- > 0;) {
    if (!has[idx] || !needs[idx]) continue;
    const auto& n = nodes_[idx];
    const auto& g = grads[idx];
    switch (n.kind) {
      case OpKind::constant:
      case OpKind::parameter:
        break;

      case OpKind::affine: {
        const auto& x = value(Var{n.inputs[0]});
        const auto& w = value(Var{n.inputs[1]});
        const std::size_t rows = x.rows();
        const std::size_t inner = w.shape()[0];
        const std::size_t cols = w.shape()[1];
        if (needs[n.inputs[0]]) {
          std::vector<T> wt(inner * cols);
          kernels::transpose<T>(w.data(), wt, inner, cols);
          Tensor<T> dx(x.shape());
          kernels::matmul<T>(g.data(), wt, dx.data(), rows, cols, inner);
          add_into<T>(grad_of(n.inputs[0]).data(), dx.data());
        }
        if (needs[n.inputs[1]]) {
          kernels::matmul_tn_accumulate<T>(x.data(), g.data(), grad_of(n.inputs[1]).data(), rows, inner,
                                           cols);
        }
        if (n.inputs.size() == 3 && needs[n.inputs[2]]) {
          auto db = grad_of(n.inputs[2]).data();
          for (std::size_t r = 0; r < rows; ++r) add_into<T>(db, g.row(r));
        }
        break;
      }

      case OpKind::relu: {
        const auto x = value(Var{n.inputs[0]}).data();
        auto dx = grad_of(n.inputs[0]).data();
        const auto gd = g.data();
        for (std::size_t i = 0; i < dx.size(); ++i) {
          if (x[i] > T{0}) dx[i] += gd[i];
        }
        break;
      }

      case OpKind::sigmoid: {
        const auto y = n.owned.data();
        auto dx = grad_of(n.inputs[0]).data();
        const auto gd = g.data();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gd[i] * y[i] * (T{1} - y[i]);
        break;
      }

      case OpKind::add: {
        for (int k = 0; k < 2; ++k) {
          if (needs[n.inputs[k]]) add_into<T>(grad_of(n.inputs[k]).data(), g.data());
        }
        break;
      }

      case OpKind::scale: {
        auto dx = grad_of(n.inputs[0]).data();
        const auto gd = g.data();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += n.factor * gd[i];
        break;
      }

      case OpKind::sum: {
        const T gs = g[0];
        for (auto& v : grad_of(n.inputs[0]).data()) v += gs;
        break;
      }

      case OpKind::dot: {
        const auto& a = value(Var{n.inputs[0]});
        const auto& b = value(Var{n.inputs[1]});
        const bool need_a = needs[n.inputs[0]];
        const bool need_b = needs[n.inputs[1]];
        if (n.scalar_dot) {
          const T gs = g[0];
          if (need_a) {
            auto da = grad_of(n.inputs[0]).data();
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += gs * b[i];
          }
          if (need_b) {
            auto db = grad_of(n.inputs[1]).data();
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += gs * a[i];
          }
          break;
        }
        Tensor<T>* da = need_a ? &grad_of(n.inputs[0]) : nullptr;
        Tensor<T>* db = need_b ? &grad_of(n.inputs[1]) : nullptr;
        const std::size_t width = a.cols();
        for (std::size_t p = 0; p < n.pairs.size(); ++p) {
          const T gp = g[p];
          if (gp == T{0}) continue;
          const auto [ia, ib] = n.pairs[p];
          const auto ar = a.row(ia);
          const auto br = b.row(ib);
          if (da) {
            auto dr = da->row(ia);
            for (std::size_t k = 0; k < width; ++k) dr[k] += gp * br[k];
          }
          if (db) {
            auto dr = db->row(ib);
            for (std::size_t k = 0; k < width; ++k) dr[k] += gp * ar[k];
          }
        }
        break;
      }

      case OpKind::log_loss: {
        const auto p = value(Var{n.inputs[0]}).data();
        auto dp = grad_of(n.inputs[0]).data();
        const T gs = g[0];
        const T lo = static_cast<T>(kProbClamp);
        const T hi = T{1} - lo;
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (p[i] < lo || p[i] > hi) continue;
          dp[i] += n.targets[i] ? -gs * n.weights[i] / p[i] : gs * n.weights[i] / (T{1} - p[i]);
        }
        break;
      }
    }
  }

  GradientSet<T> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.kind != OpKind::parameter) continue;
    auto it = out.find(n.name);
    if (it == out.end()) it = out.emplace(n.name, Tensor<T>(n.ref->shape())).first;
    if (i < count && has[i]) add_into<T>(it->second.data(), grads[i].data());
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> Tape<T>::replay() const {
  std::vector<Tensor<T>> values;
  values.reserve(nodes_.size());
  for (const auto& n : nodes_) {
    std::vector<const Tensor<T>*> in;
    in.reserve(n.inputs.size());
    for (auto id : n.inputs) in.push_back(&values[id]);
    values.push_back(evaluate(n, in));
  }
  return values;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace lesinr::numkit
