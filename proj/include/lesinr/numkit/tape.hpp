#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lesinr/numkit/tensor.hpp"

namespace lesinr::numkit {

// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
};

enum class OpKind : std::uint8_t {
  constant,
  parameter,
  affine,
  relu,
  sigmoid,
  dot,
  sum,
  scale,
  add,
  log_loss,
};

const char* op_name(OpKind kind);

// Gradients keyed by parameter name. Parameters that were registered on the
// tape but did not influence the loss receive an all-zero entry.
template <typename T>
using GradientSet = std::map<std::string, Tensor<T>>;

// A dynamically recorded computation. Ops execute eagerly and append a node;
// backward() walks the nodes in reverse. Single-threaded.
//
// Parameter nodes reference caller-owned tensors, which must outlive the
// tape and must not change while it is in use.
template <typename T>
class Tape {
 public:
  Var constant(Tensor<T> value);
  Var parameter(const std::string& name, const Tensor<T>& value);

  // x: [rows, in] or [in]; weight: [in, out]; bias: [out]. Output keeps the
  // rank of x. The bias row is the only broadcast the kernel performs.
  Var affine(Var x, Var weight, Var bias);
  Var affine(Var x, Var weight);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var add(Var a, Var b);
  Var scale(Var x, T factor);
  Var sum(Var x);
  // out[p] = a.row(pairs[p].first) . b.row(pairs[p].second); shape [P].
  Var dot(Var a, Var b, std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs);
  // Same-shape vectors to a scalar.
  Var dot(Var a, Var b);
  // -sum_i weight_i * log(target_i ? p_i : 1 - p_i) with p clamped to
  // [kProbClamp, 1 - kProbClamp]. Clamped entries carry no gradient.
  Var log_loss(Var probs, std::vector<std::uint8_t> targets, std::vector<T> weights);

  static constexpr double kProbClamp = 1e-7;

  const Tensor<T>& value(Var v) const;
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const { return nodes_.size(); }

  // d(loss)/d(parameter) for every parameter registered on this tape.
  GradientSet<T> backward(Var loss) const;

  // Re-executes every recorded op from the leaf values, returning the value
  // of each node in recording order.
  std::vector<Tensor<T>> replay() const;

 private:
  struct Node {
    OpKind kind = OpKind::constant;
    std::vector<std::uint32_t> inputs;
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    std::string name;
    T factor{};
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    std::vector<std::uint8_t> targets;
    std::vector<T> weights;
    bool scalar_dot = false;
  };

  static Node make_node(OpKind kind, std::vector<std::uint32_t> inputs) {
    Node n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    return n;
  }
  Var push(Node node);
  const Node& node(Var v) const;
  Tensor<T> evaluate(const Node& n, const std::vector<const Tensor<T>*>& in) const;

  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace lesinr::numkit
