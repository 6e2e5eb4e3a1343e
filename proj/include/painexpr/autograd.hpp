#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace painexpr::ag {

/// Dense row-major double tensor.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape_, double fill = 0.0);
  Tensor(std::vector<int> shape_, std::vector<double> data_);

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int axis) const { return shape[static_cast<std::size_t>(axis < 0 ? axis + rank() : axis)]; }
  std::size_t size() const { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

std::size_t shape_size(const std::vector<int>& shape);

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
  const std::vector<int>& shape() const { return value().shape; }
};

/// Reverse-mode tape. Nodes are appended in topological order, so backward
/// is a single reverse sweep.
class Graph {
 public:
  using Backward = std::function<void(Graph&, int)>;

  Var constant(Tensor value);
  Var leaf(Tensor value);

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  /// Gradient of the last backward() target w.r.t. v (zeros when v is unreachable).
  std::vector<double> grad(Var v) const;

  void backward(Var scalar);

  // Used by op implementations.
  Var record(Tensor value, std::vector<int> inputs, Backward fn);
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  const std::vector<double>& out_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::vector<double>& grad_ref(int id);
  const Tensor& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Ops. Shapes use N for the flattened batch axis.

/// x [..., in] . w[out, in]^T + b[out]; pass an invalid b for no bias.
Var linear(Var x, Var w, Var b);
/// x [N, Cin, D], w [Cout, Cin, K], b [Cout]; zero padding.
Var conv1d(Var x, Var w, Var b, int stride, int pad);
/// x [N, C, D]; statistics per (n, group) over C/groups channels and D.
Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5);
Var silu(Var x);
Var add(Var a, Var b);
/// x [N, C, D] * (1 + scale) + shift with ss [N, 2C] = (scale | shift).
Var modulate(Var x, Var ss);
/// Multi-head softmax attention: q [G, Lq, F], k and v [G, Lk, F].
Var attention(Var q, Var k, Var v, int heads);
Var permute(Var x, const std::vector<int>& perm);
Var reshape(Var x, std::vector<int> shape);
/// Concatenates [N, Ca, D] and [N, Cb, D] along the channel axis.
Var concat_channels(Var a, Var b);
/// Keeps the first len entries of the last axis.
Var crop_last(Var x, int len);
/// Nearest-neighbour upsampling by 2 along the last axis.
Var upsample2_last(Var x);
/// out[n, p] = mask[n, p] ? fill[p] : values[n, p] with values [N, P].
Var replace_masked(const Tensor& values, const std::vector<std::uint8_t>& mask, Var fill);
/// Elementwise product with a constant tensor of the same shape.
Var scale_const(Var x, const Tensor& factors);
/// sum(weights * (pred - target)^2) / sum(weights); scalar.
Var weighted_mse(Var pred, const Tensor& target, const std::vector<double>& weights);
/// sum(x * r); scalar.
Var dot_const(Var x, const Tensor& r);

}  // namespace painexpr::ag
