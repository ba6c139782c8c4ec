#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

namespace metoken::diff {

using Shape = std::vector<size_t>;

// Dense float64 array, row-major, rank <= 2 for all recorded operations.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  static Tensor scalar(double v);
  static Tensor from(Shape s, std::vector<double> d);

  size_t numel() const;
  size_t rank() const { return shape.size(); }
  // rank-normalized views: scalar -> (1,1), vector [n] -> (1,n)
  size_t rows() const;
  size_t cols() const;
  double& at(size_t r, size_t c) { return data[r * cols() + c]; }
  double at(size_t r, size_t c) const { return data[r * cols() + c]; }
  double item() const;
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

std::string shape_str(const Shape& s);

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily by add_grad
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

  void add_grad(const Tensor& g);
  void zero_grad();
};

// Leaves live outside any tape; parameters survive across steps.
Var make_leaf(Tensor v, bool requires_grad = true);
Var make_const(Tensor v);

// Records ops in execution order; backward replays them exactly reversed,
// accumulating gradients additively. One tape per training step.
class Tape {
 public:
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double c);
  Var relu(Var a);
  Var log(Var a);
  Var exp(Var a);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var softmax(Var a);      // per row, max-subtracted
  Var log_softmax(Var a);  // per row
  Var layer_norm(Var a);   // per row, eps 1e-5, no affine
  Var l2_normalize(Var a); // per row; throws NumericalError on zero row
  Var mse(Var a, Var b);   // scalar, mean over all elements
  Var sum(Var a);          // scalar
  Var row_sum(Var a);      // (m, 1)
  Var mean(Var a);         // scalar
  Var gather_rows(Var a, std::vector<int> idx);
  Var gather_cols(Var a, std::vector<int> idx);  // one element per row -> [n]
  Var segment_sum(Var a, std::vector<int> seg, size_t n_segs);
  Var concat_cols(std::vector<Var> xs);
  Var sg(Var a);  // stop-gradient: identity forward, no backward flow

  // Propagates d(loss)/d(node) to every reachable requires_grad node.
  // Loss must be scalar. Calling twice without zeroing accumulates.
  void backward(Var loss);

  void clear();
  size_t size() const { return order_.size(); }

 private:
  Var record(Tensor out, std::vector<Var> parents, std::function<void(Node&)> fn,
             bool force_no_grad = false);
  std::vector<Var> order_;
};

// Adam with bias correction. Moment buffers are kept per parameter slot;
// the params vector must keep a stable order across steps.
struct OptimState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<std::pair<Tensor, Tensor>> moments;  // (m, v) per param
};

void adam_step(std::vector<Var>& params, OptimState& state);
void zero_grads(std::vector<Var>& params);

}  // namespace metoken::diff
