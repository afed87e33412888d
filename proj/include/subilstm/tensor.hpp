#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "subilstm/rng.hpp"

namespace subi {

using Shape = std::vector<std::int64_t>;

class Tape;
class Gradients;

// Fixed-size f64 array allocated uninitialized; tensor values are written
// exactly once by the producing operation.
class Buffer {
 public:
  explicit Buffer(std::int64_t n) : n_(n), data_(new double[static_cast<std::size_t>(n)]) {}
  explicit Buffer(const std::vector<double>& v) : Buffer(static_cast<std::int64_t>(v.size())) {
    std::copy(v.begin(), v.end(), data_.get());
  }
  Buffer(const Buffer& o) : Buffer(o.n_) { std::copy(o.begin(), o.end(), data_.get()); }
  Buffer& operator=(const Buffer&) = delete;

  std::int64_t size() const { return n_; }
  double* data() { return data_.get(); }
  const double* data() const { return data_.get(); }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  double* begin() { return data_.get(); }
  double* end() { return data_.get() + n_; }
  const double* begin() const { return data_.get(); }
  const double* end() const { return data_.get() + n_; }

 private:
  std::int64_t n_;
  std::unique_ptr<double[]> data_;
};

using BufPtr = std::shared_ptr<Buffer>;

// Immutable dense f64 array. Copies share storage and no operation ever
// mutates an input's values. A tensor participates in gradient recording
// iff tape != nullptr, in which case `node` is its handle on that tape.
struct Tensor {
  Shape shape;
  std::shared_ptr<const Buffer> values;
  Tape* tape = nullptr;
  int node = -1;

  std::int64_t size() const { return values ? values->size() : 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  const double* data() const { return values->data(); }

  double at(std::int64_t i) const { return (*values)[static_cast<std::size_t>(i)]; }
  double at(std::int64_t r, std::int64_t c) const {
    return (*values)[static_cast<std::size_t>(r * shape.at(1) + c)];
  }
  // Value of a single-element tensor.
  double scalar() const;

  bool on_tape() const { return tape != nullptr; }
  void detach() {
    tape = nullptr;
    node = -1;
  }
};

Tensor make_tensor(Shape shape, std::vector<double> data);
Tensor zeros(Shape shape);
Tensor ones(Shape shape);
Tensor full(Shape shape, double v);
Tensor scalar_tensor(double v);
Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng);

bool all_finite(const Tensor& t);
bool same_values(const Tensor& a, const Tensor& b);  // shape + bitwise data
double max_abs_diff(const Tensor& a, const Tensor& b);

// Parameter initialization. kUniformFanIn draws from +-1/sqrt(fan_in) with
// fan_in = shape[0]; it is an error if fan_in is zero.
enum class InitScheme { kUniformFanIn, kZeros, kOnes };
Tensor init_params(const Shape& shape, InitScheme scheme, Rng& rng);

// Per-node gradient accumulators produced by backward().
class Gradients {
 public:
  explicit Gradients(std::size_t num_nodes) : slots_(num_nodes) {}

  std::vector<double>& accum(int node, std::int64_t size);
  const std::vector<double>* find(int node) const;

  // d(loss)/d(t). Zero tensor if no gradient flowed to t; throws if t was
  // never recorded on the tape.
  Tensor grad_of(const Tensor& t) const;

 private:
  std::vector<std::unique_ptr<std::vector<double>>> slots_;
};

// Wengert list. Nodes are appended in evaluation order, so ids are already
// topologically sorted; the backward sweep visits each node exactly once in
// reverse id order. Recording is single-threaded.
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>& dout, Gradients&)>;

  // Registers a leaf (parameter/input). Idempotent for tensors already on
  // this tape.
  int watch(Tensor& t);

  // Used by operations: appends a node and returns its id.
  int record(std::int64_t out_size, BackwardFn fn);

  std::size_t size() const { return nodes_.size(); }
  bool has_backward(int id) const { return nodes_[static_cast<std::size_t>(id)].backward != nullptr; }
  void run_backward(int id, const std::vector<double>& dout, Gradients& g) const {
    nodes_[static_cast<std::size_t>(id)].backward(dout, g);
  }

 private:
  struct Node {
    BackwardFn backward;  // null for leaves
    std::int64_t out_size = 0;
  };
  std::vector<Node> nodes_;
};

// Reverse-mode sweep from a scalar loss recorded on `tape`.
Gradients backward(const Tape& tape, const Tensor& loss);

// ---- primitive operations ----------------------------------------------
// All primitives are pure: they allocate fresh output storage and record a
// node when any input lives on a tape.

Tensor add(const Tensor& a, const Tensor& b);  // same shape, or b a rank-1 row bias
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// (m x k) * (k x n)
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sigmoid_t(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor relu_t(const Tensor& a);
Tensor abs_t(const Tensor& a);

// Elementwise max; on exact ties the gradient goes to the first argument.
Tensor cmax(const Tensor& a, const Tensor& b);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_vec(std::span<const Tensor> parts);   // rank-1 pieces
Tensor stack_rows(std::span<const Tensor> parts);   // rank-1 pieces as rows of a matrix

Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t nrows);
Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t ncols);

Tensor gather_rows(const Tensor& a, std::vector<std::int64_t> idx);

// Columnwise max over rows [r0, r0+nrows); ties resolve to the earliest row.
Tensor row_max_pool(const Tensor& a, std::int64_t r0, std::int64_t nrows);

Tensor sum_all(const Tensor& a);

// Mean softmax cross-entropy over rows of logits (B x C).
Tensor softmax_xent_mean(const Tensor& logits, std::span<const std::int64_t> labels);

// Row argmax of a (B x C) tensor; plain values, no gradient.
std::vector<std::int64_t> argmax_rows(const Tensor& logits);

// Inverted-scaling dropout. Identity when training is false or p == 0.
Tensor apply_dropout(const Tensor& x, double p, Rng& rng, bool training);

}  // namespace subi
