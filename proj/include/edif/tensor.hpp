#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "edif/random.hpp"

// Dense 2-D tensors with a dynamic reverse-mode tape. Scalars are 1x1.
namespace edif::tensor {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::vector<std::size_t> shape() const { return {rows(), cols()}; }
  std::string shape_str() const;

  std::span<double> values() { return node_->value; }
  std::span<const double> values() const { return node_->value; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return node_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad() { return node_->grad; }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(std::size_t, std::size_t, std::vector<double>,
                            std::initializer_list<const Tensor*>, std::function<void(Node&)>);

  std::shared_ptr<Node> node_;
};

/// Keeps freed buffers in the process heap instead of returning them to the
/// OS. No-op off glibc.
void retain_freed_memory();

/// While alive, ops on this thread skip recording backward rules.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Elementwise sum; `b` may also be a single row broadcast over the rows of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Rows of `table` selected by `ids`.
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// Row-wise normalization followed by gain and bias (both 1 x cols).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor softmax_rows(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& a, double p, Rng& rng);
/// Mean over rows with mask[r] != 0 of -log softmax(logits[r])[target[r]].
/// With no selected rows the result is a constant 0.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const unsigned char> mask);

/// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable grad buffer.
void backward(const Tensor& loss);

/// Largest relative error between the tape gradient and central differences
/// of `f` over every coordinate of `params`.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps = 1e-5,
                  double floor = 1e-8);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update over `params`, then zeroes their grads.
void adam_step(AdamState& state, std::span<Tensor> params);

}  // namespace edif::tensor
