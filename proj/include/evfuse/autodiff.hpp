#pragma once

// Minimal tensor-level reverse-mode autodiff. A Graph records operations as
// they execute; backward() walks the tape in reverse, accumulating into node
// gradients and, for parameter leaves, into Parameter::grad.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evfuse/tensor.hpp"

namespace evfuse {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool grad_ready = false;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() {
    grad.fill(0.0);
    grad_ready = false;
  }
};

struct Var {
  std::size_t id;
};

class Graph {
 public:
  Var input(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::size_t size() const { return nodes_.size(); }

  /// 2-D convolution on a C x H x W tensor. weight: Cout x Cin x K x K (K odd),
  /// bias: Cout. Zero padding keeps H x W for any dilation.
  Var conv2d(Var x, Var weight, Var bias, std::size_t dilation = 1);
  Var relu(Var x);
  /// exp(tanh(x)), bounded in (1/e, e).
  Var exp_tanh(Var x);
  /// weight (M x K) times x (K): vector of length M.
  Var linear(Var weight, Var x);
  /// Sum of squared entries, a scalar.
  Var sum_squares(Var x);

  /// Reverse pass from a scalar root (seed 1).
  void backward(Var root);
  /// Reverse pass seeded with explicit upstream gradients on several outputs.
  void backward(std::span<const Var> outputs, std::span<const Tensor> seeds);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    std::function<void(Graph&, std::size_t)> backward;
  };

  Var push(Tensor value, std::function<void(Graph&, std::size_t)> backward = {});
  Tensor& grad_mut(Var v) { return nodes_[v.id].grad; }
  void run_backward(std::size_t last);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// exp(tanh(x)) and its derivative, shared by the graph op and tests.
double exp_tanh(double x);
double exp_tanh_derivative(double x);

}  // namespace evfuse
