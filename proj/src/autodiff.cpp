#include "evfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "evfuse/errors.hpp"

namespace evfuse {

double exp_tanh(double x) { return std::exp(std::tanh(x)); }

double exp_tanh_derivative(double x) {
  // sech^2 via cosh: 1 - tanh^2 rounds to 0 for |x| > ~19, cosh does not.
  const double c = std::cosh(x);
  return std::exp(std::tanh(x)) / (c * c);
}

Var Graph::push(Tensor value, std::function<void(Graph&, std::size_t)> backward) {
  if (consumed_) throw GraphError("graph already ran backward; record a new forward pass");
  Node node;
  node.grad = Tensor(value.shape());
  node.value = std::move(value);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Graph::input(Tensor value) { return push(std::move(value)); }

Var Graph::param(Parameter& p) {
  Var v = push(p.value);
  nodes_.back().param = &p;
  return v;
}

namespace {

struct ConvGeometry {
  std::size_t cin, cout, h, w, k;
  long half, dil;

  // Calls body(y_out, y_in, x_begin, x_end, dx) for each output row touched
  // by kernel tap (ky, kx); x_in = x_out + dx.
  template <class Body>
  void for_tap(long ky, long kx, Body&& body) const {
    const long hh = static_cast<long>(h), ww = static_cast<long>(w);
    const long dy = (ky - half) * dil, dx = (kx - half) * dil;
    const long y0 = std::max(0L, -dy), y1 = std::min(hh, hh - dy);
    const long x0 = std::max(0L, -dx), x1 = std::min(ww, ww - dx);
    for (long y = y0; y < y1; ++y) body(y, y + dy, x0, x1, dx);
  }
};

}  // namespace

Var Graph::conv2d(Var x, Var weight, Var bias, std::size_t dilation) {
  const Tensor& in = value(x);
  const Tensor& w = value(weight);
  const Tensor& b = value(bias);
  if (in.rank() != 3) throw ShapeError("conv2d expects a C x H x W input");
  if (w.rank() != 4 || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
    throw ShapeError("conv2d weight must be Cout x Cin x K x K with odd K");
  if (w.dim(1) != in.dim(0)) throw ShapeError("conv2d input channels do not match weight");
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) throw ShapeError("conv2d bias must have Cout entries");
  if (dilation == 0) throw ShapeError("conv2d dilation must be >= 1");

  const ConvGeometry geo{in.dim(0), w.dim(0), in.dim(1), in.dim(2), w.dim(2),
                         static_cast<long>(w.dim(2) / 2), static_cast<long>(dilation)};
  const std::size_t plane = geo.h * geo.w;
  const long k = static_cast<long>(geo.k);
  const long ww = static_cast<long>(geo.w);

  Tensor out({geo.cout, geo.h, geo.w});
  for (std::size_t co = 0; co < geo.cout; ++co) {
    double* o = out.data() + co * plane;
    std::fill(o, o + plane, b[co]);
    for (std::size_t ci = 0; ci < geo.cin; ++ci) {
      const double* src = in.data() + ci * plane;
      const double* taps = w.data() + (co * geo.cin + ci) * geo.k * geo.k;
      for (long ky = 0; ky < k; ++ky)
        for (long kx = 0; kx < k; ++kx) {
          const double coef = taps[ky * k + kx];
          geo.for_tap(ky, kx, [&](long y, long sy, long xa, long xb, long dx) {
            double* orow = o + y * ww;
            const double* srow = src + sy * ww + dx;
            for (long xx = xa; xx < xb; ++xx) orow[xx] += coef * srow[xx];
          });
        }
    }
  }

  return push(std::move(out), [=](Graph& g, std::size_t self) {
    const Tensor& gout = g.nodes_[self].grad;
    const Tensor& in_v = g.nodes_[x.id].value;
    const Tensor& w_v = g.nodes_[weight.id].value;
    Tensor& gin = g.nodes_[x.id].grad;
    Tensor& gw = g.nodes_[weight.id].grad;
    Tensor& gb = g.nodes_[bias.id].grad;
    for (std::size_t co = 0; co < geo.cout; ++co) {
      const double* go = gout.data() + co * plane;
      double bsum = 0.0;
      for (std::size_t i = 0; i < plane; ++i) bsum += go[i];
      gb[co] += bsum;
      for (std::size_t ci = 0; ci < geo.cin; ++ci) {
        const double* src = in_v.data() + ci * plane;
        double* gsrc = gin.data() + ci * plane;
        const std::size_t tap0 = (co * geo.cin + ci) * geo.k * geo.k;
        for (long ky = 0; ky < k; ++ky)
          for (long kx = 0; kx < k; ++kx) {
            const double coef = w_v[tap0 + ky * k + kx];
            double acc = 0.0;
            geo.for_tap(ky, kx, [&](long y, long sy, long xa, long xb, long dx) {
              const double* grow = go + y * ww;
              const double* srow = src + sy * ww + dx;
              double* gsrow = gsrc + sy * ww + dx;
              for (long xx = xa; xx < xb; ++xx) {
                acc += grow[xx] * srow[xx];
                gsrow[xx] += coef * grow[xx];
              }
            });
            gw[tap0 + ky * k + kx] += acc;
          }
      }
    }
  });
}

Var Graph::relu(Var x) {
  Tensor out = value(x);
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), [x](Graph& g, std::size_t self) {
    const Tensor& in = g.nodes_[x.id].value;
    const Tensor& gout = g.nodes_[self].grad;
    Tensor& gin = g.nodes_[x.id].grad;
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] > 0.0) gin[i] += gout[i];
  });
}

Var Graph::exp_tanh(Var x) {
  Tensor out = value(x);
  for (auto& v : out.values()) v = evfuse::exp_tanh(v);
  return push(std::move(out), [x](Graph& g, std::size_t self) {
    const Tensor& in = g.nodes_[x.id].value;
    const Tensor& gout = g.nodes_[self].grad;
    Tensor& gin = g.nodes_[x.id].grad;
    for (std::size_t i = 0; i < in.size(); ++i) gin[i] += gout[i] * exp_tanh_derivative(in[i]);
  });
}

Var Graph::linear(Var weight, Var x) {
  const Tensor& w = value(weight);
  const Tensor& in = value(x);
  if (w.rank() != 2 || in.rank() != 1 || w.dim(1) != in.dim(0))
    throw ShapeError("linear expects an M x K weight and a length-K vector");
  const std::size_t m = w.dim(0), kk = w.dim(1);
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < kk; ++j) acc += w[i * kk + j] * in[j];
    out[i] = acc;
  }
  return push(std::move(out), [=](Graph& g, std::size_t self) {
    const Tensor& gout = g.nodes_[self].grad;
    const Tensor& w_v = g.nodes_[weight.id].value;
    const Tensor& in_v = g.nodes_[x.id].value;
    Tensor& gw = g.nodes_[weight.id].grad;
    Tensor& gin = g.nodes_[x.id].grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < kk; ++j) {
        gw[i * kk + j] += gout[i] * in_v[j];
        gin[j] += gout[i] * w_v[i * kk + j];
      }
  });
}

Var Graph::sum_squares(Var x) {
  double acc = 0.0;
  for (double v : value(x).values()) acc += v * v;
  return push(Tensor({1}, acc), [x](Graph& g, std::size_t self) {
    const double seed = g.nodes_[self].grad[0];
    const Tensor& in = g.nodes_[x.id].value;
    Tensor& gin = g.nodes_[x.id].grad;
    for (std::size_t i = 0; i < in.size(); ++i) gin[i] += 2.0 * in[i] * seed;
  });
}

void Graph::backward(Var root) {
  if (root.id >= nodes_.size()) throw GraphError("unknown root node");
  if (value(root).size() != 1) throw GraphError("backward(root) needs a scalar root");
  Tensor seed(value(root).shape(), 1.0);
  backward(std::span<const Var>(&root, 1), std::span<const Tensor>(&seed, 1));
}

void Graph::backward(std::span<const Var> outputs, std::span<const Tensor> seeds) {
  if (nodes_.empty()) throw GraphError("no forward pass recorded");
  if (consumed_) throw GraphError("backward already ran on this graph");
  if (outputs.size() != seeds.size() || outputs.empty())
    throw GraphError("need one seed gradient per output");
  std::size_t last = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].id >= nodes_.size()) throw GraphError("unknown output node");
    Tensor& g = grad_mut(outputs[i]);
    if (!g.same_shape(seeds[i])) throw ShapeError("seed gradient shape mismatch");
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += seeds[i][j];
    last = std::max(last, outputs[i].id);
  }
  run_backward(last);
  consumed_ = true;
}

void Graph::run_backward(std::size_t last) {
  for (std::size_t id = last + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.backward) node.backward(*this, id);
    if (node.param != nullptr) {
      Tensor& pg = node.param->grad;
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += node.grad[i];
      node.param->grad_ready = true;
    }
  }
}

}  // namespace evfuse
