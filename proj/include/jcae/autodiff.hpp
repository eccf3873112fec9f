#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jcae/kernels.hpp"
#include "jcae/tensor.hpp"

namespace jcae {

template <class T>
class Tape;

/// Handle to a value recorded on a Tape.
template <class T>
struct Var {
  using value_type = T;

  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Records a forward computation so its gradient can be replayed in reverse.
///
/// Leaves are constants (no gradient), inputs (gradient readable via grad()),
/// or parameters (gradient added into the parameter tensor's grad buffer).
/// A tape is single-use: build, call backward() once, read gradients.
template <class T>
class Tape {
 public:
  /// Receives the node's forward value and the gradient flowing into it, and
  /// adds the contributions of its operands into their grad buffers.
  using Backward = std::function<void(Tape&, const Tensor<T>&, std::span<const T>)>;
  using value_type = T;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  Var<T> input(Tensor<T> value) {
    Node node;
    node.owned = std::move(value);
    node.requires_grad = true;
    return append(std::move(node));
  }

  /// Borrows `param`; it must outlive the tape. Gradients accumulate into
  /// param.grad(), which is enabled on demand.
  Var<T> parameter(Tensor<T>& param) {
    Node node;
    node.borrowed = &param;
    node.sink = &param;
    node.requires_grad = true;
    return append(std::move(node));
  }

  /// Borrowed leaf that never receives a gradient.
  Var<T> frozen(const Tensor<T>& param) {
    Node node;
    node.borrowed = &param;
    return append(std::move(node));
  }

  /// Records an op result; `backward` is kept only when requires_grad.
  Var<T> push(Tensor<T> value, bool requires_grad, Backward backward) {
    Node node;
    node.owned = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad) node.backward = std::move(backward);
    return append(std::move(node));
  }

  const Tensor<T>& value(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.borrowed ? *n.borrowed : n.owned;
  }

  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient buffer of a node; allocated zeroed on first access.
  std::span<T> grad_buffer(Var<T> v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad.assign(value(v).size(), T{0});
    return n.grad;
  }

  /// Gradient of the last backward() target with respect to `v`.
  std::span<const T> grad(Var<T> v) { return grad_buffer(v); }

  /// Seeds d(target)/d(target) = 1 and propagates back to every leaf.
  void backward(Var<T> target) {
    if (value(target).size() != 1) {
      throw ShapeError("backward target must be a scalar, got " + shape_str(value(target).shape()));
    }
    if (!requires_grad(target)) return;
    grad_buffer(target)[0] = T{1};
    for (std::size_t i = target.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) {
        // Gradient is moved out first: the callback may touch other nodes.
        std::vector<T> g = std::move(n.grad);
        n.backward(*this, n.owned, g);
        nodes_[i].grad = std::move(g);
      } else if (n.sink) {
        Tensor<T>& param = *n.sink;
        if (!param.has_grad()) param.enable_grad();
        auto pg = param.grad();
        for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T>* sink = nullptr;
    std::vector<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<T> append(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace ops {

namespace detail {

template <class T>
void same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape) throw Error(std::string(op) + ": operands recorded on different tapes");
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

template <class T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

/// 3x3 same-padding stride-1 convolution plus bias.
/// x: (N,C,H,W); kernel: (O,C,3,3); bias: (O). Result: (N,O,H,W).
template <class T>
Var<T> conv2d(Var<T> x, Var<T> kernel, Var<T> bias) {
  detail::same_tape(x, kernel, "conv2d");
  detail::same_tape(x, bias, "conv2d");
  Tape<T>& tape = *x.tape;
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  const Shape bs = bias.shape();
  if (xs.size() != 4 || ks.size() != 4 || bs.size() != 1 || ks[1] != xs[1] || ks[2] != 3 ||
      ks[3] != 3 || bs[0] != ks[0]) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " incompatible with kernel " +
                     shape_str(ks) + " and bias " + shape_str(bs));
  }
  if (xs[2] < 3 || xs[3] < 3) {
    throw ShapeError("conv2d: spatial extent must be at least 3x3, got " + shape_str(xs));
  }
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3], o = ks[0];
  const std::size_t plane = h * w, kdim = c * 9;

  Tensor<T> out(Shape{n, o, h, w});
  {
    std::vector<T> col(kdim * plane);
    for (std::size_t s = 0; s < n; ++s) {
      kernels::im2col3x3(x.value().raw() + s * c * plane, c, h, w, col.data());
      kernels::gemm(kernel.value().raw(), col.data(), out.raw() + s * o * plane, o, kdim, plane,
                    bias.value().raw());
    }
  }

  const bool rg = tape.requires_grad(x) || tape.requires_grad(kernel) || tape.requires_grad(bias);
  return tape.push(std::move(out), rg, [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
    if (t.requires_grad(bias)) {
      auto db = t.grad_buffer(bias);
      for (std::size_t oc = 0; oc < o; ++oc) {
        double acc = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          const T* gp = g.data() + (s * o + oc) * plane;
          for (std::size_t p = 0; p < plane; ++p) acc += static_cast<double>(gp[p]);
        }
        db[oc] += static_cast<T>(acc);
      }
    }
    if (t.requires_grad(kernel)) {
      auto dk = t.grad_buffer(kernel);
      std::vector<T> colt(plane * kdim);
      std::vector<T> partial(o * kdim);
      for (std::size_t s = 0; s < n; ++s) {
        kernels::im2col3x3_transposed(t.value(x).raw() + s * c * plane, c, h, w, colt.data());
        kernels::gemm(g.data() + s * o * plane, colt.data(), partial.data(), o, plane, kdim);
        detail::add_into<T>(dk, partial);
      }
    }
    if (t.requires_grad(x)) {
      auto dx = t.grad_buffer(x);
      const T* kv = t.value(kernel).raw();
      std::vector<T> kt(kdim * o);
      for (std::size_t oc = 0; oc < o; ++oc)
        for (std::size_t k = 0; k < kdim; ++k) kt[k * o + oc] = kv[oc * kdim + k];
      std::vector<T> dcol(kdim * plane);
      for (std::size_t s = 0; s < n; ++s) {
        kernels::gemm(kt.data(), g.data() + s * o * plane, dcol.data(), kdim, o, plane);
        kernels::col2im3x3_add(dcol.data(), c, h, w, dx.data() + s * c * plane);
      }
    }
  });
}

/// max(0, x); the subgradient at exactly 0 is 0.
template <class T>
Var<T> relu(Var<T> x) {
  Tape<T>& tape = *x.tape;
  Tensor<T> out(x.shape());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
  return tape.push(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
    auto dx = t.grad_buffer(x);
    const auto xv = t.value(x).data();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xv[i] > T{0}) dx[i] += g[i];
  });
}

/// Logistic function, evaluated in double precision.
template <class T>
Var<T> sigmoid(Var<T> x) {
  Tape<T>& tape = *x.tape;
  Tensor<T> out(x.shape());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = static_cast<double>(in[i]);
    out[i] = static_cast<T>(v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                     : std::exp(v) / (1.0 + std::exp(v)));
  }
  return tape.push(std::move(out), tape.requires_grad(x),
                   [=](Tape<T>& t, const Tensor<T>& y, std::span<const T> g) {
                     auto dx = t.grad_buffer(x);
                     for (std::size_t i = 0; i < dx.size(); ++i) {
                       const double yi = static_cast<double>(y[i]);
                       dx[i] += static_cast<T>(static_cast<double>(g[i]) * yi * (1.0 - yi));
                     }
                   });
}

/// Output of maxpool2: pooled values plus, per output element, the flat
/// index of the selected input element.
template <class T>
struct PoolResult {
  Var<T> out;
  std::shared_ptr<const std::vector<std::size_t>> argmax;
};

/// 2x2 stride-2 max pooling. Odd extents are replicate-padded by one
/// row/column; the padded copy never wins a tie against its original, so
/// argmax always points at a real input element. Ties resolve to the first
/// window position in row-major order.
template <class T>
PoolResult<T> maxpool2(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const Shape xs = x.shape();
  require_rank(xs, 4, "maxpool2");
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  if (h == 0 || w == 0) throw ShapeError("maxpool2: empty input " + shape_str(xs));
  const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor<T> out(Shape{n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* in = x.value().raw();
  std::size_t oi = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      const std::size_t y0 = 2 * y, y1 = std::min(2 * y + 1, h - 1);
      for (std::size_t xx = 0; xx < ow; ++xx, ++oi) {
        const std::size_t x0 = 2 * xx, x1 = std::min(2 * xx + 1, w - 1);
        const std::size_t cand[4] = {base + y0 * w + x0, base + y0 * w + x1, base + y1 * w + x0,
                                     base + y1 * w + x1};
        std::size_t best = cand[0];
        for (std::size_t k = 1; k < 4; ++k)
          if (in[cand[k]] > in[best]) best = cand[k];
        out[oi] = in[best];
        (*argmax)[oi] = best;
      }
    }
  }
  std::shared_ptr<const std::vector<std::size_t>> routes = argmax;
  Var<T> pooled = tape.push(std::move(out), tape.requires_grad(x),
                            [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
                              auto dx = t.grad_buffer(x);
                              for (std::size_t i = 0; i < g.size(); ++i) dx[(*routes)[i]] += g[i];
                            });
  return {pooled, routes};
}

/// Nearest-neighbour 2x upsampling to (out_h, out_w); each extent must be
/// 2*in or 2*in - 1 (the latter crops the replicated last row/column).
template <class T>
Var<T> upsample_nearest2(Var<T> x, std::size_t out_h, std::size_t out_w) {
  Tape<T>& tape = *x.tape;
  const Shape xs = x.shape();
  require_rank(xs, 4, "upsample_nearest2");
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const auto valid = [](std::size_t in, std::size_t o) { return o == 2 * in || (in > 0 && o == 2 * in - 1); };
  if (!valid(h, out_h) || !valid(w, out_w)) {
    throw ShapeError("upsample_nearest2: cannot map " + shape_str(xs) + " to " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  Tensor<T> out(Shape{n, c, out_h, out_w});
  const T* in = x.value().raw();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t xx = 0; xx < out_w; ++xx)
        out[(plane * out_h + y) * out_w + xx] = in[(plane * h + y / 2) * w + xx / 2];
  }
  return tape.push(std::move(out), tape.requires_grad(x),
                   [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
                     auto dx = t.grad_buffer(x);
                     for (std::size_t plane = 0; plane < n * c; ++plane) {
                       for (std::size_t y = 0; y < h; ++y) {
                         for (std::size_t xx = 0; xx < w; ++xx) {
                           double acc = 0.0;
                           for (std::size_t dy = 0; dy < 2; ++dy) {
                             const std::size_t oy = 2 * y + dy;
                             if (oy >= out_h) continue;
                             for (std::size_t dx2 = 0; dx2 < 2; ++dx2) {
                               const std::size_t ox = 2 * xx + dx2;
                               if (ox >= out_w) continue;
                               acc += static_cast<double>(g[(plane * out_h + oy) * out_w + ox]);
                             }
                           }
                           dx[(plane * h + y) * w + xx] += static_cast<T>(acc);
                         }
                       }
                     }
                   });
}

template <class T>
Var<T> upsample_nearest2(Var<T> x) {
  return upsample_nearest2(x, 2 * x.shape().at(2), 2 * x.shape().at(3));
}

/// Concatenates two (N,C,H,W) tensors along the channel axis.
template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "concat_channels");
  Tape<T>& tape = *a.tape;
  const Shape as = a.shape(), bs = b.shape();
  if (as.size() != 4 || bs.size() != 4 || as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
    throw ShapeError("concat_channels: incompatible " + shape_str(as) + " and " + shape_str(bs));
  }
  const std::size_t n = as[0], plane = as[2] * as[3];
  const std::size_t ca = as[1] * plane, cb = bs[1] * plane;
  Tensor<T> out(Shape{n, as[1] + bs[1], as[2], as[3]});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(a.value().raw() + s * ca, ca, out.raw() + s * (ca + cb));
    std::copy_n(b.value().raw() + s * cb, cb, out.raw() + s * (ca + cb) + ca);
  }
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), rg, [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
    for (std::size_t s = 0; s < n; ++s) {
      if (t.requires_grad(a)) detail::add_into<T>(t.grad_buffer(a).subspan(s * ca, ca), g.subspan(s * (ca + cb), ca));
      if (t.requires_grad(b)) detail::add_into<T>(t.grad_buffer(b).subspan(s * cb, cb), g.subspan(s * (ca + cb) + ca, cb));
    }
  });
}

/// Repeats a single-channel (N,1,H,W) tensor into `channels` identical channels.
template <class T>
Var<T> replicate_channels(Var<T> x, std::size_t channels) {
  Tape<T>& tape = *x.tape;
  const Shape xs = x.shape();
  if (xs.size() != 4 || xs[1] != 1) {
    throw ShapeError("replicate_channels: expected (N,1,H,W), got " + shape_str(xs));
  }
  const std::size_t n = xs[0], plane = xs[2] * xs[3];
  Tensor<T> out(Shape{n, channels, xs[2], xs[3]});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(x.value().raw() + s * plane, plane, out.raw() + (s * channels + c) * plane);
  return tape.push(std::move(out), tape.requires_grad(x),
                   [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
                     auto dx = t.grad_buffer(x);
                     for (std::size_t s = 0; s < n; ++s) {
                       for (std::size_t p = 0; p < plane; ++p) {
                         double acc = 0.0;
                         for (std::size_t c = 0; c < channels; ++c)
                           acc += static_cast<double>(g[(s * channels + c) * plane + p]);
                         dx[s * plane + p] += static_cast<T>(acc);
                       }
                     }
                   });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "add");
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tape<T>& tape = *a.tape;
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), rg, [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
    if (t.requires_grad(a)) detail::add_into<T>(t.grad_buffer(a), g);
    if (t.requires_grad(b)) detail::add_into<T>(t.grad_buffer(b), g);
  });
}

template <class T>
Var<T> scale(Var<T> a, double factor) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(factor * static_cast<double>(a.value()[i]));
  return tape.push(std::move(out), tape.requires_grad(a),
                   [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
                     auto da = t.grad_buffer(a);
                     for (std::size_t i = 0; i < da.size(); ++i)
                       da[i] += static_cast<T>(factor * static_cast<double>(g[i]));
                   });
}

/// Sum of all elements, as a scalar of shape (1).
template <class T>
Var<T> sum(Var<T> a) {
  Tape<T>& tape = *a.tape;
  double acc = 0.0;
  for (T v : a.value().data()) acc += static_cast<double>(v);
  return tape.push(Tensor<T>(Shape{1}, static_cast<T>(acc)), tape.requires_grad(a),
                   [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
                     for (T& d : t.grad_buffer(a)) d += g[0];
                   });
}

/// Inner product with a fixed weight tensor; a scalar probe for gradient checks.
template <class T>
Var<T> dot(Var<T> a, const Tensor<T>& weights) {
  detail::require_same_shape(a.shape(), weights.shape(), "dot");
  Tape<T>& tape = *a.tape;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    acc += static_cast<double>(a.value()[i]) * static_cast<double>(weights[i]);
  return tape.push(Tensor<T>(Shape{1}, static_cast<T>(acc)), tape.requires_grad(a),
                   [=](Tape<T>& t, const Tensor<T>&, std::span<const T> g) {
                     auto da = t.grad_buffer(a);
                     for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[0] * weights[i];
                   });
}

}  // namespace ops
}  // namespace jcae
