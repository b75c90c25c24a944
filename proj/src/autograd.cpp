#include "ckd/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "ckd/error.hpp"

namespace ckd::nn {
namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

bool needs_graph(const std::vector<Var>& inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Var& v) { return v && v->requires_grad; });
}

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (needs_graph(inputs)) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(fn);
  }
  return node;
}

bool wants(const Var& v) { return v && v->requires_grad; }

void require(bool ok, ErrorKind kind, const std::string& message) {
  if (!ok) throw Error(kind, message);
}

struct Window {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

Window resolve_window(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  Window w;
  if (padding == Padding::Same) {
    w.out = (in + stride - 1) / stride;
    const std::size_t needed = (w.out - 1) * stride + kernel;
    w.pad_before = needed > in ? (needed - in) / 2 : 0;
  } else {
    require(in >= kernel, ErrorKind::ShapeMismatch,
            "valid window " + std::to_string(kernel) + " larger than input " + std::to_string(in));
    w.out = (in - kernel) / stride + 1;
  }
  return w;
}

template <typename Fn, typename Deriv>
Var unary(const Var& x, Fn fn, Deriv deriv) {
  Tensor out(x->value.shape());
  const double* in = x->value.ptr();
  double* o = out.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = fn(in[i]);
  return make_node(std::move(out), {x}, [x, deriv](Node& self) {
    Tensor& gx = x->grad_buffer();
    const double* in = x->value.ptr();
    const double* out = self.value.ptr();
    const double* g = self.grad.ptr();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * deriv(in[i], out[i]);
  });
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

Var leaf(Tensor value) {
  auto node = constant(std::move(value));
  node->requires_grad = true;
  return node;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
  require(root->value.size() == 1, ErrorKind::ShapeMismatch, "backward needs a scalar root");
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, bool>> stack{{root.get(), false}};
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (!visited.insert(node).second) continue;
    stack.push_back({node, true});
    for (const auto& in : node->inputs) {
      if (in->requires_grad && !visited.count(in.get())) stack.push_back({in.get(), false});
    }
  }
  root->grad_buffer().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.shape() == node->value.shape()) {
      node->backward_fn(*node);
    }
  }
}

Var dense(const Var& x, const Var& w, const Var& b) {
  const Shape& xs = x->value.shape();
  require(w->value.rank() == 2 && !xs.empty() && xs.back() == w->value.dim(0),
          ErrorKind::ShapeMismatch,
          "dense input " + shape_string(xs) + " vs weight " + shape_string(w->value.shape()));
  const std::size_t in_dim = w->value.dim(0);
  const std::size_t out_dim = w->value.dim(1);
  const std::size_t rows = x->value.size() / in_dim;
  if (b) {
    require(b->value.size() == out_dim, ErrorKind::ShapeMismatch, "dense bias width");
  }
  Shape out_shape = xs;
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  {
    ConstMatrixMap xm(x->value.ptr(), rows, in_dim);
    ConstMatrixMap wm(w->value.ptr(), in_dim, out_dim);
    MatrixMap om(out.ptr(), rows, out_dim);
    om.noalias() = xm * wm;
    if (b) {
      Eigen::Map<const Eigen::RowVectorXd> bv(b->value.ptr(), out_dim);
      om.rowwise() += bv;
    }
  }
  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(b);
  return make_node(std::move(out), inputs, [x, w, b, rows, in_dim, out_dim](Node& self) {
    ConstMatrixMap g(self.grad.ptr(), rows, out_dim);
    if (wants(x)) {
      MatrixMap gx(x->grad_buffer().ptr(), rows, in_dim);
      ConstMatrixMap wm(w->value.ptr(), in_dim, out_dim);
      gx.noalias() += g * wm.transpose();
    }
    if (wants(w)) {
      MatrixMap gw(w->grad_buffer().ptr(), in_dim, out_dim);
      ConstMatrixMap xm(x->value.ptr(), rows, in_dim);
      gw.noalias() += xm.transpose() * g;
    }
    if (wants(b)) {
      Eigen::Map<Eigen::RowVectorXd> gb(b->grad_buffer().ptr(), out_dim);
      gb += g.colwise().sum();
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, Padding padding,
           std::size_t groups) {
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  require(xs.size() == 4 && ws.size() == 4, ErrorKind::ShapeMismatch,
          "conv2d expects NHWC input and (kh,kw,cin,cout) weights");
  const std::size_t n = xs[0], h = xs[1], wd = xs[2], c = xs[3];
  const std::size_t kh = ws[0], kw = ws[1], cin_g = ws[2], cout = ws[3];
  require(groups >= 1 && c % groups == 0 && cout % groups == 0 && cin_g * groups == c,
          ErrorKind::ShapeMismatch,
          "conv2d channels " + std::to_string(c) + " incompatible with weight " +
              shape_string(ws) + " groups " + std::to_string(groups));
  const std::size_t cout_g = cout / groups;
  const Window wy = resolve_window(h, kh, stride, padding);
  const Window wx = resolve_window(wd, kw, stride, padding);
  const std::size_t ho = wy.out, wo = wx.out;

  Tensor out({n, ho, wo, cout});
  const double* xp = x->value.ptr();
  const double* wp = w->value.ptr();
  double* op = out.ptr();
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double* o = op + ((in * ho + oy) * wo + ox) * cout;
        if (b) std::copy_n(b->value.ptr(), cout, o);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(wy.pad_before);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long ix =
                static_cast<long>(ox * stride + kx) - static_cast<long>(wx.pad_before);
            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
            const double* xi = xp + ((in * h + static_cast<std::size_t>(iy)) * wd +
                                     static_cast<std::size_t>(ix)) * c;
            const double* wk = wp + (ky * kw + kx) * cin_g * cout;
            for (std::size_t g = 0; g < groups; ++g) {
              for (std::size_t ci = 0; ci < cin_g; ++ci) {
                const double xv = xi[g * cin_g + ci];
                const double* wrow = wk + ci * cout + g * cout_g;
                double* og = o + g * cout_g;
                for (std::size_t co = 0; co < cout_g; ++co) og[co] += xv * wrow[co];
              }
            }
          }
        }
      }
    }
  }

  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(b);
  return make_node(std::move(out), inputs, [=](Node& self) {
    const double* g = self.grad.ptr();
    const double* xp = x->value.ptr();
    const double* wp = w->value.ptr();
    double* gx = wants(x) ? x->grad_buffer().ptr() : nullptr;
    double* gw = wants(w) ? w->grad_buffer().ptr() : nullptr;
    if (wants(b)) {
      double* gb = b->grad_buffer().ptr();
      for (std::size_t i = 0; i < n * ho * wo; ++i) {
        for (std::size_t co = 0; co < cout; ++co) gb[co] += g[i * cout + co];
      }
    }
    if (!gx && !gw) return;
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double* go = g + ((in * ho + oy) * wo + ox) * cout;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const long iy =
                static_cast<long>(oy * stride + ky) - static_cast<long>(wy.pad_before);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long ix =
                  static_cast<long>(ox * stride + kx) - static_cast<long>(wx.pad_before);
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              const std::size_t xoff = ((in * h + static_cast<std::size_t>(iy)) * wd +
                                        static_cast<std::size_t>(ix)) * c;
              const std::size_t woff = (ky * kw + kx) * cin_g * cout;
              for (std::size_t gi = 0; gi < groups; ++gi) {
                const double* gog = go + gi * cout_g;
                for (std::size_t ci = 0; ci < cin_g; ++ci) {
                  const std::size_t xi = xoff + gi * cin_g + ci;
                  const std::size_t wi = woff + ci * cout + gi * cout_g;
                  if (gw) {
                    const double xv = xp[xi];
                    double* gwr = gw + wi;
                    for (std::size_t co = 0; co < cout_g; ++co) gwr[co] += xv * gog[co];
                  }
                  if (gx) {
                    const double* wr = wp + wi;
                    double acc = 0.0;
                    for (std::size_t co = 0; co < cout_g; ++co) acc += wr[co] * gog[co];
                    gx[xi] += acc;
                  }
                }
              }
            }
          }
        }
      }
    }
  });
}

Var pool2d(const Var& x, PoolKind kind, std::size_t window, std::size_t stride,
           Padding padding) {
  const Shape& xs = x->value.shape();
  require(xs.size() == 4, ErrorKind::ShapeMismatch, "pool2d expects NHWC input");
  const std::size_t n = xs[0], h = xs[1], wd = xs[2], c = xs[3];
  const Window wy = resolve_window(h, window, stride, padding);
  const Window wx = resolve_window(wd, window, stride, padding);
  const std::size_t ho = wy.out, wo = wx.out;
  Tensor out({n, ho, wo, c});
  // Max: source flat index per output element. Average: contributing count.
  std::vector<std::size_t> source(out.size(), 0);
  std::vector<double> counts(n * ho * wo, 0.0);
  const double* xp = x->value.ptr();
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const std::size_t cell = (in * ho + oy) * wo + ox;
        double* o = out.ptr() + cell * c;
        if (kind == PoolKind::Max) std::fill_n(o, c, -std::numeric_limits<double>::infinity());
        for (std::size_t ky = 0; ky < window; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(wy.pad_before);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < window; ++kx) {
            const long ix =
                static_cast<long>(ox * stride + kx) - static_cast<long>(wx.pad_before);
            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
            const std::size_t base = ((in * h + static_cast<std::size_t>(iy)) * wd +
                                      static_cast<std::size_t>(ix)) * c;
            counts[cell] += 1.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
              if (kind == PoolKind::Max) {
                if (xp[base + ch] > o[ch]) {
                  o[ch] = xp[base + ch];
                  source[cell * c + ch] = base + ch;
                }
              } else {
                o[ch] += xp[base + ch];
              }
            }
          }
        }
        if (kind == PoolKind::Average) {
          for (std::size_t ch = 0; ch < c; ++ch) o[ch] /= counts[cell];
        }
      }
    }
  }
  return make_node(std::move(out), {x}, [=, source = std::move(source),
                                         counts = std::move(counts)](Node& self) {
    double* gx = x->grad_buffer().ptr();
    const double* g = self.grad.ptr();
    if (kind == PoolKind::Max) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[source[i]] += g[i];
      return;
    }
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const std::size_t cell = (in * ho + oy) * wo + ox;
          const double scale = 1.0 / counts[cell];
          for (std::size_t ky = 0; ky < window; ++ky) {
            const long iy =
                static_cast<long>(oy * stride + ky) - static_cast<long>(wy.pad_before);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < window; ++kx) {
              const long ix =
                  static_cast<long>(ox * stride + kx) - static_cast<long>(wx.pad_before);
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              const std::size_t base = ((in * h + static_cast<std::size_t>(iy)) * wd +
                                        static_cast<std::size_t>(ix)) * c;
              for (std::size_t ch = 0; ch < c; ++ch) gx[base + ch] += g[cell * c + ch] * scale;
            }
          }
        }
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Shape& xs = x->value.shape();
  require(xs.size() == 4, ErrorKind::ShapeMismatch, "global_avg_pool expects NHWC input");
  const std::size_t n = xs[0], hw = xs[1] * xs[2], c = xs[3];
  Tensor out({n, c});
  const double* xp = x->value.ptr();
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) out.at(in, ch) += xp[(in * hw + p) * c + ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) out.at(in, ch) /= static_cast<double>(hw);
  }
  return make_node(std::move(out), {x}, [x, n, hw, c](Node& self) {
    double* gx = x->grad_buffer().ptr();
    const double scale = 1.0 / static_cast<double>(hw);
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          gx[(in * hw + p) * c + ch] += self.grad.at(in, ch) * scale;
        }
      }
    }
  });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var relu6(const Var& x) {
  return unary(
      x, [](double v) { return std::clamp(v, 0.0, 6.0); },
      [](double in, double) { return (in > 0.0 && in < 6.0) ? 1.0 : 0.0; });
}

Var silu(const Var& x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double in, double) {
        const double s = 1.0 / (1.0 + std::exp(-in));
        return s * (1.0 + in * (1.0 - s));
      });
}

Var gelu(const Var& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double in, double) {
        return 0.5 * (1.0 + std::erf(in * kInvSqrt2)) + in * kInvSqrt2Pi * std::exp(-0.5 * in * in);
      });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double out) { return 1.0 - out * out; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double out) { return out * (1.0 - out); });
}

Var add(const Var& a, const Var& b) {
  require(a->value.shape() == b->value.shape(), ErrorKind::ShapeMismatch,
          "add " + shape_string(a->value.shape()) + " + " + shape_string(b->value.shape()));
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    for (const Var& v : {a, b}) {
      if (!wants(v)) continue;
      Tensor& g = v->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var add_broadcast(const Var& x, const Var& p) {
  const std::size_t inner = p->value.size();
  require(inner > 0 && x->value.size() % inner == 0 &&
              shape_size(p->value.shape()) == inner,
          ErrorKind::ShapeMismatch,
          "broadcast " + shape_string(p->value.shape()) + " onto " + shape_string(x->value.shape()));
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += p->value[i % inner];
  return make_node(std::move(out), {x, p}, [x, p, inner](Node& self) {
    if (wants(x)) {
      Tensor& g = x->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(p)) {
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % inner] += self.grad[i];
    }
  });
}

Var scale_channels(const Var& x, const Var& s) {
  const Shape& xs = x->value.shape();
  require(s->value.rank() == 2 && s->value.dim(0) == xs.front() && s->value.dim(1) == xs.back(),
          ErrorKind::ShapeMismatch, "scale_channels shape");
  const std::size_t n = xs.front(), c = xs.back();
  const std::size_t per_sample = x->value.size() / n;
  Tensor out = x->value;
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t i = 0; i < per_sample; ++i) out[in * per_sample + i] *= s->value.at(in, i % c);
  }
  return make_node(std::move(out), {x, s}, [x, s, n, c, per_sample](Node& self) {
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t i = 0; i < per_sample; ++i) {
        const std::size_t k = in * per_sample + i;
        if (wants(x)) x->grad_buffer()[k] += self.grad[k] * s->value.at(in, i % c);
        if (wants(s)) s->grad_buffer().at(in, i % c) += self.grad[k] * x->value[k];
      }
    }
  });
}

Var concat_last(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::ShapeMismatch, "concat of nothing");
  Shape shape = parts.front()->value.shape();
  const std::size_t outer = parts.front()->value.size() / shape.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& ps = p->value.shape();
    require(ps.size() == shape.size() && std::equal(ps.begin(), ps.end() - 1, shape.begin()),
            ErrorKind::ShapeMismatch, "concat " + shape_string(ps) + " with " + shape_string(shape));
    widths.push_back(ps.back());
    total += ps.back();
  }
  shape.back() = total;
  Tensor out(shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* src = parts[k]->value.ptr();
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy_n(src + r * widths[k], widths[k], out.ptr() + r * total + offset);
    }
    offset += widths[k];
  }
  return make_node(std::move(out), parts, [parts, widths, outer, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (wants(parts[k])) {
        double* g = parts[k]->grad_buffer().ptr();
        for (std::size_t r = 0; r < outer; ++r) {
          for (std::size_t j = 0; j < widths[k]; ++j) {
            g[r * widths[k] + j] += self.grad[r * total + offset + j];
          }
        }
      }
      offset += widths[k];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make_node(std::move(out), {x}, [x](Node& self) {
    Tensor& g = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t d = x->value.shape().back();
  require(gamma->value.size() == d && beta->value.size() == d, ErrorKind::ShapeMismatch,
          "layer_norm width");
  const std::size_t rows = x->value.size() / d;
  Tensor out(x->value.shape());
  Tensor normalized(x->value.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x->value.ptr() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (xr[j] - mean) * inv_std[r];
      normalized[r * d + j] = xhat;
      out[r * d + j] = xhat * gamma->value[j] + beta->value[j];
    }
  }
  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, d, rows, normalized = std::move(normalized),
                    inv_std = std::move(inv_std)](Node& self) {
                     std::vector<double> dxhat(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* g = self.grad.ptr() + r * d;
                       const double* xh = normalized.ptr() + r * d;
                       double mean_d = 0.0, mean_dx = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         dxhat[j] = g[j] * gamma->value[j];
                         mean_d += dxhat[j];
                         mean_dx += dxhat[j] * xh[j];
                         if (wants(gamma)) gamma->grad_buffer()[j] += g[j] * xh[j];
                         if (wants(beta)) beta->grad_buffer()[j] += g[j];
                       }
                       mean_d /= static_cast<double>(d);
                       mean_dx /= static_cast<double>(d);
                       if (wants(x)) {
                         double* gx = x->grad_buffer().ptr() + r * d;
                         for (std::size_t j = 0; j < d; ++j) {
                           gx[j] += inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                         }
                       }
                     }
                   });
}

Var prepend_token(const Var& x, const Var& token) {
  const Shape& xs = x->value.shape();
  require(xs.size() == 3 && token->value.size() == xs[2], ErrorKind::ShapeMismatch,
          "prepend_token shape");
  const std::size_t n = xs[0], t = xs[1], d = xs[2];
  Tensor out({n, t + 1, d});
  for (std::size_t in = 0; in < n; ++in) {
    std::copy_n(token->value.ptr(), d, out.ptr() + in * (t + 1) * d);
    std::copy_n(x->value.ptr() + in * t * d, t * d, out.ptr() + (in * (t + 1) + 1) * d);
  }
  return make_node(std::move(out), {x, token}, [x, token, n, t, d](Node& self) {
    for (std::size_t in = 0; in < n; ++in) {
      const double* g = self.grad.ptr() + in * (t + 1) * d;
      if (wants(token)) {
        double* gt = token->grad_buffer().ptr();
        for (std::size_t j = 0; j < d; ++j) gt[j] += g[j];
      }
      if (wants(x)) {
        double* gx = x->grad_buffer().ptr() + in * t * d;
        for (std::size_t j = 0; j < t * d; ++j) gx[j] += g[d + j];
      }
    }
  });
}

Var select_token(const Var& x, std::size_t index) {
  const Shape& xs = x->value.shape();
  require(xs.size() == 3 && index < xs[1], ErrorKind::ShapeMismatch, "select_token shape");
  const std::size_t n = xs[0], t = xs[1], d = xs[2];
  Tensor out({n, d});
  for (std::size_t in = 0; in < n; ++in) {
    std::copy_n(x->value.ptr() + (in * t + index) * d, d, out.ptr() + in * d);
  }
  return make_node(std::move(out), {x}, [x, n, t, d, index](Node& self) {
    double* gx = x->grad_buffer().ptr();
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t j = 0; j < d; ++j) gx[(in * t + index) * d + j] += self.grad.at(in, j);
    }
  });
}

Var self_attention(const Var& qkv, std::size_t heads) {
  const Shape& s = qkv->value.shape();
  require(s.size() == 3 && s[2] % 3 == 0 && heads > 0 && (s[2] / 3) % heads == 0,
          ErrorKind::ShapeMismatch, "self_attention expects (N,T,3D) with D divisible by heads");
  const std::size_t n = s[0], t = s[1], d = s[2] / 3, dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({n, t, d});
  // Attention probabilities, (n, heads, t, t).
  Tensor attn({n, heads, t, t});
  const double* p = qkv->value.ptr();
  auto q_at = [&](std::size_t in, std::size_t ti, std::size_t hd, std::size_t j) {
    return p[(in * t + ti) * 3 * d + hd * dh + j];
  };
  auto k_at = [&](std::size_t in, std::size_t ti, std::size_t hd, std::size_t j) {
    return p[(in * t + ti) * 3 * d + d + hd * dh + j];
  };
  auto v_at = [&](std::size_t in, std::size_t ti, std::size_t hd, std::size_t j) {
    return p[(in * t + ti) * 3 * d + 2 * d + hd * dh + j];
  };
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t hd = 0; hd < heads; ++hd) {
      for (std::size_t i = 0; i < t; ++i) {
        double* row = attn.ptr() + ((in * heads + hd) * t + i) * t;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < t; ++k) {
          double dot = 0.0;
          for (std::size_t j = 0; j < dh; ++j) dot += q_at(in, i, hd, j) * k_at(in, k, hd, j);
          row[k] = dot * scale;
          peak = std::max(peak, row[k]);
        }
        double total = 0.0;
        for (std::size_t k = 0; k < t; ++k) {
          row[k] = std::exp(row[k] - peak);
          total += row[k];
        }
        for (std::size_t k = 0; k < t; ++k) row[k] /= total;
        for (std::size_t j = 0; j < dh; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < t; ++k) acc += row[k] * v_at(in, k, hd, j);
          out.at(in, i, hd * dh + j) = acc;
        }
      }
    }
  }
  return make_node(std::move(out), {qkv}, [=, attn = std::move(attn)](Node& self) {
    const double* p = qkv->value.ptr();
    double* gq = qkv->grad_buffer().ptr();
    std::vector<double> dattn(t);
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t hd = 0; hd < heads; ++hd) {
        for (std::size_t i = 0; i < t; ++i) {
          const double* row = attn.ptr() + ((in * heads + hd) * t + i) * t;
          const double* go = self.grad.ptr() + (in * t + i) * d + hd * dh;
          double weighted = 0.0;
          for (std::size_t k = 0; k < t; ++k) {
            const double* vk = p + (in * t + k) * 3 * d + 2 * d + hd * dh;
            double* gvk = gq + (in * t + k) * 3 * d + 2 * d + hd * dh;
            double acc = 0.0;
            for (std::size_t j = 0; j < dh; ++j) {
              acc += go[j] * vk[j];
              gvk[j] += row[k] * go[j];
            }
            dattn[k] = acc;
            weighted += acc * row[k];
          }
          const double* qi = p + (in * t + i) * 3 * d + hd * dh;
          double* gqi = gq + (in * t + i) * 3 * d + hd * dh;
          for (std::size_t k = 0; k < t; ++k) {
            const double ds = row[k] * (dattn[k] - weighted) * scale;
            const double* kk = p + (in * t + k) * 3 * d + d + hd * dh;
            double* gk = gq + (in * t + k) * 3 * d + d + hd * dh;
            for (std::size_t j = 0; j < dh; ++j) {
              gqi[j] += ds * kk[j];
              gk[j] += ds * qi[j];
            }
          }
        }
      }
    }
  });
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = logits.ptr() + r * k;
    double* o = out.ptr() + r * k;
    const double peak = *std::max_element(in, in + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(in[j] - peak);
      total += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] /= total;
  }
  return out;
}

Var softmax(const Var& logits) {
  Tensor out = softmax_rows(logits->value);
  const std::size_t k = out.shape().back();
  return make_node(std::move(out), {logits}, [logits, k](Node& self) {
    const std::size_t rows = self.value.size() / k;
    double* gl = logits->grad_buffer().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.ptr() + r * k;
      const double* g = self.grad.ptr() + r * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < k; ++j) gl[r * k + j] += y[j] * (g[j] - dot);
    }
  });
}

Var dropout(const Var& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  const double keep = 1.0 - rate;
  Tensor mask(x->value.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_node(std::move(out), {x}, [x, mask = std::move(mask)](Node& self) {
    Tensor& g = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& targets) {
  require(logits->value.shape() == targets.shape() && logits->value.rank() == 2,
          ErrorKind::ShapeMismatch,
          "cross entropy logits " + shape_string(logits->value.shape()) + " vs targets " +
              shape_string(targets.shape()));
  const std::size_t rows = targets.dim(0), k = targets.dim(1);
  Tensor probs = softmax_rows(logits->value);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const double y = targets.at(r, j);
      if (y != 0.0) loss -= y * std::log(std::max(probs.at(r, j), 1e-12));
    }
  }
  loss /= static_cast<double>(rows);
  return make_node(Tensor({1}, {loss}), {logits},
                   [logits, targets, rows, k, probs = std::move(probs)](Node& self) {
                     double* g = logits->grad_buffer().ptr();
                     const double upstream = self.grad[0] / static_cast<double>(rows);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double mass = 0.0;
                       for (std::size_t j = 0; j < k; ++j) mass += targets.at(r, j);
                       for (std::size_t j = 0; j < k; ++j) {
                         g[r * k + j] += upstream * (probs.at(r, j) * mass - targets.at(r, j));
                       }
                     }
                   });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require(x->value.size() == weights.size(), ErrorKind::ShapeMismatch, "weighted_sum size");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += x->value[i] * weights[i];
  return make_node(Tensor({1}, {total}), {x}, [x, weights](Node& self) {
    Tensor& g = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

}  // namespace ckd::nn
