// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "sshnet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sshnet/errors.hpp"
#include "sshnet/numerics.hpp"

namespace sshnet {

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const { return nodes_[v.id].value(); }

Var Graph::emit(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return emit(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Graph::emit(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (in.graph == this && nodes_[in.id].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor* Graph::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value().shape());
    n.has_grad = true;
  }
  return &n.grad;
}

void Graph::backward(Var root) {
  if (root.graph != this) throw DimensionError("backward: node belongs to another graph");
  if (value(root).size() != 1) {
    throw DimensionError("backward: root must be a scalar, got " + shape_string(value(root).shape()));
  }
  for (auto& n : nodes_) n.has_grad = false;
  if (!nodes_[root.id].requires_grad) return;
  grad_slot(root.id)->fill(1.0);
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.param) {
      Tensor& pg = n.param->grad;
      if (pg.shape() != n.param->value.shape()) pg = Tensor(n.param->value.shape());
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? n.grad : Tensor(n.value().shape());
}

namespace ops {
namespace {

void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) throw DimensionError("operands belong to different graphs");
}

void require_same_shape(const char* op, Var a, Var b) {
  require_same_graph(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Rows/cols of a rank-1 or rank-2 tensor viewed as a matrix.
std::size_t rows_of(const Tensor& t) { return t.rank() == 1 ? 1 : t.dim(0); }
std::size_t cols_of(const Tensor& t) { return t.rank() == 1 ? t.dim(0) : t.dim(1); }

void require_matrix_like(const char* op, const Tensor& t) {
  if (t.rank() != 1 && t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " + shape_string(t.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  Tensor out = sshnet::matmul(a.value(), b.value());
  return a.graph->emit(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (Tensor* ga = g.grad_slot(a)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * bv[p * n + j];
          (*ga)[i * k + p] += s;
        }
    }
    if (Tensor* gb = g.grad_slot(b)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double s = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += s * go[i * n + j];
        }
    }
  });
}

Var linear(Var x, Var w) {
  require_same_graph(x, w);
  Tensor out = sshnet::linear(x.value(), w.value());
  return x.graph->emit(std::move(out), {x, w}, [x, w](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    const std::size_t out_dim = wv.dim(0), in_dim = wv.dim(1);
    const std::size_t n = xv.size() / in_dim;
    if (Tensor* gx = g.grad_slot(x)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double s = go[i * out_dim + o];
          if (s == 0.0) continue;
          const double* wr = wv.data().data() + o * in_dim;
          double* gr = gx->data().data() + i * in_dim;
          for (std::size_t p = 0; p < in_dim; ++p) gr[p] += s * wr[p];
        }
    }
    if (Tensor* gw = g.grad_slot(w)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double s = go[i * out_dim + o];
          if (s == 0.0) continue;
          const double* xr = xv.data().data() + i * in_dim;
          double* gr = gw->data().data() + o * in_dim;
          for (std::size_t p = 0; p < in_dim; ++p) gr[p] += s * xr[p];
        }
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.graph->emit(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    for (Var v : {a, b}) {
      if (Tensor* gv = g.grad_slot(v))
        for (std::size_t i = 0; i < go.size(); ++i) (*gv)[i] += go[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.graph->emit(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (Tensor* ga = g.grad_slot(a))
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
    if (Tensor* gb = g.grad_slot(b))
      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] -= go[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.graph->emit(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (Tensor* ga = g.grad_slot(a))
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * bv[i];
    if (Tensor* gb = g.grad_slot(b))
      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i] * av[i];
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= c;
  return a.graph->emit(std::move(out), {a}, [a, c](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (Tensor* ga = g.grad_slot(a))
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += c * go[i];
  });
}

Var add_bias(Var x, Var bias) {
  require_same_graph(x, bias);
  const Tensor& xv = x.value();
  require_matrix_like("add_bias", xv);
  const std::size_t m = cols_of(xv);
  if (bias.value().rank() != 1 || bias.value().dim(0) != m) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.value()[i % m];
  return x.graph->emit(std::move(out), {x, bias}, [x, bias, m](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (Tensor* gx = g.grad_slot(x))
      for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i];
    if (Tensor* gb = g.grad_slot(bias))
      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i % m] += go[i];
  });
}

Var mul_rows(Var x, Var s) {
  require_same_graph(x, s);
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || s.value().rank() != 1 || s.value().dim(0) != xv.dim(0)) {
    throw DimensionError("mul_rows: " + shape_string(xv.shape()) + " vs scales " + shape_string(s.shape()));
  }
  const std::size_t n = xv.dim(0), m = xv.dim(1);
  Tensor out = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] *= s.value()[i];
  return x.graph->emit(std::move(out), {x, s}, [x, s, n, m](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    const Tensor& xv = g.value(x);
    const Tensor& sv = g.value(s);
    if (Tensor* gx = g.grad_slot(x))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*gx)[i * m + j] += go[i * m + j] * sv[i];
    if (Tensor* gs = g.grad_slot(s))
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += go[i * m + j] * xv[i * m + j];
        (*gs)[i] += acc;
      }
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = sshnet::sigmoid(v);
  return x.graph->emit(std::move(out), {x}, [x](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    const Tensor& y = g.value(Var{&g, self});
    if (Tensor* gx = g.grad_slot(x))
      for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return x.graph->emit(std::move(out), {x}, [x](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    const Tensor& y = g.value(Var{&g, self});
    if (Tensor* gx = g.grad_slot(x))
      for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * (1.0 - y[i] * y[i]);
  });
}

Var cosine_rows(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix_like("cosine_rows", av);
  require_matrix_like("cosine_rows", bv);
  const std::size_t n = rows_of(av), m = rows_of(bv), d = cols_of(av);
  if (cols_of(bv) != d) {
    throw DimensionError("cosine_rows: row length mismatch " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  }
  std::vector<double> na(n), nb(m);
  for (std::size_t i = 0; i < n; ++i) na[i] = l2_norm(av.data().subspan(i * d, d));
  for (std::size_t j = 0; j < m; ++j) nb[j] = l2_norm(bv.data().subspan(j * d, d));
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (na[i] < kDegenerateNorm || nb[j] < kDegenerateNorm) continue;
      out[i * m + j] = dot(av.data().subspan(i * d, d), bv.data().subspan(j * d, d)) / (na[i] * nb[j]);
    }
  return a.graph->emit(std::move(out), {a, b},
                       [a, b, n, m, d, na = std::move(na), nb = std::move(nb)](Graph& g, std::size_t self) {
                         const Tensor& go = g.upstream(self);
                         const Tensor& c = g.value(Var{&g, self});
                         const Tensor& av = g.value(a);
                         const Tensor& bv = g.value(b);
                         Tensor* ga = g.grad_slot(a);
                         Tensor* gb = g.grad_slot(b);
                         for (std::size_t i = 0; i < n; ++i) {
                           if (na[i] < kDegenerateNorm) continue;
                           const double* ai = av.data().data() + i * d;
                           for (std::size_t j = 0; j < m; ++j) {
                             if (nb[j] < kDegenerateNorm) continue;
                             const double gij = go[i * m + j];
                             if (gij == 0.0) continue;
                             const double* bj = bv.data().data() + j * d;
                             const double cij = c[i * m + j];
                             const double inv = 1.0 / (na[i] * nb[j]);
                             if (ga) {
                               const double ca = cij / (na[i] * na[i]);
                               double* gr = ga->data().data() + i * d;
                               for (std::size_t k = 0; k < d; ++k) gr[k] += gij * (bj[k] * inv - ca * ai[k]);
                             }
                             if (gb) {
                               const double cb = cij / (nb[j] * nb[j]);
                               double* gr = gb->data().data() + j * d;
                               for (std::size_t k = 0; k < d; ++k) gr[k] += gij * (ai[k] * inv - cb * bj[k]);
                             }
                           }
                         }
                       });
}

Var smoothed_softmax(Var c, double lambda) {
  const Tensor& cv = c.value();
  require_matrix_like("smoothed_softmax", cv);
  const std::size_t n = rows_of(cv), m = cols_of(cv);
  Tensor out(cv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    Tensor r = sshnet::smoothed_softmax(cv.data().subspan(i * m, m), lambda);
    std::copy(r.data().begin(), r.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * m));
  }
  return c.graph->emit(std::move(out), {c}, [c, lambda, n, m](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    const Tensor& y = g.value(Var{&g, self});
    Tensor* gc = g.grad_slot(c);
    if (!gc) return;
    for (std::size_t i = 0; i < n; ++i) {
      double inner = 0.0;
      for (std::size_t j = 0; j < m; ++j) inner += y[i * m + j] * go[i * m + j];
      for (std::size_t j = 0; j < m; ++j) {
        (*gc)[i * m + j] += lambda * y[i * m + j] * (go[i * m + j] - inner);
      }
    }
  });
}

Var avg_pool_spatial(Var x) {
  Tensor out = sshnet::avg_pool_spatial(x.value());
  return x.graph->emit(std::move(out), {x}, [x](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor* gx = g.grad_slot(x);
    if (!gx) return;
    const std::size_t c = go.size();
    const std::size_t hw = gx->size() / c;
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t k = 0; k < c; ++k) (*gx)[p * c + k] += go[k] * inv;
  });
}

Var conv2d(Var input, Var kernel, Var bias, std::size_t stride) {
  require_same_graph(input, kernel);
  const bool has_bias = bias.graph != nullptr;
  if (has_bias) require_same_graph(input, bias);
  Tensor out = sshnet::conv2d(input.value(), kernel.value(), has_bias ? &bias.value() : nullptr, stride);
  std::vector<Var> inputs{input, kernel};
  if (has_bias) inputs.push_back(bias);
  return input.graph->emit(
      std::move(out), inputs, [input, kernel, bias, has_bias, stride](Graph& g, std::size_t self) {
        const Tensor& go = g.upstream(self);
        const Tensor& xv = g.value(input);
        const Tensor& kv = g.value(kernel);
        const std::size_t w = xv.dim(1), cin = xv.dim(2);
        const std::size_t kh = kv.dim(0), kw = kv.dim(1), cout = kv.dim(3);
        const std::size_t oh = go.dim(0), ow = go.dim(1);
        Tensor* gx = g.grad_slot(input);
        Tensor* gk = g.grad_slot(kernel);
        Tensor* gb = has_bias ? g.grad_slot(bias) : nullptr;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const double* o = go.data().data() + (oy * ow + ox) * cout;
            if (gb)
              for (std::size_t co = 0; co < cout; ++co) (*gb)[co] += o[co];
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::size_t xoff = ((oy * stride + ky) * w + (ox * stride + kx)) * cin;
                const std::size_t koff = (ky * kw + kx) * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const double* kc = kv.data().data() + koff + ci * cout;
                  if (gx) {
                    double s = 0.0;
                    for (std::size_t co = 0; co < cout; ++co) s += kc[co] * o[co];
                    (*gx)[xoff + ci] += s;
                  }
                  if (gk) {
                    const double xvv = xv[xoff + ci];
                    double* gkc = gk->data().data() + koff + ci * cout;
                    for (std::size_t co = 0; co < cout; ++co) gkc[co] += xvv * o[co];
                  }
                }
              }
          }
      });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.graph->emit(std::move(out), {x}, [x](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (Tensor* gx = g.grad_slot(x))
      for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Graph* graph = parts.front().graph;
  const std::size_t m = cols_of(parts.front().value());
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.graph != graph) throw DimensionError("concat_rows: operands belong to different graphs");
    require_matrix_like("concat_rows", p.value());
    if (cols_of(p.value()) != m) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(p.shape()) + " vs width " +
                           std::to_string(m));
    }
    offsets.push_back(total);
    total += p.value().size();
  }
  std::vector<double> data;
  data.reserve(total);
  for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  Tensor out({total / m, m}, std::move(data));
  std::vector<Var> inputs(parts.begin(), parts.end());
  return graph->emit(std::move(out), parts, [inputs, offsets](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      Tensor* gp = g.grad_slot(inputs[k]);
      if (!gp) continue;
      for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += go[offsets[k] + i];
    }
  });
}

Var concat_cols(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0)) {
    throw DimensionError("concat_cols: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  const std::size_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  Tensor out({n, ca + cb});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.data().data() + i * ca, ca, out.data().data() + i * (ca + cb));
    std::copy_n(bv.data().data() + i * cb, cb, out.data().data() + i * (ca + cb) + ca);
  }
  return a.graph->emit(std::move(out), {a, b}, [a, b, n, ca, cb](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (Tensor* ga = g.grad_slot(a))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ca; ++j) (*ga)[i * ca + j] += go[i * (ca + cb) + j];
    if (Tensor* gb = g.grad_slot(b))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cb; ++j) (*gb)[i * cb + j] += go[i * (ca + cb) + ca + j];
  });
}

Var sum(Var x) {
  const auto d = x.value().data();
  const double s = std::accumulate(d.begin(), d.end(), 0.0);
  return x.graph->emit(Tensor::scalar(s), {x}, [x](Graph& g, std::size_t self) {
    const double go = g.upstream(self)[0];
    if (Tensor* gx = g.grad_slot(x))
      for (auto& v : gx->data()) v += go;
  });
}

Var l2_normalize(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 1) throw DimensionError("l2_normalize: expected a vector, got " + shape_string(xv.shape()));
  const double norm = l2_norm(xv.data());
  Tensor out(xv.shape());
  if (norm >= kDegenerateNorm) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] / norm;
  }
  return x.graph->emit(std::move(out), {x}, [x, norm](Graph& g, std::size_t self) {
    if (norm < kDegenerateNorm) return;
    const Tensor& go = g.upstream(self);
    const Tensor& y = g.value(Var{&g, self});
    Tensor* gx = g.grad_slot(x);
    if (!gx) return;
    const double yg = dot(y.data(), go.data());
    for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += (go[i] - y[i] * yg) / norm;
  });
}

Var rank_weighted_pool(Var rows, Var weights) {
  require_same_graph(rows, weights);
  const Tensor& rv = rows.value();
  const Tensor& wv = weights.value();
  if (rv.rank() != 2 || wv.rank() != 1 || wv.dim(0) != rv.dim(0) || rv.dim(0) == 0) {
    throw DimensionError("rank_weighted_pool: rows " + shape_string(rv.shape()) + " vs weights " +
                         shape_string(wv.shape()));
  }
  const std::size_t n = rv.dim(0), d = rv.dim(1);
  // order[k * n + r] = row index holding the r-th largest value of column k.
  std::vector<std::size_t> order(n * d);
  Tensor out({d});
  std::vector<std::size_t> idx(n);
  for (std::size_t k = 0; k < d; ++k) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t p, std::size_t q) { return rv[p * d + k] > rv[q * d + k]; });
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      order[k * n + r] = idx[r];
      acc += wv[r] * rv[idx[r] * d + k];
    }
    out[k] = acc;
  }
  return rows.graph->emit(std::move(out), {rows, weights},
                          [rows, weights, n, d, order = std::move(order)](Graph& g, std::size_t self) {
                            const Tensor& go = g.upstream(self);
                            const Tensor& rv = g.value(rows);
                            const Tensor& wv = g.value(weights);
                            Tensor* gr = g.grad_slot(rows);
                            Tensor* gw = g.grad_slot(weights);
                            for (std::size_t k = 0; k < d; ++k)
                              for (std::size_t r = 0; r < n; ++r) {
                                const std::size_t src = order[k * n + r];
                                if (gr) (*gr)[src * d + k] += wv[r] * go[k];
                                if (gw) (*gw)[r] += rv[src * d + k] * go[k];
                              }
                          });
}

Var interpolate_weights(Var table, std::size_t n) {
  const Tensor& tv = table.value();
  if (tv.rank() != 1 || tv.dim(0) == 0) {
    throw DimensionError("interpolate_weights: table must be a non-empty vector");
  }
  const std::size_t len = tv.dim(0);
  if (n == 0 || n > len) {
    throw ConfigError("pooling over " + std::to_string(n) + " rows exceeds the weight table size " +
                      std::to_string(len));
  }
  // Position r samples the table at t = r * (len - 1) / (n - 1).
  std::vector<std::size_t> lo(n);
  std::vector<double> frac(n);
  Tensor logits({n});
  for (std::size_t r = 0; r < n; ++r) {
    const double t = n == 1 ? 0.0 : static_cast<double>(r) * static_cast<double>(len - 1) / static_cast<double>(n - 1);
    lo[r] = std::min(static_cast<std::size_t>(t), len - 1);
    frac[r] = t - static_cast<double>(lo[r]);
    const std::size_t hi = std::min(lo[r] + 1, len - 1);
    logits[r] = (1.0 - frac[r]) * tv[lo[r]] + frac[r] * tv[hi];
  }
  Tensor out = sshnet::smoothed_softmax(logits.data(), 1.0);
  return table.graph->emit(std::move(out), {table},
                           [table, n, len, lo = std::move(lo), frac = std::move(frac)](Graph& g, std::size_t self) {
                             Tensor* gt = g.grad_slot(table);
                             if (!gt) return;
                             const Tensor& go = g.upstream(self);
                             const Tensor& y = g.value(Var{&g, self});
                             double inner = 0.0;
                             for (std::size_t r = 0; r < n; ++r) inner += y[r] * go[r];
                             for (std::size_t r = 0; r < n; ++r) {
                               const double dl = y[r] * (go[r] - inner);
                               const std::size_t hi = std::min(lo[r] + 1, len - 1);
                               (*gt)[lo[r]] += (1.0 - frac[r]) * dl;
                               (*gt)[hi] += frac[r] * dl;
                             }
                           });
}

Var triplet_loss(Var sim, double margin) {
  const Tensor& s = sim.value();
  if (s.rank() != 2 || s.dim(0) != s.dim(1)) {
    throw DimensionError("triplet_loss: similarity must be square, got " + shape_string(s.shape()));
  }
  const std::size_t b = s.dim(0);
  if (b < 2) throw ConfigError("triplet_loss: batch size must be at least 2");
  // Hardest in-batch negative sentence per image (row) and image per sentence
  // (column); ties keep the lower index.
  std::vector<std::size_t> row_neg(b), col_neg(b);
  std::vector<bool> row_active(b), col_active(b);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t rj = i == 0 ? 1 : 0, cj = rj;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      if (s.at(i, j) > s.at(i, rj)) rj = j;
      if (s.at(j, i) > s.at(cj, i)) cj = j;
    }
    row_neg[i] = rj;
    col_neg[i] = cj;
    const double hr = margin - s.at(i, i) + s.at(i, rj);
    const double hc = margin - s.at(i, i) + s.at(cj, i);
    row_active[i] = hr > 0.0;
    col_active[i] = hc > 0.0;
    total += std::max(0.0, hr) + std::max(0.0, hc);
  }
  return sim.graph->emit(Tensor::scalar(total), {sim},
                         [sim, b, row_neg = std::move(row_neg), col_neg = std::move(col_neg),
                          row_active = std::move(row_active), col_active = std::move(col_active)](Graph& g, std::size_t self) {
                           Tensor* gs = g.grad_slot(sim);
                           if (!gs) return;
                           const double go = g.upstream(self)[0];
                           for (std::size_t i = 0; i < b; ++i) {
                             if (row_active[i]) {
                               gs->at(i, i) -= go;
                               gs->at(i, row_neg[i]) += go;
                             }
                             if (col_active[i]) {
                               gs->at(i, i) -= go;
                               gs->at(col_neg[i], i) += go;
                             }
                           }
                         });
}

}  // namespace ops
}  // namespace sshnet
