#include "nast/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nast {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double logsumexp(std::span<const double> xs) {
  check_arg(!xs.empty(), "logsumexp: empty input");
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  if (std::isnan(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> softmax_row(std::span<const double> xs) {
  check_arg(!xs.empty(), "softmax_row: empty input");
  for (double x : xs)
    if (!std::isfinite(x)) throw ContractViolation("softmax_row: non-finite input");
  double m = xs[0];
  for (double x : xs) m = std::max(m, x);
  std::vector<double> out(xs.size());
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = std::exp(xs[i] - m);
    s += out[i];
  }
  for (double& o : out) o /= s;
  return out;
}

Tape::Node& Tape::node(Var x) {
  check_arg(x.valid() && x.id < size(), "invalid tape variable");
  return nodes_[static_cast<std::size_t>(x.id)];
}

const Tape::Node& Tape::node(Var x) const {
  check_arg(x.valid() && x.id < size(), "invalid tape variable");
  return nodes_[static_cast<std::size_t>(x.id)];
}

bool Tape::result_requires_grad(std::span<const Var> parents) const {
  if (!grad_enabled_) return false;
  for (Var p : parents)
    if (node(p).requires_grad) return true;
  return false;
}

Var Tape::push_node(std::vector<Var> parents, Array value, BackwardFn bw) {
  const bool rg = result_requires_grad(parents);
  Node n;
  n.value = std::move(value);
  if (rg) {
    n.parents = std::move(parents);
    n.bw = std::move(bw);
  }
  n.requires_grad = rg;
  if (debug_checks && !n.value.all_finite())
    throw std::runtime_error("non-finite value produced on tape");
  nodes_.push_back(std::move(n));
  return Var{size() - 1};
}

Var Tape::leaf(Array value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{size() - 1};
}

const Array& Tape::val(Var x) const { return node(x).value; }

Array Tape::grad(Var x) const {
  const Node& n = node(x);
  if (n.grad.v.empty() && n.value.numel() > 0) {
    Array z = Array::zeros(n.value.shape);
    return z;
  }
  return n.grad;
}

Array* Tape::grad_buf_if(Var x) {
  Node& n = node(x);
  if (!n.requires_grad) return nullptr;
  if (n.grad.v.empty()) n.grad = Array::zeros(n.value.shape);
  return &n.grad;
}

const Array& Tape::grad_of(Var x) const {
  const Node& n = node(x);
  check_arg(!n.grad.v.empty(), "grad_of: node has no gradient");
  return n.grad;
}

bool Tape::requires_grad(Var x) const { return node(x).requires_grad; }

Var Tape::custom(std::vector<Var> parents, Array value, BackwardFn bw) {
  return push_node(std::move(parents), std::move(value), std::move(bw));
}

void Tape::backward(Var root) {
  Node& r = node(root);
  check_arg(r.value.numel() == 1, "backward: root must be scalar");
  if (!r.requires_grad) throw StateError("backward: root does not require gradients");
  r.grad = Array::full(r.value.shape, 0.0);
  r.grad.v[0] = 1.0;
  for (Index id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.v.empty() || !n.bw) continue;
    n.bw(*this, id);
  }
}

// ---- ops ----

Var Tape::add(Var a, Var b) {
  const Array& av = val(a);
  const Array& bv = val(b);
  check_arg(av.same_shape(bv), "add: shape mismatch " + shape_to_string(av.shape) + " vs " +
                                   shape_to_string(bv.shape));
  Array out = av;
  for (Index i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return push_node({a, b}, std::move(out), [a, b](Tape& t, Index self) {
    const Array& g = t.grad_of(Var{self});
    if (Array* ga = t.grad_buf_if(a))
      for (Index i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    if (Array* gb = t.grad_buf_if(b))
      for (Index i = 0; i < g.numel(); ++i) (*gb)[i] += g[i];
  });
}

Var Tape::add_bias(Var a, Var bias) {
  const Array& av = val(a);
  const Array& bv = val(bias);
  check_arg(av.rank() == 2 && bv.rank() == 1 && av.cols() == bv.shape[0],
            "add_bias: incompatible shapes");
  Array out = av;
  const Index n = av.rows(), d = av.cols();
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < d; ++c) out.at(r, c) += bv[c];
  return push_node({a, bias}, std::move(out), [a, bias, n, d](Tape& t, Index self) {
    const Array& g = t.grad_of(Var{self});
    if (Array* ga = t.grad_buf_if(a))
      for (Index i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    if (Array* gb = t.grad_buf_if(bias))
      for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < d; ++c) (*gb)[c] += g[r * d + c];
  });
}

Var Tape::mul(Var a, Var b) {
  const Array& av = val(a);
  const Array& bv = val(b);
  check_arg(av.same_shape(bv), "mul: shape mismatch");
  Array out = av;
  for (Index i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return push_node({a, b}, std::move(out), [a, b](Tape& t, Index self) {
    const Array& g = t.grad_of(Var{self});
    const Array& av = t.val(a);
    const Array& bv = t.val(b);
    if (Array* ga = t.grad_buf_if(a))
      for (Index i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    if (Array* gb = t.grad_buf_if(b))
      for (Index i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
  });
}

Var Tape::scale(Var a, double s) {
  Array out = val(a);
  for (Index i = 0; i < out.numel(); ++i) out[i] *= s;
  return push_node({a}, std::move(out), [a, s](Tape& t, Index self) {
    const Array& g = t.grad_of(Var{self});
    if (Array* ga = t.grad_buf_if(a))
      for (Index i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * s;
  });
}

namespace {

// c[n,m] += a[n,kk] * b[kk,m]; contributions to each element accumulate in
// ascending k order so results are reproduction-stable.
void matmul_acc(const double* a, const double* b, double* c, Index n, Index kk, Index m) {
  for (Index i = 0; i < n; ++i) {
    const double* ai = a + i * kk;
    double* ci = c + i * m;
    for (Index k = 0; k < kk; ++k) {
      const double av = ai[k];
      const double* bk = b + k * m;
      for (Index j = 0; j < m; ++j) ci[j] += av * bk[j];
    }
  }
}

}  // namespace

Var Tape::matmul(Var a, Var b) {
  const Array& av = val(a);
  const Array& bv = val(b);
  check_arg(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.rows(),
            "matmul: incompatible shapes " + shape_to_string(av.shape) + " x " +
                shape_to_string(bv.shape));
  const Index n = av.rows(), kk = av.cols(), m = bv.cols();
  Array out = Array::zeros({n, m});
  matmul_acc(av.v.data(), bv.v.data(), out.v.data(), n, kk, m);
  return push_node({a, b}, std::move(out), [a, b, n, kk, m](Tape& t, Index self) {
    const Array& g = t.grad_of(Var{self});
    const Array& av = t.val(a);
    const Array& bv = t.val(b);
    if (Array* ga = t.grad_buf_if(a)) {
      // da[i,k] += sum_j g[i,j] * b[k,j]
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) {
          const double gv = g[i * m + j];
          for (Index k = 0; k < kk; ++k) (*ga)[i * kk + k] += gv * bv[k * m + j];
        }
    }
    if (Array* gb = t.grad_buf_if(b)) {
      // db[k,j] += sum_i a[i,k] * g[i,j]
      for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < kk; ++k) {
          const double av2 = av[i * kk + k];
          for (Index j = 0; j < m; ++j) (*gb)[k * m + j] += av2 * g[i * m + j];
        }
    }
  });
}

Var Tape::relu(Var a) {
  Array out = val(a);
  for (Index i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return push_node({a}, std::move(out), [a](Tape& t, Index self) {
    const Array& g = t.grad_of(Var{self});
    const Array& av = t.val(a);
    if (Array* ga = t.grad_buf_if(a))
      for (Index i = 0; i < g.numel(); ++i)
        if (av[i] > 0.0) (*ga)[i] += g[i];
  });
}

Var Tape::sum_all(Var a) {
  const Array& av = val(a);
  double s = 0.0;
  for (Index i = 0; i < av.numel(); ++i) s += av[i];
  return push_node({a}, Array::scalar(s), [a](Tape& t, Index self) {
    const double g = t.grad_of(Var{self}).v[0];
    if (Array* ga = t.grad_buf_if(a))
      for (Index i = 0; i < ga->numel(); ++i) (*ga)[i] += g;
  });
}

Var Tape::logsumexp_all(Var a) {
  const Array& av = val(a);
  const double y = logsumexp(av.v);
  return push_node({a}, Array::scalar(y), [a, y](Tape& t, Index self) {
    const double g = t.grad_of(Var{self}).v[0];
    const Array& av = t.val(a);
    if (Array* ga = t.grad_buf_if(a)) {
      if (y == kNegInf) return;
      for (Index i = 0; i < av.numel(); ++i) (*ga)[i] += g * std::exp(av[i] - y);
    }
  });
}

Var Tape::softmax_rows(Var a) {
  const Array& av = val(a);
  check_arg(av.rank() == 2, "softmax_rows: rank-2 input required");
  const Index n = av.rows(), d = av.cols();
  Array out = Array::zeros({n, d});
  for (Index r = 0; r < n; ++r) {
    std::vector<double> p = softmax_row(std::span<const double>(av.v.data() + r * d, d));
    for (Index c = 0; c < d; ++c) out.at(r, c) = p[static_cast<std::size_t>(c)];
  }
  return push_node({a}, std::move(out), [a, n, d](Tape& t, Index self) {
    const Array& g = t.grad_of(Var{self});
    const Array& y = t.val(Var{self});
    if (Array* ga = t.grad_buf_if(a)) {
      for (Index r = 0; r < n; ++r) {
        double dot = 0.0;
        for (Index c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
        for (Index c = 0; c < d; ++c) (*ga)[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
      }
    }
  });
}

Var Tape::log_softmax_rows(Var a, bool floor_enabled) {
  const Array& av = val(a);
  check_arg(av.rank() == 2, "log_softmax_rows: rank-2 input required");
  const Index n = av.rows(), d = av.cols();
  const double log_floor = std::log(kProbFloor);
  Array raw = Array::zeros({n, d});  // unclamped log-probabilities
  Array out = Array::zeros({n, d});
  for (Index r = 0; r < n; ++r) {
    const double lse = logsumexp(std::span<const double>(av.v.data() + r * d, d));
    check_arg(std::isfinite(lse), "log_softmax_rows: non-finite row");
    for (Index c = 0; c < d; ++c) {
      const double u = av[r * d + c] - lse;
      raw[r * d + c] = u;
      out[r * d + c] = floor_enabled ? std::max(u, log_floor) : u;
    }
  }
  return push_node({a}, std::move(out),
                   [a, n, d, raw = std::move(raw), floor_enabled, log_floor](Tape& t, Index self) {
                     const Array& g = t.grad_of(Var{self});
                     if (Array* ga = t.grad_buf_if(a)) {
                       for (Index r = 0; r < n; ++r) {
                         double gsum = 0.0;
                         for (Index c = 0; c < d; ++c) {
                           const bool clamped = floor_enabled && raw[r * d + c] < log_floor;
                           if (!clamped) gsum += g[r * d + c];
                         }
                         for (Index c = 0; c < d; ++c) {
                           const bool clamped = floor_enabled && raw[r * d + c] < log_floor;
                           const double gu = clamped ? 0.0 : g[r * d + c];
                           (*ga)[r * d + c] += gu - std::exp(raw[r * d + c]) * gsum;
                         }
                       }
                     }
                   });
}

Var Tape::embedding(Var table, std::vector<Index> ids, double scale_factor) {
  const Array& tv = val(table);
  check_arg(tv.rank() == 2, "embedding: table must be rank-2");
  const Index v_count = tv.rows(), d = tv.cols();
  const Index n = static_cast<Index>(ids.size());
  Array out = Array::zeros({n, d});
  for (Index r = 0; r < n; ++r) {
    const Index id = ids[static_cast<std::size_t>(r)];
    if (id < 0 || id >= v_count) throw ContractViolation("embedding: id out of range");
    for (Index c = 0; c < d; ++c) out.at(r, c) = scale_factor * tv.at(id, c);
  }
  return push_node({table}, std::move(out),
                   [table, ids = std::move(ids), scale_factor, d](Tape& t, Index self) {
                     const Array& g = t.grad_of(Var{self});
                     if (Array* gt = t.grad_buf_if(table)) {
                       for (std::size_t r = 0; r < ids.size(); ++r)
                         for (Index c = 0; c < d; ++c)
                           (*gt)[ids[r] * d + c] += scale_factor * g[static_cast<Index>(r) * d + c];
                     }
                   });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Array& xv = val(x);
  const Array& gv = val(gamma);
  const Array& bv = val(beta);
  check_arg(xv.rank() == 2 && gv.rank() == 1 && bv.rank() == 1, "layer_norm: bad ranks");
  const Index n = xv.rows(), d = xv.cols();
  check_arg(gv.shape[0] == d && bv.shape[0] == d, "layer_norm: scale/shift width mismatch");
  Array out = Array::zeros({n, d});
  for (Index r = 0; r < n; ++r) {
    double mu = 0.0;
    for (Index c = 0; c < d; ++c) mu += xv.at(r, c);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (Index c = 0; c < d; ++c) {
      const double t = xv.at(r, c) - mu;
      var += t * t;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (Index c = 0; c < d; ++c) out.at(r, c) = (xv.at(r, c) - mu) * inv * gv[c] + bv[c];
  }
  return push_node({x, gamma, beta}, std::move(out), [x, gamma, beta, eps, n, d](Tape& t, Index self) {
    const Array& g = t.grad_of(Var{self});
    const Array& xv = t.val(x);
    const Array& gv = t.val(gamma);
    Array* gx = t.grad_buf_if(x);
    Array* gg = t.grad_buf_if(gamma);
    Array* gb = t.grad_buf_if(beta);
    for (Index r = 0; r < n; ++r) {
      double mu = 0.0;
      for (Index c = 0; c < d; ++c) mu += xv.at(r, c);
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (Index c = 0; c < d; ++c) {
        const double u = xv.at(r, c) - mu;
        var += u * u;
      }
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + eps);
      double m1 = 0.0, m2 = 0.0;
      for (Index c = 0; c < d; ++c) {
        const double xhat = (xv.at(r, c) - mu) * inv;
        const double dxhat = g[r * d + c] * gv[c];
        m1 += dxhat;
        m2 += dxhat * xhat;
      }
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      for (Index c = 0; c < d; ++c) {
        const double xhat = (xv.at(r, c) - mu) * inv;
        const double dxhat = g[r * d + c] * gv[c];
        if (gx) (*gx)[r * d + c] += (dxhat - m1 - xhat * m2) * inv;
        if (gg) (*gg)[c] += g[r * d + c] * xhat;
        if (gb) (*gb)[c] += g[r * d + c];
      }
    }
  });
}

Var Tape::attention(Var q, Var k, Var v, std::vector<Index> limits, Index heads) {
  const Array& qv = val(q);
  const Array& kv = val(k);
  const Array& vv = val(v);
  check_arg(qv.rank() == 2 && kv.rank() == 2 && vv.rank() == 2, "attention: rank-2 inputs required");
  const Index nq = qv.rows(), d = qv.cols(), nk = kv.rows();
  check_arg(kv.cols() == d && vv.cols() == d && vv.rows() == nk, "attention: shape mismatch");
  check_arg(heads >= 1 && d % heads == 0, "attention: head count must divide width");
  check_arg(static_cast<Index>(limits.size()) == nq, "attention: one key limit per query row");
  for (Index i = 0; i < nq; ++i) {
    const Index lim = limits[static_cast<std::size_t>(i)];
    if (lim < 1 || lim > nk) throw ContractViolation("attention: key limit out of range");
  }
  const Index dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  Array out = Array::zeros({nq, d});
  // normalized weights, laid out [query][head][key]
  std::vector<double> w(static_cast<std::size_t>(nq * heads * nk), 0.0);
  std::vector<double> s(static_cast<std::size_t>(nk));
  for (Index i = 0; i < nq; ++i) {
    const Index lim = limits[static_cast<std::size_t>(i)];
    for (Index h = 0; h < heads; ++h) {
      const Index off = h * dh;
      for (Index j = 0; j < lim; ++j) {
        double dot = 0.0;
        for (Index c = 0; c < dh; ++c) dot += qv.at(i, off + c) * kv.at(j, off + c);
        s[static_cast<std::size_t>(j)] = dot * sc;
      }
      double m = s[0];
      for (Index j = 1; j < lim; ++j) m = std::max(m, s[static_cast<std::size_t>(j)]);
      double z = 0.0;
      for (Index j = 0; j < lim; ++j) {
        const double e = std::exp(s[static_cast<std::size_t>(j)] - m);
        s[static_cast<std::size_t>(j)] = e;
        z += e;
      }
      double* wrow = w.data() + (i * heads + h) * nk;
      for (Index j = 0; j < lim; ++j) {
        wrow[j] = s[static_cast<std::size_t>(j)] / z;
        for (Index c = 0; c < dh; ++c) out.at(i, off + c) += wrow[j] * vv.at(j, off + c);
      }
    }
  }
  return push_node(
      {q, k, v}, std::move(out),
      [q, k, v, limits = std::move(limits), heads, nq, nk, d, dh, sc, w = std::move(w)](
          Tape& t, Index self) {
        const Array& g = t.grad_of(Var{self});
        const Array& qv = t.val(q);
        const Array& kv = t.val(k);
        const Array& vv = t.val(v);
        Array* gq = t.grad_buf_if(q);
        Array* gk = t.grad_buf_if(k);
        Array* gv2 = t.grad_buf_if(v);
        std::vector<double> ds(static_cast<std::size_t>(nk));
        for (Index i = 0; i < nq; ++i) {
          const Index lim = limits[static_cast<std::size_t>(i)];
          for (Index h = 0; h < heads; ++h) {
            const Index off = h * dh;
            const double* wrow = w.data() + (i * heads + h) * nk;
            double dot = 0.0;
            for (Index j = 0; j < lim; ++j) {
              double e = 0.0;
              for (Index c = 0; c < dh; ++c) e += g[i * d + off + c] * vv.at(j, off + c);
              ds[static_cast<std::size_t>(j)] = e;
              dot += wrow[j] * e;
            }
            for (Index j = 0; j < lim; ++j) {
              const double dz = wrow[j] * (ds[static_cast<std::size_t>(j)] - dot);
              if (gq)
                for (Index c = 0; c < dh; ++c) (*gq)[i * d + off + c] += sc * dz * kv.at(j, off + c);
              if (gk)
                for (Index c = 0; c < dh; ++c) (*gk)[j * d + off + c] += sc * dz * qv.at(i, off + c);
              if (gv2)
                for (Index c = 0; c < dh; ++c) (*gv2)[j * d + off + c] += wrow[j] * g[i * d + off + c];
            }
          }
        }
      });
}

Var Tape::dropout(Var a, double rate, Rng& rng) {
  check_arg(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (rate == 0.0) return a;
  const Array& av = val(a);
  std::vector<char> keep(static_cast<std::size_t>(av.numel()));
  const double inv = 1.0 / (1.0 - rate);
  Array out = av;
  for (Index i = 0; i < av.numel(); ++i) {
    keep[static_cast<std::size_t>(i)] = rng.uniform() >= rate ? 1 : 0;
    out[i] = keep[static_cast<std::size_t>(i)] ? av[i] * inv : 0.0;
  }
  return push_node({a}, std::move(out), [a, keep = std::move(keep), inv](Tape& t, Index self) {
    const Array& g = t.grad_of(Var{self});
    if (Array* ga = t.grad_buf_if(a))
      for (Index i = 0; i < g.numel(); ++i)
        if (keep[static_cast<std::size_t>(i)]) (*ga)[i] += g[i] * inv;
  });
}

}  // namespace nast
