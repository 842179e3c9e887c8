#pragma once

// Tape-free reverse-mode differentiation over Tensor values.
//
// Every op returns a Var holding its forward value and, when gradients are
// enabled and some input requires them, a closure that scatters the incoming
// gradient into its parents. backward() walks the graph once in reverse
// topological order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "avq/error.hpp"
#include "avq/kernels.hpp"
#include "avq/tensor.hpp"

namespace avq {

struct Node {
  Tensor value;
  Tensor grad;  // materialized on first accumulation
  bool requires_grad = false;
  bool backpropagated = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
};

class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var parameter(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  static Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return Var(std::move(n));
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  // Gradient, or zeros when nothing reached this node.
  Tensor grad() const { return has_grad() ? node_->grad : Tensor(value().shape()); }
  void zero_grad() { node_->grad = Tensor(); }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& shared() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make_op(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  if (GradMode::enabled())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    n->requires_grad = true;
    for (const auto& in : inputs) n->parents.push_back(in.shared());
    n->backward_fn = std::move(bw);
  }
  return Var(std::move(n));
}

inline void accumulate(Node* target, std::span<const float> g) {
  if (!target->requires_grad) return;
  auto dst = target->grad_buffer().data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

inline bool is_suffix(const Shape& suffix, const Shape& full) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

}  // namespace detail

// Populates gradients on every node reachable from the scalar `loss`.
inline void backward(const Var& loss) {
  require_dims(loss.defined() && loss.value().size() == 1, "backward() needs a scalar loss");
  Node* root = loss.node();
  require(!root->backpropagated, ErrorKind::numeric, "backward() called twice on the same graph");
  if (!root->requires_grad) {
    root->backpropagated = true;
    return;
  }

  enum class Mark { visiting, done };
  std::unordered_map<Node*, Mark> marks;
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  marks[root] = Mark::visiting;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (!p->requires_grad) continue;
      auto it = marks.find(p);
      if (it == marks.end()) {
        marks[p] = Mark::visiting;
        stack.emplace_back(p, 0);
      } else {
        require(it->second == Mark::done, ErrorKind::numeric, "cycle in differentiation graph");
      }
    } else {
      marks[node] = Mark::done;
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  root->backpropagated = true;
}

inline Var detach(const Var& x) { return Var::constant(x.value()); }

// a[...,K] * w[K,N] -> [...,N]
inline Var matmul(const Var& a, const Var& w) {
  const auto& av = a.value();
  const auto& wv = w.value();
  require_dims(wv.rank() == 2, "matmul rhs must be rank 2, got " + shape_str(wv.shape()));
  require_dims(av.rank() >= 1 && av.cols() == wv.dim(0),
               "matmul inner dimensions disagree: " + shape_str(av.shape()) + " x " + shape_str(wv.shape()));
  const std::size_t m = av.rows(), k = wv.dim(0), n = wv.dim(1);
  Shape out_shape = av.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  kernels::gemm_nn(av.data(), wv.data(), out.data(), m, k, n);
  Node* an = a.node();
  Node* wn = w.node();
  return detail::make_op(std::move(out), {a, w}, [an, wn, m, k, n](Node& self) {
    auto dy = self.grad.data();
    if (an->requires_grad) kernels::gemm_nt_acc(dy, wn->value.data(), an->grad_buffer().data(), m, n, k);
    if (wn->requires_grad) kernels::gemm_tn_acc(an->value.data(), dy, wn->grad_buffer().data(), m, k, n);
  });
}

inline Var add(const Var& a, const Var& b) {
  require_dims(a.shape() == b.shape(), "add shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  Node* an = a.node();
  Node* bn = b.node();
  return detail::make_op(std::move(out), {a, b}, [an, bn](Node& self) {
    detail::accumulate(an, self.grad.data());
    detail::accumulate(bn, self.grad.data());
  });
}

// a + b where b's shape is a trailing suffix of a's (bias over the last dims).
inline Var add_bias(const Var& a, const Var& b) {
  require_dims(detail::is_suffix(b.shape(), a.shape()),
               "bias shape " + shape_str(b.shape()) + " is not a suffix of " + shape_str(a.shape()));
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  const std::size_t period = bv.size();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i % period];
  Node* an = a.node();
  Node* bn = b.node();
  return detail::make_op(std::move(out), {a, b}, [an, bn, period](Node& self) {
    auto dy = self.grad.data();
    detail::accumulate(an, dy);
    if (bn->requires_grad) {
      std::vector<double> acc(period, 0.0);
      for (std::size_t i = 0; i < dy.size(); ++i) acc[i % period] += dy[i];
      auto db = bn->grad_buffer().data();
      for (std::size_t j = 0; j < period; ++j) db[j] += static_cast<float>(acc[j]);
    }
  });
}

inline Var mul_scalar(const Var& a, float c) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= c;
  Node* an = a.node();
  return detail::make_op(std::move(out), {a}, [an, c](Node& self) {
    if (!an->requires_grad) return;
    auto dy = self.grad.data();
    auto da = an->grad_buffer().data();
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += c * dy[i];
  });
}

// a * s where s is a one-element Var.
inline Var scale_by(const Var& a, const Var& s) {
  require_dims(s.value().size() == 1, "scale_by expects a scalar factor");
  const float sv = s.value()[0];
  Tensor out = a.value();
  for (auto& v : out.data()) v *= sv;
  Node* an = a.node();
  Node* sn = s.node();
  return detail::make_op(std::move(out), {a, s}, [an, sn](Node& self) {
    auto dy = self.grad.data();
    const float sv = sn->value[0];
    if (an->requires_grad) {
      auto da = an->grad_buffer().data();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += sv * dy[i];
    }
    if (sn->requires_grad) {
      auto av = an->value.data();
      double acc = 0.0;
      for (std::size_t i = 0; i < dy.size(); ++i) acc += static_cast<double>(av[i]) * dy[i];
      sn->grad_buffer()[0] += static_cast<float>(acc);
    }
  });
}

inline Var tanh_act(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = static_cast<float>(std::tanh(static_cast<double>(v)));
  Node* an = a.node();
  return detail::make_op(std::move(out), {a}, [an](Node& self) {
    if (!an->requires_grad) return;
    auto dy = self.grad.data();
    auto y = self.value.data();
    auto da = an->grad_buffer().data();
    for (std::size_t i = 0; i < dy.size(); ++i)
      da[i] += static_cast<float>((1.0 - static_cast<double>(y[i]) * y[i]) * dy[i]);
  });
}

// tanh of a one-element Var.
inline Var tanh_scalar(const Var& a) {
  require_dims(a.value().size() == 1, "tanh_scalar expects a scalar");
  return tanh_act(a);
}

// Exact (erf) GELU.
inline Var gelu_act(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = static_cast<float>(kernels::gelu(v));
  Node* an = a.node();
  return detail::make_op(std::move(out), {a}, [an](Node& self) {
    if (!an->requires_grad) return;
    auto dy = self.grad.data();
    auto x = an->value.data();
    auto da = an->grad_buffer().data();
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += static_cast<float>(kernels::gelu_grad(x[i]) * dy[i]);
  });
}

inline constexpr double kLayerNormEps = 1e-5;

inline Var layernorm(const Var& x, const Var& gain, const Var& bias, double eps = kLayerNormEps) {
  const auto& xv = x.value();
  const std::size_t c = xv.cols();
  require_dims(c >= 1 && gain.shape() == Shape{c} && bias.shape() == Shape{c},
               "layernorm affine parameters must have shape [" + std::to_string(c) + "]");
  require(eps > 0, ErrorKind::config, "layernorm eps must be positive");
  const std::size_t rows = xv.rows();
  Tensor out(xv.shape());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  auto g = gain.value().data();
  auto b = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = xv.row(r);
    const auto mom = kernels::row_moments(row, eps);
    inv_std[r] = mom.inv_std;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mom.mean) * mom.inv_std;
      xhat[r * c + j] = h;
      out[r * c + j] = static_cast<float>(h * g[j] + b[j]);
    }
  }
  Node* xn = x.node();
  Node* gn = gain.node();
  Node* bn = bias.node();
  return detail::make_op(
      std::move(out), {x, gain, bias},
      [xn, gn, bn, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        auto dy = self.grad.data();
        auto g = gn->value.data();
        if (gn->requires_grad || bn->requires_grad) {
          std::vector<double> dg(c, 0.0), db(c, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) {
              dg[j] += dy[r * c + j] * xhat[r * c + j];
              db[j] += dy[r * c + j];
            }
          if (gn->requires_grad) {
            auto d = gn->grad_buffer().data();
            for (std::size_t j = 0; j < c; ++j) d[j] += static_cast<float>(dg[j]);
          }
          if (bn->requires_grad) {
            auto d = bn->grad_buffer().data();
            for (std::size_t j = 0; j < c; ++j) d[j] += static_cast<float>(db[j]);
          }
        }
        if (!xn->requires_grad) return;
        auto dx = xn->grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double dh = static_cast<double>(dy[r * c + j]) * g[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * c + j];
          }
          mean_dh /= static_cast<double>(c);
          mean_dh_h /= static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j) {
            const double dh = static_cast<double>(dy[r * c + j]) * g[j];
            dx[r * c + j] += static_cast<float>(inv_std[r] * (dh - mean_dh - xhat[r * c + j] * mean_dh_h));
          }
        }
      });
}

inline Var softmax_rows(const Var& x) {
  Tensor out = x.value();
  const std::size_t n = out.cols();
  kernels::softmax_rows(out.data(), n);
  Node* xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn, n](Node& self) {
    if (!xn->requires_grad) return;
    auto dy = self.grad.data();
    auto y = self.value.data();
    auto dx = xn->grad_buffer().data();
    for (std::size_t r = 0; r < y.size() / n; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(dy[r * n + j]) * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j)
        dx[r * n + j] += static_cast<float>(y[r * n + j] * (dy[r * n + j] - s));
    }
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (float v : a.value().data()) s += v;
  Node* an = a.node();
  return detail::make_op(Tensor::scalar(static_cast<float>(s)), {a}, [an](Node& self) {
    if (!an->requires_grad) return;
    const float g = self.grad[0];
    for (auto& v : an->grad_buffer().data()) v += g;
  });
}

// Mean over all elements of (a - target)^2.
inline Var mse(const Var& a, const Tensor& target) {
  require_dims(a.shape() == target.shape(), "mse shape mismatch");
  const auto av = a.value().data();
  const auto tv = target.data();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - tv[i];
    s += d * d;
  }
  const double count = static_cast<double>(av.size());
  Node* an = a.node();
  return detail::make_op(Tensor::scalar(static_cast<float>(s / count)), {a}, [an, target, count](Node& self) {
    if (!an->requires_grad) return;
    const double g = self.grad[0];
    auto av = an->value.data();
    auto tv = target.data();
    auto da = an->grad_buffer().data();
    for (std::size_t i = 0; i < da.size(); ++i)
      da[i] += static_cast<float>(2.0 * (static_cast<double>(av[i]) - tv[i]) / count * g);
  });
}

// Mean over the batch of -log softmax(logits)[label].
inline Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const auto& lv = logits.value();
  require_dims(lv.rank() == 2 && lv.dim(0) == labels.size(), "cross_entropy expects logits [B,classes] and B labels");
  const std::size_t b = lv.dim(0), k = lv.dim(1);
  for (int y : labels)
    require_dims(y >= 0 && static_cast<std::size_t>(y) < k,
                 "label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
  Tensor prob = lv;
  kernels::softmax_rows(prob.data(), k);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    // log-sum-exp directly for accuracy
    auto row = lv.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double se = 0.0;
    for (float v : row) se += std::exp(static_cast<double>(v) - mx);
    loss += (mx + std::log(se)) - row[static_cast<std::size_t>(labels[i])];
  }
  loss /= static_cast<double>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  Node* ln = logits.node();
  return detail::make_op(Tensor::scalar(static_cast<float>(loss)), {logits},
                         [ln, prob = std::move(prob), lab = std::move(lab), b, k](Node& self) {
                           if (!ln->requires_grad) return;
                           const double g = self.grad[0] / static_cast<double>(b);
                           auto d = ln->grad_buffer().data();
                           for (std::size_t i = 0; i < b; ++i)
                             for (std::size_t j = 0; j < k; ++j) {
                               const double t = (static_cast<int>(j) == lab[i]) ? 1.0 : 0.0;
                               d[i * k + j] += static_cast<float>((prob[i * k + j] - t) * g);
                             }
                         });
}

// Multi-head scaled dot-product self-attention core on [B,N,C] projections.
inline Var attention_core(const Var& q, const Var& k, const Var& v, std::size_t heads) {
  const auto& qv = q.value();
  require_dims(qv.rank() == 3 && k.shape() == qv.shape() && v.shape() == qv.shape(),
               "attention_core expects matching [B,N,C] inputs");
  const std::size_t bsz = qv.dim(0), n = qv.dim(1), c = qv.dim(2);
  require_dims(heads >= 1 && c % heads == 0, "heads must divide channel count");
  const std::size_t d = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const auto kv = k.value().data();
  const auto vv = v.value().data();
  Tensor out(qv.shape());
  // probs[b][h][i][j]
  std::vector<float> probs(bsz * heads * n * n);
  std::vector<double> acc(d);
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      float* p = probs.data() + (b * heads + h) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const float* qi = qv.data().data() + (b * n + i) * c + h * d;
        for (std::size_t j = 0; j < n; ++j) {
          const float* kj = kv.data() + (b * n + j) * c + h * d;
          double s = 0.0;
          for (std::size_t t = 0; t < d; ++t) s += static_cast<double>(qi[t]) * kj[t];
          p[i * n + j] = static_cast<float>(s * scale);
        }
      }
      kernels::softmax_rows(std::span<float>(p, n * n), n);
      for (std::size_t i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
          const double w = p[i * n + j];
          const float* vj = vv.data() + (b * n + j) * c + h * d;
          for (std::size_t t = 0; t < d; ++t) acc[t] += w * vj[t];
        }
        float* o = out.data().data() + (b * n + i) * c + h * d;
        for (std::size_t t = 0; t < d; ++t) o[t] = static_cast<float>(acc[t]);
      }
    }
  Node* qn = q.node();
  Node* kn = k.node();
  Node* vn = v.node();
  return detail::make_op(
      std::move(out), {q, k, v},
      [qn, kn, vn, bsz, n, c, heads, d, scale, probs = std::move(probs)](Node& self) {
        auto dy = self.grad.data();
        auto qv = qn->value.data();
        auto kv = kn->value.data();
        auto vv = vn->value.data();
        float* dq = qn->requires_grad ? qn->grad_buffer().data().data() : nullptr;
        float* dk = kn->requires_grad ? kn->grad_buffer().data().data() : nullptr;
        float* dv = vn->requires_grad ? vn->grad_buffer().data().data() : nullptr;
        std::vector<double> ds(n * n);
        for (std::size_t b = 0; b < bsz; ++b)
          for (std::size_t h = 0; h < heads; ++h) {
            const float* p = probs.data() + (b * heads + h) * n * n;
            auto at = [&](std::size_t row, std::size_t t) { return (b * n + row) * c + h * d + t; };
            // dP = dO V^T, dV = P^T dO
            for (std::size_t i = 0; i < n; ++i) {
              double rowdot = 0.0;
              for (std::size_t j = 0; j < n; ++j) {
                double dp = 0.0;
                for (std::size_t t = 0; t < d; ++t) dp += static_cast<double>(dy[at(i, t)]) * vv[at(j, t)];
                ds[i * n + j] = dp;
                rowdot += dp * p[i * n + j];
              }
              for (std::size_t j = 0; j < n; ++j) ds[i * n + j] = p[i * n + j] * (ds[i * n + j] - rowdot);
            }
            if (dv)
              for (std::size_t j = 0; j < n; ++j)
                for (std::size_t t = 0; t < d; ++t) {
                  double s = 0.0;
                  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(p[i * n + j]) * dy[at(i, t)];
                  dv[at(j, t)] += static_cast<float>(s);
                }
            if (dq)
              for (std::size_t i = 0; i < n; ++i)
                for (std::size_t t = 0; t < d; ++t) {
                  double s = 0.0;
                  for (std::size_t j = 0; j < n; ++j) s += ds[i * n + j] * kv[at(j, t)];
                  dq[at(i, t)] += static_cast<float>(s * scale);
                }
            if (dk)
              for (std::size_t j = 0; j < n; ++j)
                for (std::size_t t = 0; t < d; ++t) {
                  double s = 0.0;
                  for (std::size_t i = 0; i < n; ++i) s += ds[i * n + j] * qv[at(i, t)];
                  dk[at(j, t)] += static_cast<float>(s * scale);
                }
          }
      });
}

// x[B,N,C] -> x[:, token, :]
inline Var select_token(const Var& x, std::size_t token) {
  const auto& xv = x.value();
  require_dims(xv.rank() == 3 && token < xv.dim(1), "select_token index out of range");
  const std::size_t b = xv.dim(0), n = xv.dim(1), c = xv.dim(2);
  Tensor out({b, c});
  for (std::size_t i = 0; i < b; ++i)
    std::copy_n(xv.data().begin() + (i * n + token) * c, c, out.data().begin() + i * c);
  Node* xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn, b, n, c, token](Node& self) {
    if (!xn->requires_grad) return;
    auto dx = xn->grad_buffer().data();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[(i * n + token) * c + j] += self.grad[i * c + j];
  });
}

// Prepends a shared [C] token to every sequence of x[B,P,C].
inline Var prepend_token(const Var& token, const Var& x) {
  const auto& xv = x.value();
  require_dims(xv.rank() == 3 && token.shape() == Shape{xv.dim(2)}, "prepend_token shape mismatch");
  const std::size_t b = xv.dim(0), p = xv.dim(1), c = xv.dim(2);
  Tensor out({b, p + 1, c});
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(token.value().data().begin(), c, out.data().begin() + i * (p + 1) * c);
    std::copy_n(xv.data().begin() + i * p * c, p * c, out.data().begin() + (i * (p + 1) + 1) * c);
  }
  Node* tn = token.node();
  Node* xn = x.node();
  return detail::make_op(std::move(out), {token, x}, [tn, xn, b, p, c](Node& self) {
    auto dy = self.grad.data();
    if (tn->requires_grad) {
      auto dt = tn->grad_buffer().data();
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) dt[j] += dy[i * (p + 1) * c + j];
    }
    if (xn->requires_grad) {
      auto dx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < p * c; ++j) dx[i * p * c + j] += dy[(i * (p + 1) + 1) * c + j];
    }
  });
}

// Forward value is `replacement`; backward hands the gradient to x unchanged.
inline Var straight_through(const Var& x, Tensor replacement) {
  require_dims(x.shape() == replacement.shape(), "straight_through shape mismatch");
  Node* xn = x.node();
  return detail::make_op(std::move(replacement), {x},
                         [xn](Node& self) { detail::accumulate(xn, self.grad.data()); });
}

// beta * sum((z - sg(q))^2) / tokens, tokens = z.rows().
inline Var commitment(const Var& z, const Tensor& quantized, float beta) {
  require_dims(z.shape() == quantized.shape(), "commitment shape mismatch " + shape_str(z.shape()) + " vs " +
                                                    shape_str(quantized.shape()));
  const auto zv = z.value().data();
  const auto qv = quantized.data();
  double s = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const double d = static_cast<double>(zv[i]) - qv[i];
    s += d * d;
  }
  const double tokens = static_cast<double>(z.value().rows());
  Node* zn = z.node();
  return detail::make_op(Tensor::scalar(static_cast<float>(beta * s / tokens)), {z},
                         [zn, quantized, beta, tokens](Node& self) {
                           if (!zn->requires_grad) return;
                           const double g = self.grad[0] * 2.0 * beta / tokens;
                           auto zv = zn->value.data();
                           auto qv = quantized.data();
                           auto dz = zn->grad_buffer().data();
                           for (std::size_t i = 0; i < dz.size(); ++i)
                             dz[i] += static_cast<float>((static_cast<double>(zv[i]) - qv[i]) * g);
                         });
}

}  // namespace avq
