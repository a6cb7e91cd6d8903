#include "edif/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Core>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace edif::tensor {

void retain_freed_memory() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                              b.shape_str());
}

}  // namespace

Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> rule) {
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool needs = false;
    for (const Tensor* in : inputs) needs = needs || in->requires_grad();
    if (needs) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const Tensor* in : inputs) node->parents.push_back(in->node_ptr());
      node->backward = std::move(rule);
    }
  }
  return Tensor(std::move(node));
}

namespace {

Tensor make_variadic(std::size_t rows, std::size_t cols, std::vector<double> value, std::span<const Tensor> inputs,
                     std::function<void(Node&)> rule) {
  // Reuse the fixed-arity path for the node, then attach all inputs as parents.
  Tensor out = make_result(rows, cols, std::move(value), {}, nullptr);
  if (!g_grad_enabled) return out;
  bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  Node* node = out.node();
  node->requires_grad = true;
  for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
  node->backward = std::move(rule);
  return out;
}

}  // namespace

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
  if (values.size() != rows * cols) {
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) + " values for shape [" +
                                std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from(1, 1, {v}, requires_grad); }

std::string Tensor::shape_str() const {
  return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str());
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m);
  MatMap(out.data(), n, m).noalias() = ConstMatMap(a.values().data(), n, k) * ConstMatMap(b.values().data(), k, m);
  return make_result(n, m, std::move(out), {&a, &b}, [n, k, m](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const ConstMatMap g(self.grad.data(), n, m);
    if (na.requires_grad) {
      MatMap(na.grad_buffer().data(), n, k).noalias() += g * ConstMatMap(nb.value.data(), k, m).transpose();
    }
    if (nb.requires_grad) {
      MatMap(nb.grad_buffer().data(), k, m).noalias() += ConstMatMap(na.value.data(), n, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.at(i, j);
  return make_result(c, r, std::move(out), {&a}, [r, c](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
  if (!broadcast && (a.rows() != b.rows() || a.cols() != b.cols())) shape_error("add", a, b);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[broadcast ? j : i * c + j];
  return make_result(r, c, std::move(out), {&a, &b}, [r, c, broadcast](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      for (std::size_t i = 0; i < r * c; ++i) ga[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& gb = nb.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[broadcast ? j : i * c + j] += self.grad[i * c + j];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= s;
  return make_result(a.rows(), a.cols(), std::move(out), {&a}, [s](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  const std::size_t c = table.cols();
  std::vector<double> out(ids.size() * c);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= table.rows()) {
      throw std::invalid_argument("embedding: id " + std::to_string(ids[r]) + " outside table " +
                                  table.shape_str());
    }
    const auto src = table.values().subspan(static_cast<std::size_t>(ids[r]) * c, c);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result(ids.size(), c, std::move(out), {&table}, [idx = std::move(idx), c](Node& self) {
    auto& gt = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = gt.data() + static_cast<std::size_t>(idx[r]) * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += self.grad[r * c + j];
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c) shape_error("layer_norm", x, gain);
  if (bias.rows() != 1 || bias.cols() != c) shape_error("layer_norm", x, bias);
  std::vector<double> xhat(r * c), inv_std(r), out(r * c);
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xv[i * c + j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xv[i * c + j] - mean) * inv_std[i];
      out[i * c + j] = gv[j] * xhat[i * c + j] + bv[j];
    }
  }
  return make_result(r, c, std::move(out), {&x, &gain, &bias},
                     [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& nx = *self.parents[0];
                       Node& ng = *self.parents[1];
                       Node& nb = *self.parents[2];
                       const double* g = self.grad.data();
                       if (ng.requires_grad) {
                         auto& gg = ng.grad_buffer();
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
                       }
                       if (nb.requires_grad) {
                         auto& gb = nb.grad_buffer();
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                       }
                       if (nx.requires_grad) {
                         auto& gx = nx.grad_buffer();
                         const double inv_c = 1.0 / static_cast<double>(c);
                         for (std::size_t i = 0; i < r; ++i) {
                           double mean_d = 0.0, mean_dx = 0.0;
                           for (std::size_t j = 0; j < c; ++j) {
                             const double d = g[i * c + j] * ng.value[j];
                             mean_d += d;
                             mean_dx += d * xhat[i * c + j];
                           }
                           mean_d *= inv_c;
                           mean_dx *= inv_c;
                           for (std::size_t j = 0; j < c; ++j) {
                             const double d = g[i * c + j] * ng.value[j];
                             gx[i * c + j] += inv_std[i] * (d - mean_d - xhat[i * c + j] * mean_dx);
                           }
                         }
                       }
                     });
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const auto av = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, av[i * c + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(av[i * c + j] - mx);
      sum += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= sum;
  }
  std::vector<double> y = out;
  return make_result(r, c, std::move(out), {&a}, [r, c, y = std::move(y)](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(a.rows(), a.cols(), std::move(out), {&a}, [](Node& self) {
    Node& na = *self.parents[0];
    auto& ga = na.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (na.value[i] > 0.0) ga[i] += self.grad[i];
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rows() != r) shape_error("concat_cols", parts[0], p);
    widths.push_back(p.cols());
    c += p.cols();
  }
  std::vector<double> out(r * c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out[i * c + off + j] = p.at(i, j);
    off += p.cols();
  }
  return make_variadic(r, c, std::move(out), parts, [r, c, widths = std::move(widths)](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& np = *self.parents[k];
      if (np.requires_grad) {
        auto& gp = np.grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += self.grad[i * c + off + j];
      }
      off += widths[k];
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  std::vector<std::size_t> sizes;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.cols() != c) shape_error("concat_rows", parts[0], p);
    sizes.push_back(p.size());
    r += p.rows();
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return make_variadic(r, c, std::move(out), parts, [sizes = std::move(sizes)](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      Node& np = *self.parents[k];
      if (np.requires_grad) {
        auto& gp = np.grad_buffer();
        for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) {
    throw std::invalid_argument("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                ") outside " + a.shape_str());
  }
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.at(i, begin + j);
  return make_result(r, count, std::move(out), {&a}, [r, c, begin, count](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * c + begin + j] += self.grad[i * count + j];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) {
    throw std::invalid_argument("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                ") outside " + a.shape_str());
  }
  const std::size_t c = a.cols();
  const auto src = a.values().subspan(begin * c, count * c);
  std::vector<double> out(src.begin(), src.end());
  return make_result(count, c, std::move(out), {&a}, [begin, c](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[begin * c + i] += self.grad[i];
  });
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout probability must be below 1");
  std::vector<double> keep(a.size());
  std::vector<double> out(a.size());
  const double s = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < a.size(); ++i) {
    keep[i] = uniform01(rng) >= p ? s : 0.0;
    out[i] = a.values()[i] * keep[i];
  }
  return make_result(a.rows(), a.cols(), std::move(out), {&a}, [keep = std::move(keep)](Node& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += keep[i] * self.grad[i];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const unsigned char> mask) {
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r || mask.size() != r) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                                std::to_string(mask.size()) + " mask entries for logits " + logits.shape_str());
  }
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) return Tensor::scalar(0.0);

  const auto lv = logits.values();
  std::vector<double> probs(r * c, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
      throw std::invalid_argument("cross_entropy: target " + std::to_string(targets[i]) + " outside " +
                                  std::to_string(c) + " classes");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lv[i * c + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(lv[i * c + j] - mx);
      sum += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= sum;
    total += -(lv[i * c + static_cast<std::size_t>(targets[i])] - mx - std::log(sum));
  }
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<unsigned char> msk(mask.begin(), mask.end());
  return make_result(1, 1, {total * inv}, {&logits},
                     [r, c, inv, probs = std::move(probs), tgt = std::move(tgt), msk = std::move(msk)](Node& self) {
                       auto& gl = self.parents[0]->grad_buffer();
                       const double g = self.grad[0] * inv;
                       for (std::size_t i = 0; i < r; ++i) {
                         if (!msk[i]) continue;
                         for (std::size_t j = 0; j < c; ++j) gl[i * c + j] += g * probs[i * c + j];
                         gl[i * c + static_cast<std::size_t>(tgt[i])] -= g;
                       }
                     });
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + loss.shape_str());
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps, double floor) {
  for (auto& p : params) p.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.back().begin());
    p.zero_grad();
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max(floor, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

void adam_step(AdamState& state, std::span<Tensor> params) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam: parameter count changed");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k].size()) throw std::invalid_argument("adam: parameter shape changed");
    if (!params[k].has_grad()) throw std::invalid_argument("adam: parameter " + std::to_string(k) + " has no gradient");
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].values();
    auto grad = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
      values[i] -= state.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
    params[k].zero_grad();
  }
}

}  // namespace edif::tensor
