#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "dcbpl/errors.hpp"
#include "dcbpl/rng.hpp"

namespace dcbpl::ag {

// Dense row-major matrix with reverse-mode autodiff. Scalars are 1x1.
// Values are immutable once an op has consumed them; optimizers mutate leaf
// tensors between steps via value_mut(), never mid-graph.
class Tensor {
 public:
  struct Node {
    int rows = 0, cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // lazily allocated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::size_t size() const { return value.size(); }
    std::vector<double>& ensure_grad() {
      if (grad.empty()) grad.assign(value.size(), 0.0);
      return grad;
    }
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(int rows, int cols, bool requires_grad = false) {
    return from_data(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0),
                     requires_grad);
  }

  static Tensor from_data(int rows, int cols, std::vector<double> data,
                          bool requires_grad = false) {
    if (data.size() != static_cast<std::size_t>(rows) * cols)
      throw DimensionError("data size " + std::to_string(data.size()) + " does not match shape (" +
                           std::to_string(rows) + "x" + std::to_string(cols) + ")");
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_data(1, 1, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& value_mut() { return node_->value; }
  double at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }
  double item() const {
    if (size() != 1) throw UsageError("item() requires a scalar tensor");
    return node_->value[0];
  }

  const std::vector<double>& grad() const { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->size(), 0.0);
  }

  std::shared_ptr<Node> node() const { return node_; }

  std::string shape_str() const {
    return "(" + std::to_string(rows()) + "x" + std::to_string(cols()) + ")";
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Tensor make_op(int rows, int cols, std::vector<double> value,
                      std::vector<Tensor> parents, std::function<void(Tensor::Node&)> backward) {
  auto out = Tensor::from_data(rows, cols, std::move(value));
  bool any_grad = false;
  for (const auto& p : parents) any_grad = any_grad || p.requires_grad();
  if (any_grad) {
    auto n = out.node();
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a, b}, [an, bn](Tensor::Node& out) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

// a (r x c) + bias row vector (1 x c), broadcast over rows.
inline Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw DimensionError("add_rowvec: shape mismatch " + a.shape_str() + " vs " +
                         bias.shape_str());
  std::vector<double> v(a.size());
  int r = a.rows(), c = a.cols();
  for (int i = 0; i < r; ++i)
    for (int k = 0; k < c; ++k)
      v[static_cast<std::size_t>(i) * c + k] = a.at(i, k) + bias.value()[k];
  auto an = a.node(), bn = bias.node();
  return detail::make_op(r, c, std::move(v), {a, bias}, [an, bn, r, c](Tensor::Node& out) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int k = 0; k < c; ++k) g[k] += out.grad[static_cast<std::size_t>(i) * c + k];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = s * a.value()[i];
  auto an = a.node();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a}, [an, s](Tensor::Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * out.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a, b}, [an, bn](Tensor::Node& out) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += bn->value[i] * out.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += an->value[i] * out.grad[i];
    }
  });
}

// Row-broadcast multiply: a (r x c) scaled per-column by gain (1 x c).
inline Tensor mul_rowvec(const Tensor& a, const Tensor& gain) {
  if (gain.rows() != 1 || gain.cols() != a.cols())
    throw DimensionError("mul_rowvec: shape mismatch " + a.shape_str() + " vs " +
                         gain.shape_str());
  std::vector<double> v(a.size());
  int r = a.rows(), c = a.cols();
  for (int i = 0; i < r; ++i)
    for (int k = 0; k < c; ++k)
      v[static_cast<std::size_t>(i) * c + k] = a.at(i, k) * gain.value()[k];
  auto an = a.node(), gn = gain.node();
  return detail::make_op(r, c, std::move(v), {a, gain}, [an, gn, r, c](Tensor::Node& out) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int k = 0; k < c; ++k) {
          std::size_t idx = static_cast<std::size_t>(i) * c + k;
          g[idx] += gn->value[k] * out.grad[idx];
        }
    }
    if (gn->requires_grad) {
      auto& g = gn->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int k = 0; k < c; ++k) {
          std::size_t idx = static_cast<std::size_t>(i) * c + k;
          g[k] += an->value[idx] * out.grad[idx];
        }
    }
  });
}

namespace detail {

// C += A * B with A (m x k), B (k x n); ikj order for locality.
inline void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ar = a + static_cast<std::size_t>(i) * k;
    double* cr = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = ar[p];
      if (av == 0.0) continue;
      const double* br = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// C += A * B^T with A (m x k), B (n x k).
inline void gemm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ar = a + static_cast<std::size_t>(i) * k;
    double* cr = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* br = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
      cr[j] += acc;
    }
  }
}

// C += A^T * B with A (k x m), B (k x n).
inline void gemm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* ar = a + static_cast<std::size_t>(p) * m;
    const double* br = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      double av = ar[i];
      if (av == 0.0) continue;
      double* cr = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
  detail::gemm_acc(a.value().data(), b.value().data(), v.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return detail::make_op(m, n, std::move(v), {a, b}, [an, bn, m, k, n](Tensor::Node& out) {
    if (an->requires_grad)  // dA += dC * B^T
      detail::gemm_nt_acc(out.grad.data(), bn->value.data(), an->ensure_grad().data(), m, n, k);
    if (bn->requires_grad)  // dB += A^T * dC
      detail::gemm_tn_acc(an->value.data(), out.grad.data(), bn->ensure_grad().data(), k, m, n);
  });
}

// a * b^T without materializing the transpose; b is (n x k).
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  int m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
  detail::gemm_nt_acc(a.value().data(), b.value().data(), v.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return detail::make_op(m, n, std::move(v), {a, b}, [an, bn, m, k, n](Tensor::Node& out) {
    if (an->requires_grad)  // dA += dC * B
      detail::gemm_acc(out.grad.data(), bn->value.data(), an->ensure_grad().data(), m, n, k);
    if (bn->requires_grad)  // dB += dC^T * A
      detail::gemm_tn_acc(out.grad.data(), an->value.data(), bn->ensure_grad().data(), n, m, k);
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
  auto an = a.node();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a}, [an](Tensor::Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (an->value[i] > 0.0) g[i] += out.grad[i];
  });
}

inline Tensor gelu(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double x = a.value()[i];
    v[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  }
  auto an = a.node();
  return detail::make_op(a.rows(), a.cols(), std::move(v), {a}, [an](Tensor::Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = an->value[i];
      double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      g[i] += (cdf + x * pdf) * out.grad[i];
    }
  });
}

// Row-wise softmax; max-subtracted for stability.
inline Tensor softmax_rows(const Tensor& a) {
  int r = a.rows(), c = a.cols();
  if (c < 1) throw DimensionError("softmax_rows: empty rows " + a.shape_str());
  std::vector<double> v(a.size());
  for (int i = 0; i < r; ++i) {
    const double* row = a.value().data() + static_cast<std::size_t>(i) * c;
    double* out = v.data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int k = 1; k < c; ++k) mx = std::max(mx, row[k]);
    double total = 0.0;
    for (int k = 0; k < c; ++k) {
      out[k] = std::exp(row[k] - mx);
      total += out[k];
    }
    for (int k = 0; k < c; ++k) out[k] /= total;
  }
  auto an = a.node();
  return detail::make_op(r, c, std::move(v), {a}, [an, r, c](Tensor::Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double* y = out.value.data() + static_cast<std::size_t>(i) * c;
      const double* dy = out.grad.data() + static_cast<std::size_t>(i) * c;
      double dot = 0.0;
      for (int k = 0; k < c; ++k) dot += dy[k] * y[k];
      double* gr = g.data() + static_cast<std::size_t>(i) * c;
      for (int k = 0; k < c; ++k) gr[k] += y[k] * (dy[k] - dot);
    }
  });
}

// Row-wise layer normalization without affine terms (gain/bias are separate
// broadcast ops so their gradients stay simple).
inline Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5) {
  int r = a.rows(), c = a.cols();
  std::vector<double> v(a.size());
  std::vector<double> inv_sd(r);
  for (int i = 0; i < r; ++i) {
    const double* row = a.value().data() + static_cast<std::size_t>(i) * c;
    double mean = 0.0;
    for (int k = 0; k < c; ++k) mean += row[k];
    mean /= c;
    double var = 0.0;
    for (int k = 0; k < c; ++k) var += (row[k] - mean) * (row[k] - mean);
    var /= c;
    inv_sd[i] = 1.0 / std::sqrt(var + eps);
    double* out = v.data() + static_cast<std::size_t>(i) * c;
    for (int k = 0; k < c; ++k) out[k] = (row[k] - mean) * inv_sd[i];
  }
  auto an = a.node();
  return detail::make_op(r, c, std::move(v), {a},
                         [an, r, c, inv_sd = std::move(inv_sd)](Tensor::Node& out) {
                           if (!an->requires_grad) return;
                           auto& g = an->ensure_grad();
                           for (int i = 0; i < r; ++i) {
                             const double* y = out.value.data() + static_cast<std::size_t>(i) * c;
                             const double* dy = out.grad.data() + static_cast<std::size_t>(i) * c;
                             double mean_dy = 0.0, mean_dyy = 0.0;
                             for (int k = 0; k < c; ++k) {
                               mean_dy += dy[k];
                               mean_dyy += dy[k] * y[k];
                             }
                             mean_dy /= c;
                             mean_dyy /= c;
                             double* gr = g.data() + static_cast<std::size_t>(i) * c;
                             for (int k = 0; k < c; ++k)
                               gr[k] += inv_sd[i] * (dy[k] - mean_dy - y[k] * mean_dyy);
                           }
                         });
}

// Gathers rows of `table` (vocab x d) at `indices` -> (|indices| x d).
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& indices) {
  int d = table.cols();
  int n = static_cast<int>(indices.size());
  for (int idx : indices)
    if (idx < 0 || idx >= table.rows())
      throw DimensionError("embedding_lookup: index " + std::to_string(idx) +
                           " out of range for table " + table.shape_str());
  std::vector<double> v(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k)
      v[static_cast<std::size_t>(i) * d + k] = table.at(indices[i], k);
  auto tn = table.node();
  return detail::make_op(n, d, std::move(v), {table}, [tn, indices, n, d](Tensor::Node& out) {
    if (!tn->requires_grad) return;
    auto& g = tn->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k)
        g[static_cast<std::size_t>(indices[i]) * d + k] +=
            out.grad[static_cast<std::size_t>(i) * d + k];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  int r = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r)
      throw DimensionError("concat_cols: row mismatch " + parts[0].shape_str() + " vs " +
                           p.shape_str());
    total += p.cols();
  }
  std::vector<double> v(static_cast<std::size_t>(r) * total);
  int offset = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < r; ++i)
      for (int k = 0; k < p.cols(); ++k)
        v[static_cast<std::size_t>(i) * total + offset + k] = p.at(i, k);
    offset += p.cols();
  }
  std::vector<std::shared_ptr<Tensor::Node>> nodes;
  std::vector<int> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.cols());
  }
  return detail::make_op(r, total, std::move(v), parts,
                         [nodes, widths, r, total](Tensor::Node& out) {
                           int offset = 0;
                           for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                             int w = widths[pi];
                             if (nodes[pi]->requires_grad) {
                               auto& g = nodes[pi]->ensure_grad();
                               for (int i = 0; i < r; ++i)
                                 for (int k = 0; k < w; ++k)
                                   g[static_cast<std::size_t>(i) * w + k] +=
                                       out.grad[static_cast<std::size_t>(i) * total + offset + k];
                             }
                             offset += w;
                           }
                         });
}

inline Tensor slice_rows(const Tensor& a, int row0, int row1) {
  if (row0 < 0 || row1 > a.rows() || row0 >= row1)
    throw DimensionError("slice_rows: bad range [" + std::to_string(row0) + "," +
                         std::to_string(row1) + ") for " + a.shape_str());
  int c = a.cols(), n = row1 - row0;
  std::vector<double> v(a.value().begin() + static_cast<std::size_t>(row0) * c,
                        a.value().begin() + static_cast<std::size_t>(row1) * c);
  auto an = a.node();
  return detail::make_op(n, c, std::move(v), {a}, [an, row0, n, c](Tensor::Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k)
        g[static_cast<std::size_t>(row0 + i) * c + k] += out.grad[static_cast<std::size_t>(i) * c + k];
  });
}

inline Tensor sum_all(const Tensor& a) {
  double total = 0.0;
  for (double x : a.value()) total += x;
  auto an = a.node();
  return detail::make_op(1, 1, {total}, {a}, [an](Tensor::Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (auto& gi : g) gi += out.grad[0];
  });
}

inline Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / a.size()); }

// Mean cross-entropy of `targets[i]` under softmax(logits row rows[i]).
// Fused with softmax via log-sum-exp; backward is (p - onehot) / n.
inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& rows,
                                 const std::vector<int>& targets) {
  if (rows.size() != targets.size() || rows.empty())
    throw UsageError("cross_entropy_rows: rows/targets size mismatch or empty");
  int c = logits.cols();
  double loss = 0.0;
  std::vector<double> log_z(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= logits.rows() || targets[i] < 0 || targets[i] >= c)
      throw DimensionError("cross_entropy_rows: index out of range for " + logits.shape_str());
    const double* row = logits.value().data() + static_cast<std::size_t>(rows[i]) * c;
    double mx = row[0];
    for (int k = 1; k < c; ++k) mx = std::max(mx, row[k]);
    double total = 0.0;
    for (int k = 0; k < c; ++k) total += std::exp(row[k] - mx);
    log_z[i] = mx + std::log(total);
    loss += log_z[i] - row[targets[i]];
  }
  loss /= static_cast<double>(rows.size());
  auto ln = logits.node();
  return detail::make_op(
      1, 1, {loss}, {logits}, [ln, rows, targets, c, log_z = std::move(log_z)](Tensor::Node& out) {
        if (!ln->requires_grad) return;
        auto& g = ln->ensure_grad();
        double w = out.grad[0] / static_cast<double>(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const double* row = ln->value.data() + static_cast<std::size_t>(rows[i]) * c;
          double* gr = g.data() + static_cast<std::size_t>(rows[i]) * c;
          for (int k = 0; k < c; ++k) gr[k] += w * std::exp(row[k] - log_z[i]);
          gr[targets[i]] -= w;
        }
      });
}

// Reverse-mode sweep from a scalar loss. Gradients of every reachable node
// are reset first, then accumulated by sum over all paths.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw UsageError("backward: loss must be a scalar tensor");
  using NodePtr = std::shared_ptr<Tensor::Node>;
  std::vector<NodePtr> order;
  std::unordered_set<Tensor::Node*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next_parent] = stack.back();
    if (next_parent < node->parents.size()) {
      auto parent = node->parents[next_parent++];
      if (seen.insert(parent.get()).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto& n : order) {
    n->ensure_grad();
    std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

// Central-difference gradient check. Probes up to max_coords coordinates per
// parameter (all when max_coords <= 0); returns the max relative error with
// denominator max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                         std::vector<Tensor>& params, double eps, int max_coords = -1,
                         std::uint64_t seed = 0) {
  Tensor loss = f(params);
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.push_back(p.grad());

  rng::Stream stream(seed, 0x6ec, 0);
  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::vector<std::size_t> coords(p.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords > 0 && coords.size() > static_cast<std::size_t>(max_coords)) {
      stream.shuffle(coords);
      coords.resize(max_coords);
    }
    for (std::size_t ci : coords) {
      double saved = p.value_mut()[ci];
      p.value_mut()[ci] = saved + eps;
      double up = f(params).item();
      p.value_mut()[ci] = saved - eps;
      double down = f(params).item();
      p.value_mut()[ci] = saved;
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic[pi][ci];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace dcbpl::ag
