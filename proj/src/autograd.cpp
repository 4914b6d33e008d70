#include "mit/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "kernels.hpp"
#include "mit/errors.hpp"

namespace mit {

namespace {

void require_rank2(const Var& v, const char* op) {
  if (v.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(v.shape()));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// softplus(x) = log(1 + e^x), evaluated without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::leaf(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

double Var::item() const {
  if (node_->value.numel() != 1) {
    throw ShapeError("item(): tensor of shape " + shape_string(shape()) + " is not a scalar");
  }
  return node_->value[0];
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return Tensor(node_->value.shape(), node_->grad);
}

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool needs = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (root.value().numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got " + shape_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order without recursion limits.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root.node(), 0}};
  seen.insert(&root.node());
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
  for (Node* n : order) {
    if (n->grad.size() != n->value.numel()) n->grad.assign(n->value.numel(), 0.0);
  }
  root.node().grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

Var matmul(const Var& a, const Var& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner extents differ " + shape_string(a.shape()) + " · " + shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(n, m);
  kernels::gemm_nn(a.value().data(), b.value().data(), out.data(), n, k, m);
  return make_result(std::move(out), {a, b}, [n, k, m](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) kernels::gemm_nt(self.grad.data(), pb.value.data(), pa.grad.data(), n, m, k);
    if (pb.requires_grad) kernels::gemm_tn(pa.value.data(), self.grad.data(), pb.grad.data(), n, k, m);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner extents differ " + shape_string(a.shape()) + " · " +
                     shape_string(b.shape()) + "ᵀ");
  }
  Tensor out = Tensor::matrix(n, m);
  kernels::gemm_nt(a.value().data(), b.value().data(), out.data(), n, k, m);
  return make_result(std::move(out), {a, b}, [n, k, m](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) kernels::gemm_nn(self.grad.data(), pb.value.data(), pa.grad.data(), n, m, k);
    if (pb.requires_grad) kernels::gemm_tn(self.grad.data(), pa.value.data(), pb.grad.data(), n, m, k);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  require_rank2(a, "add_row");
  require_rank2(row, "add_row");
  const std::size_t n = a.rows(), m = a.cols();
  if (row.rows() != 1 || row.cols() != m) {
    throw ShapeError("add_row: bias " + shape_string(row.shape()) + " does not fit " + shape_string(a.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) += row.value()[j];
  return make_result(std::move(out), {a, row}, [n, m](Node& self) {
    Node& pa = *self.parents[0];
    Node& pr = *self.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < n * m; ++i) pa.grad[i] += self.grad[i];
    if (pr.requires_grad)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) pr.grad[j] += self.grad[i * m + j];
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    Node& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += s * self.grad[i];
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[i];
      if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (pa.value[i] > 0.0) pa.grad[i] += self.grad[i];
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t n = x.rows(), m = x.cols();
  if (gain.value().numel() != m || bias.value().numel() != m) {
    throw ShapeError("layer_norm: affine parameters must have " + std::to_string(m) + " entries");
  }
  Tensor out = Tensor::matrix(n, m);
  // normalized activations and per-row inverse std, kept for the backward pass
  auto xhat = std::make_shared<std::vector<double>>(n * m);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = x.value().row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < m; ++j) {
      const double h = (r[j] - mean) * is;
      (*xhat)[i * m + j] = h;
      out.at(i, j) = h * gain.value()[j] + bias.value()[j];
    }
  }
  return make_result(std::move(out), {x, gain, bias}, [n, m, xhat, inv_std](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    for (std::size_t i = 0; i < n; ++i) {
      const double* g = self.grad.data() + i * m;
      const double* h = xhat->data() + i * m;
      if (pg.requires_grad)
        for (std::size_t j = 0; j < m; ++j) pg.grad[j] += g[j] * h[j];
      if (pb.requires_grad)
        for (std::size_t j = 0; j < m; ++j) pb.grad[j] += g[j];
      if (px.requires_grad) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          const double dh = g[j] * pg.value[j];
          mean_dh += dh;
          mean_dh_h += dh * h[j];
        }
        mean_dh /= static_cast<double>(m);
        mean_dh_h /= static_cast<double>(m);
        for (std::size_t j = 0; j < m; ++j) {
          const double dh = g[j] * pg.value[j];
          px.grad[i * m + j] += (*inv_std)[i] * (dh - mean_dh - h[j] * mean_dh_h);
        }
      }
    }
  });
}

Var segment_mean(const Var& x, std::span<const std::size_t> group_of_row, std::size_t groups) {
  require_rank2(x, "segment_mean");
  const std::size_t n = x.rows(), m = x.cols();
  if (group_of_row.size() != n) {
    throw ShapeError("segment_mean: " + std::to_string(group_of_row.size()) + " group indices for " +
                     std::to_string(n) + " rows");
  }
  std::vector<std::size_t> counts(groups, 0);
  for (std::size_t g : group_of_row) {
    if (g >= groups) throw ShapeError("segment_mean: group index out of range");
    ++counts[g];
  }
  Tensor out = Tensor::matrix(groups, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + group_of_row[i] * m;
    const double* r = x.value().data() + i * m;
    for (std::size_t j = 0; j < m; ++j) o[j] += r[j];
  }
  for (std::size_t g = 0; g < groups; ++g) {
    if (counts[g] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[g]);
    for (std::size_t j = 0; j < m; ++j) out.at(g, j) *= inv;
  }
  auto rows = std::make_shared<std::vector<std::size_t>>(group_of_row.begin(), group_of_row.end());
  return make_result(std::move(out), {x}, [rows, counts = std::move(counts), m](Node& self) {
    Node& px = *self.parents[0];
    for (std::size_t i = 0; i < rows->size(); ++i) {
      const std::size_t g = (*rows)[i];
      const double inv = 1.0 / static_cast<double>(counts[g]);
      for (std::size_t j = 0; j < m; ++j) px.grad[i * m + j] += inv * self.grad[g * m + j];
    }
  });
}

Var row_means(const Var& x) {
  require_rank2(x, "row_means");
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : x.value().row(i)) s += v;
    out[i] = s / static_cast<double>(m);
  }
  return make_result(std::move(out), {x}, [n, m](Node& self) {
    Node& px = *self.parents[0];
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) px.grad[i * m + j] += inv * self.grad[i];
  });
}

Var col_means(const Var& x) {
  require_rank2(x, "col_means");
  const std::size_t n = x.rows(), m = x.cols();
  if (n == 0) throw ShapeError("col_means: no rows");
  Tensor out = Tensor::matrix(1, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += x.value().at(i, j);
  for (auto& v : out.values()) v /= static_cast<double>(n);
  return make_result(std::move(out), {x}, [n, m](Node& self) {
    Node& px = *self.parents[0];
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) px.grad[i * m + j] += inv * self.grad[j];
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  const std::size_t m = x.cols();
  if (begin > end || end > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     shape_string(x.shape()));
  }
  const auto first = x.value().values().begin() + static_cast<std::ptrdiff_t>(begin * m);
  Tensor out({end - begin, m}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>((end - begin) * m)));
  return make_result(std::move(out), {x}, [begin, m](Node& self) {
    Node& px = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[begin * m + i] += self.grad[i];
  });
}

Var concat_rows(const Var& a, const Var& b) {
  require_rank2(a, "concat_rows");
  require_rank2(b, "concat_rows");
  if (a.cols() != b.cols()) {
    throw ShapeError("concat_rows: " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  std::vector<double> data = a.value().values();
  data.insert(data.end(), b.value().values().begin(), b.value().values().end());
  const std::size_t split = a.value().numel();
  Tensor out({a.rows() + b.rows(), a.cols()}, std::move(data));
  return make_result(std::move(out), {a, b}, [split](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < split; ++i) pa.grad[i] += self.grad[i];
    if (pb.requires_grad)
      for (std::size_t i = split; i < self.grad.size(); ++i) pb.grad[i - split] += self.grad[i];
  });
}

Var mean_all(const Var& x) {
  const std::size_t n = x.value().numel();
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  Tensor out = Tensor::matrix(1, 1, s / static_cast<double>(n));
  return make_result(std::move(out), {x}, [n](Node& self) {
    Node& px = *self.parents[0];
    const double g = self.grad[0] / static_cast<double>(n);
    for (auto& v : px.grad) v += g;
  });
}

Var sum_scalars(std::span<const Var> terms) {
  double s = 0.0;
  for (const auto& t : terms) s += t.item();
  return make_result(Tensor::matrix(1, 1, s), std::vector<Var>(terms.begin(), terms.end()), [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->grad[0] += self.grad[0];
  });
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride) {
  if (in < kernel) return 0;
  return (in - kernel) / stride + 1;
}

Var im2col(const Var& x, std::size_t images, std::size_t height, std::size_t width, std::size_t kernel,
           std::size_t stride) {
  require_rank2(x, "im2col");
  if (x.rows() != images * height * width) {
    throw ShapeError("im2col: " + std::to_string(x.rows()) + " rows for " + std::to_string(images) + " maps of " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t ho = conv_out_extent(height, kernel, stride);
  const std::size_t wo = conv_out_extent(width, kernel, stride);
  if (ho == 0 || wo == 0) throw InputError("im2col: feature map smaller than the kernel");
  const std::size_t ch = x.cols();
  const std::size_t patch = kernel * kernel * ch;
  Tensor out = Tensor::matrix(images * ho * wo, patch);
  // source row of each output column block, reused by the backward pass
  auto source = std::make_shared<std::vector<std::size_t>>(images * ho * wo * kernel * kernel);
  std::size_t s = 0;
  for (std::size_t t = 0; t < images; ++t)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double* dst = out.data() + ((t * ho + oy) * wo + ox) * patch;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t src = (t * height + oy * stride + ky) * width + ox * stride + kx;
            (*source)[s++] = src;
            const double* r = x.value().data() + src * ch;
            std::copy(r, r + ch, dst + (ky * kernel + kx) * ch);
          }
      }
  return make_result(std::move(out), {x}, [source, ch](Node& self) {
    Node& px = *self.parents[0];
    for (std::size_t b = 0; b < source->size(); ++b) {
      double* dst = px.grad.data() + (*source)[b] * ch;
      const double* g = self.grad.data() + b * ch;
      for (std::size_t c = 0; c < ch; ++c) dst[c] += g[c];
    }
  });
}

Var bce_with_logits_mean(const Var& logits, std::span<const double> targets) {
  const std::size_t n = logits.value().numel();
  if (targets.size() != n) {
    throw ShapeError("bce_with_logits_mean: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " logits");
  }
  if (n == 0) throw ShapeError("bce_with_logits_mean: no logits");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = logits.value()[i];
    const double y = targets[i];
    total += y * softplus(-s) + (1.0 - y) * softplus(s);
  }
  std::vector<double> y(targets.begin(), targets.end());
  return make_result(Tensor::matrix(1, 1, total / static_cast<double>(n)), {logits},
                     [y = std::move(y), n](Node& self) {
                       Node& pl = *self.parents[0];
                       const double g = self.grad[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) pl.grad[i] += g * (sigmoid(pl.value[i]) - y[i]);
                     });
}

Var diagonal_cross_entropy(const Var& logits) {
  require_rank2(logits, "diagonal_cross_entropy");
  const std::size_t c = logits.rows();
  if (logits.cols() != c) throw ShapeError("diagonal_cross_entropy: block must be square");
  const Tensor& l = logits.value();
  // row-wise and column-wise softmax probabilities
  auto prow = std::make_shared<std::vector<double>>(c * c);
  auto pcol = std::make_shared<std::vector<double>>(c * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, l.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(l.at(i, j) - mx);
    for (std::size_t j = 0; j < c; ++j) (*prow)[i * c + j] = std::exp(l.at(i, j) - mx) / z;
    loss -= l.at(i, i) - mx - std::log(z);
  }
  for (std::size_t j = 0; j < c; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < c; ++i) mx = std::max(mx, l.at(i, j));
    double z = 0.0;
    for (std::size_t i = 0; i < c; ++i) z += std::exp(l.at(i, j) - mx);
    for (std::size_t i = 0; i < c; ++i) (*pcol)[i * c + j] = std::exp(l.at(i, j) - mx) / z;
    loss -= l.at(j, j) - mx - std::log(z);
  }
  return make_result(Tensor::matrix(1, 1, loss), {logits}, [c, prow, pcol](Node& self) {
    Node& pl = *self.parents[0];
    const double g = self.grad[0];
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double diag = i == j ? 2.0 : 0.0;
        pl.grad[i * c + j] += g * ((*prow)[i * c + j] + (*pcol)[i * c + j] - diag);
      }
  });
}

}  // namespace mit
