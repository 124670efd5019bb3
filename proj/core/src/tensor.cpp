#include "dfmed/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace dfmed {

namespace {

thread_local Precision g_precision = Precision::F32;
thread_local bool g_grad_enabled = true;

inline double q1(double v) {
  return g_precision == Precision::F32 ? static_cast<double>(static_cast<float>(v)) : v;
}

inline void quantize(std::vector<double>& v) {
  if (g_precision == Precision::F32) {
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  }
}

std::string shape_str(int r, int c) {
  std::ostringstream os;
  os << "[" << r << "," << c << "]";
  return os.str();
}

[[noreturn]] void shape_error(const std::string& op, int r1, int c1, int r2, int c2) {
  throw std::invalid_argument(op + ": shape mismatch " + shape_str(r1, c1) + " vs " +
                              shape_str(r2, c2));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    shape_error(op, a.rows(), a.cols(), b.rows(), b.cols());
}

// ---------------------------------------------------------------------------
// raw matrix kernels (row-major)
// ---------------------------------------------------------------------------

// C[m,n] = A[m,p] * B[p,n]; C must be zeroed.
void mm_nn(const double* A, const double* B, double* C, int m, int p, int n) {
  for (int i = 0; i < m; ++i) {
    double* c = C + static_cast<std::size_t>(i) * n;
    const double* a = A + static_cast<std::size_t>(i) * p;
    for (int l = 0; l < p; ++l) {
      double av = a[l];
      if (av == 0.0) continue;
      const double* b = B + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] = A[m,p] * B[n,p]^T. The dot product runs eight fixed-order
// accumulator chains so the compiler can vectorize without reassociating
// (results stay bit-reproducible).
void mm_nt(const double* A, const double* B, double* C, int m, int p, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * p;
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b = B + static_cast<std::size_t>(j) * p;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
      int l = 0;
      for (; l + 8 <= p; l += 8) {
        s0 += a[l] * b[l];
        s1 += a[l + 1] * b[l + 1];
        s2 += a[l + 2] * b[l + 2];
        s3 += a[l + 3] * b[l + 3];
        s4 += a[l + 4] * b[l + 4];
        s5 += a[l + 5] * b[l + 5];
        s6 += a[l + 6] * b[l + 6];
        s7 += a[l + 7] * b[l + 7];
      }
      double acc = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
      for (; l < p; ++l) acc += a[l] * b[l];
      c[j] = acc;
    }
  }
}

// C[p,n] = A[m,p]^T * B[m,n]; C must be zeroed.
void mm_tn(const double* A, const double* B, double* C, int m, int p, int n) {
  for (int l = 0; l < m; ++l) {
    const double* a = A + static_cast<std::size_t>(l) * p;
    const double* b = B + static_cast<std::size_t>(l) * n;
    for (int i = 0; i < p; ++i) {
      double av = a[i];
      if (av == 0.0) continue;
      double* c = C + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

using NodePtr = std::shared_ptr<detail::Node>;

/// Builds the output node; bind_backward is only invoked (and parents only
/// retained) when the result participates in the tape.
Tensor make_result(int rows, int cols, std::vector<double>&& value,
                   std::vector<NodePtr> parents,
                   const std::function<std::function<void()>(detail::Node*)>& bind_backward) {
  auto n = std::make_shared<detail::Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  quantize(n->value);
  bool rg = false;
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p->requires_grad) rg = true;
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backward = bind_backward(n.get());
  }
  return Tensor(n);
}

}  // namespace

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }
bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

namespace detail {

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

void Node::accumulate(const double* g, std::size_t n) {
  ensure_grad();
  if (g_precision == Precision::F32) {
    for (std::size_t i = 0; i < n; ++i)
      grad[i] = static_cast<double>(static_cast<float>(grad[i] + g[i]));
  } else {
    for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  return full(rows, cols, 0.0, requires_grad);
}

Tensor Tensor::full(int rows, int cols, double v, bool requires_grad) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("tensor: negative dims");
  auto n = std::make_shared<detail::Node>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(static_cast<std::size_t>(rows) * cols, q1(v));
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::from_data(int rows, int cols, std::vector<double> data, bool requires_grad) {
  if (static_cast<std::size_t>(rows) * cols != data.size())
    throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(rows, cols));
  auto n = std::make_shared<detail::Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(data);
  quantize(n->value);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return full(1, 1, v, requires_grad); }

Tensor Tensor::row(std::vector<double> v, bool requires_grad) {
  int c = static_cast<int>(v.size());
  return from_data(1, c, std::move(v), requires_grad);
}

double Tensor::at(int i, int j) const {
  if (i < 0 || i >= rows() || j < 0 || j >= cols())
    throw std::out_of_range("tensor: index (" + std::to_string(i) + "," + std::to_string(j) +
                            ") out of " + shape_str(rows(), cols()));
  return n_->value[static_cast<std::size_t>(i) * cols() + j];
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor is " + shape_str(rows(), cols()));
  return n_->value[0];
}

double Tensor::grad_at(int i, int j) const {
  if (n_->grad.empty()) return 0.0;
  return n_->grad[static_cast<std::size_t>(i) * cols() + j];
}

void Tensor::zero_grad() {
  if (n_) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

void Tensor::requantize() { quantize(n_->value); }

Tensor Tensor::detached() const {
  auto n = std::make_shared<detail::Node>();
  n->rows = rows();
  n->cols = cols();
  n->value = n_->value;
  return Tensor(n);
}

void Tensor::backward() {
  if (!n_ || size() != 1)
    throw std::invalid_argument("backward: loss must be a [1,1] scalar");
  if (!n_->requires_grad)
    throw std::runtime_error("backward: tensor does not require grad");

  // iterative post-order over the tape
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{n_.get(), 0}};
  visited.insert(n_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  n_->ensure_grad();
  n_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward();
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
  return make_result(a.rows(), a.cols(), std::move(v), {a.node(), b.node()},
                     [an = a.node(), bn = b.node()](detail::Node* out) {
                       return [out, an, bn]() {
                         if (an->requires_grad) an->accumulate(out->grad.data(), out->grad.size());
                         if (bn->requires_grad) bn->accumulate(out->grad.data(), out->grad.size());
                       };
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
  return make_result(a.rows(), a.cols(), std::move(v), {a.node(), b.node()},
                     [an = a.node(), bn = b.node()](detail::Node* out) {
                       return [out, an, bn]() {
                         if (an->requires_grad) an->accumulate(out->grad.data(), out->grad.size());
                         if (bn->requires_grad) {
                           std::vector<double> g(out->grad.size());
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] = -out->grad[i];
                           bn->accumulate(g.data(), g.size());
                         }
                       };
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
  return make_result(a.rows(), a.cols(), std::move(v), {a.node(), b.node()},
                     [an = a.node(), bn = b.node()](detail::Node* out) {
                       return [out, an, bn]() {
                         std::vector<double> g(out->grad.size());
                         if (an->requires_grad) {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] = out->grad[i] * bn->value[i];
                           an->accumulate(g.data(), g.size());
                         }
                         if (bn->requires_grad) {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] = out->grad[i] * an->value[i];
                           bn->accumulate(g.data(), g.size());
                         }
                       };
                     });
}

Tensor affine(const Tensor& x, double a, double b) {
  std::vector<double> v(x.values());
  for (auto& e : v) e = a * e + b;
  return make_result(x.rows(), x.cols(), std::move(v), {x.node()},
                     [xn = x.node(), a](detail::Node* out) {
                       return [out, xn, a]() {
                         std::vector<double> g(out->grad.size());
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] = a * out->grad[i];
                         xn->accumulate(g.data(), g.size());
                       };
                     });
}

Tensor scale(const Tensor& x, double a) { return affine(x, a, 0.0); }

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != x.cols())
    shape_error("add_rowvec", x.rows(), x.cols(), b.rows(), b.cols());
  std::vector<double> v(x.values());
  const auto& bv = b.values();
  int c = x.cols();
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < c; ++j) v[static_cast<std::size_t>(i) * c + j] += bv[j];
  return make_result(x.rows(), x.cols(), std::move(v), {x.node(), b.node()},
                     [xn = x.node(), bn = b.node(), c](detail::Node* out) {
                       return [out, xn, bn, c]() {
                         if (xn->requires_grad) xn->accumulate(out->grad.data(), out->grad.size());
                         if (bn->requires_grad) {
                           std::vector<double> g(static_cast<std::size_t>(c), 0.0);
                           int r = out->rows;
                           for (int i = 0; i < r; ++i)
                             for (int j = 0; j < c; ++j)
                               g[j] += out->grad[static_cast<std::size_t>(i) * c + j];
                           bn->accumulate(g.data(), g.size());
                         }
                       };
                     });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dims differ " + shape_str(a.rows(), a.cols()) +
                                " x " + shape_str(b.rows(), b.cols()));
  int m = a.rows(), p = a.cols(), n = b.cols();
  std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
  mm_nn(a.values().data(), b.values().data(), v.data(), m, p, n);
  return make_result(m, n, std::move(v), {a.node(), b.node()},
                     [an = a.node(), bn = b.node(), m, p, n](detail::Node* out) {
                       return [out, an, bn, m, p, n]() {
                         if (an->requires_grad) {
                           std::vector<double> g(static_cast<std::size_t>(m) * p, 0.0);
                           mm_nt(out->grad.data(), bn->value.data(), g.data(), m, n, p);
                           an->accumulate(g.data(), g.size());
                         }
                         if (bn->requires_grad) {
                           std::vector<double> g(static_cast<std::size_t>(p) * n, 0.0);
                           mm_tn(an->value.data(), out->grad.data(), g.data(), m, p, n);
                           bn->accumulate(g.data(), g.size());
                         }
                       };
                     });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("matmul_nt: inner dims differ " + shape_str(a.rows(), a.cols()) +
                                " x " + shape_str(b.rows(), b.cols()) + "^T");
  int m = a.rows(), p = a.cols(), n = b.rows();
  std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
  mm_nt(a.values().data(), b.values().data(), v.data(), m, p, n);
  return make_result(m, n, std::move(v), {a.node(), b.node()},
                     [an = a.node(), bn = b.node(), m, p, n](detail::Node* out) {
                       return [out, an, bn, m, p, n]() {
                         if (an->requires_grad) {
                           std::vector<double> g(static_cast<std::size_t>(m) * p, 0.0);
                           mm_nn(out->grad.data(), bn->value.data(), g.data(), m, n, p);
                           an->accumulate(g.data(), g.size());
                         }
                         if (bn->requires_grad) {
                           std::vector<double> g(static_cast<std::size_t>(n) * p, 0.0);
                           mm_tn(out->grad.data(), an->value.data(), g.data(), m, n, p);
                           bn->accumulate(g.data(), g.size());
                         }
                       };
                     });
}

Tensor outer_add(const Tensor& u, const Tensor& v) {
  if (u.cols() != 1 || v.cols() != 1)
    shape_error("outer_add", u.rows(), u.cols(), v.rows(), v.cols());
  int n = u.rows(), m = v.rows();
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out[static_cast<std::size_t>(i) * m + j] = u.values()[static_cast<std::size_t>(i)] +
                                                 v.values()[static_cast<std::size_t>(j)];
  return make_result(n, m, std::move(out), {u.node(), v.node()},
                     [un = u.node(), vn = v.node(), n, m](detail::Node* out_n) {
                       return [out_n, un, vn, n, m]() {
                         if (un->requires_grad) {
                           std::vector<double> g(static_cast<std::size_t>(n), 0.0);
                           for (int i = 0; i < n; ++i)
                             for (int j = 0; j < m; ++j)
                               g[static_cast<std::size_t>(i)] +=
                                   out_n->grad[static_cast<std::size_t>(i) * m + j];
                           un->accumulate(g.data(), g.size());
                         }
                         if (vn->requires_grad) {
                           std::vector<double> g(static_cast<std::size_t>(m), 0.0);
                           for (int i = 0; i < n; ++i)
                             for (int j = 0; j < m; ++j)
                               g[static_cast<std::size_t>(j)] +=
                                   out_n->grad[static_cast<std::size_t>(i) * m + j];
                           vn->accumulate(g.data(), g.size());
                         }
                       };
                     });
}

// ---------------------------------------------------------------------------
// structural
// ---------------------------------------------------------------------------

Tensor concat_cols(const std::vector<Tensor>& ts) {
  if (ts.empty()) throw std::invalid_argument("concat_cols: empty list");
  int r = ts[0].rows();
  int c = 0;
  for (const auto& t : ts) {
    if (t.rows() != r) shape_error("concat_cols", r, ts[0].cols(), t.rows(), t.cols());
    c += t.cols();
  }
  std::vector<double> v(static_cast<std::size_t>(r) * c);
  int off = 0;
  for (const auto& t : ts) {
    int tc = t.cols();
    for (int i = 0; i < r; ++i)
      std::copy_n(t.values().data() + static_cast<std::size_t>(i) * tc, tc,
                  v.data() + static_cast<std::size_t>(i) * c + off);
    off += tc;
  }
  std::vector<NodePtr> parents;
  for (const auto& t : ts) parents.push_back(t.node());
  return make_result(r, c, std::move(v), parents, [parents, r, c](detail::Node* out) {
    return [out, parents, r, c]() {
      int off = 0;
      for (const auto& p : parents) {
        int tc = p->cols;
        if (p->requires_grad) {
          std::vector<double> g(static_cast<std::size_t>(r) * tc);
          for (int i = 0; i < r; ++i)
            std::copy_n(out->grad.data() + static_cast<std::size_t>(i) * c + off, tc,
                        g.data() + static_cast<std::size_t>(i) * tc);
          p->accumulate(g.data(), g.size());
        }
        off += tc;
      }
    };
  });
}

Tensor concat_rows(const std::vector<Tensor>& ts) {
  if (ts.empty()) throw std::invalid_argument("concat_rows: empty list");
  int c = ts[0].cols();
  int r = 0;
  for (const auto& t : ts) {
    if (t.cols() != c) shape_error("concat_rows", ts[0].rows(), c, t.rows(), t.cols());
    r += t.rows();
  }
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(r) * c);
  for (const auto& t : ts) v.insert(v.end(), t.values().begin(), t.values().end());
  std::vector<NodePtr> parents;
  for (const auto& t : ts) parents.push_back(t.node());
  return make_result(r, c, std::move(v), parents, [parents](detail::Node* out) {
    return [out, parents]() {
      std::size_t off = 0;
      for (const auto& p : parents) {
        if (p->requires_grad) p->accumulate(out->grad.data() + off, p->size());
        off += p->size();
      }
    };
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  int c = x.cols();
  for (int i : idx)
    if (i < 0 || i >= x.rows())
      throw std::out_of_range("gather_rows: row " + std::to_string(i) + " out of " +
                              shape_str(x.rows(), x.cols()));
  std::vector<double> v(idx.size() * static_cast<std::size_t>(c));
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(x.values().data() + static_cast<std::size_t>(idx[k]) * c, c,
                v.data() + k * c);
  return make_result(static_cast<int>(idx.size()), c, std::move(v), {x.node()},
                     [xn = x.node(), idx, c](detail::Node* out) {
                       return [out, xn, idx, c]() {
                         std::vector<double> g(xn->size(), 0.0);
                         for (std::size_t k = 0; k < idx.size(); ++k)
                           for (int j = 0; j < c; ++j)
                             g[static_cast<std::size_t>(idx[k]) * c + j] +=
                                 out->grad[k * c + j];
                         xn->accumulate(g.data(), g.size());
                       };
                     });
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  if (c0 < 0 || c1 > x.cols() || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") of " + shape_str(x.rows(), x.cols()));
  int r = x.rows(), c = x.cols(), w = c1 - c0;
  std::vector<double> v(static_cast<std::size_t>(r) * w);
  for (int i = 0; i < r; ++i)
    std::copy_n(x.values().data() + static_cast<std::size_t>(i) * c + c0, w,
                v.data() + static_cast<std::size_t>(i) * w);
  return make_result(r, w, std::move(v), {x.node()},
                     [xn = x.node(), c0, w](detail::Node* out) {
                       return [out, xn, c0, w]() {
                         int r = out->rows, c = xn->cols;
                         std::vector<double> g(xn->size(), 0.0);
                         for (int i = 0; i < r; ++i)
                           for (int j = 0; j < w; ++j)
                             g[static_cast<std::size_t>(i) * c + c0 + j] =
                                 out->grad[static_cast<std::size_t>(i) * w + j];
                         xn->accumulate(g.data(), g.size());
                       };
                     });
}

Tensor reshape(const Tensor& x, int rows, int cols) {
  if (rows * cols != x.size())
    throw std::invalid_argument("reshape: size mismatch " + shape_str(x.rows(), x.cols()) +
                                " -> " + shape_str(rows, cols));
  std::vector<double> v(x.values());
  return make_result(rows, cols, std::move(v), {x.node()}, [xn = x.node()](detail::Node* out) {
    return [out, xn]() { xn->accumulate(out->grad.data(), out->grad.size()); };
  });
}

Tensor pick_per_row(const Tensor& x, const std::vector<int>& cols) {
  if (static_cast<int>(cols.size()) != x.rows())
    throw std::invalid_argument("pick_per_row: need one column per row");
  int c = x.cols();
  std::vector<double> v(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] < 0 || cols[i] >= c)
      throw std::out_of_range("pick_per_row: col " + std::to_string(cols[i]));
    v[i] = x.values()[i * c + cols[i]];
  }
  return make_result(static_cast<int>(cols.size()), 1, std::move(v), {x.node()},
                     [xn = x.node(), cols, c](detail::Node* out) {
                       return [out, xn, cols, c]() {
                         std::vector<double> g(xn->size(), 0.0);
                         for (std::size_t i = 0; i < cols.size(); ++i)
                           g[i * c + cols[i]] = out->grad[i];
                         xn->accumulate(g.data(), g.size());
                       };
                     });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double e : x.values()) s += e;
  return make_result(1, 1, {s}, {x.node()}, [xn = x.node()](detail::Node* out) {
    return [out, xn]() {
      std::vector<double> g(xn->size(), out->grad[0]);
      xn->accumulate(g.data(), g.size());
    };
  });
}

Tensor mean_all(const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean_all: empty tensor");
  double s = 0.0;
  for (double e : x.values()) s += e;
  double inv = 1.0 / x.size();
  return make_result(1, 1, {s * inv}, {x.node()}, [xn = x.node(), inv](detail::Node* out) {
    return [out, xn, inv]() {
      std::vector<double> g(xn->size(), out->grad[0] * inv);
      xn->accumulate(g.data(), g.size());
    };
  });
}

Tensor mean_rows_subset(const Tensor& x, const std::vector<int>& idx) {
  int c = x.cols();
  if (idx.empty()) return Tensor::zeros(1, c);
  for (int i : idx)
    if (i < 0 || i >= x.rows())
      throw std::out_of_range("mean_rows_subset: row " + std::to_string(i));
  std::vector<double> v(static_cast<std::size_t>(c), 0.0);
  for (int i : idx)
    for (int j = 0; j < c; ++j) v[j] += x.values()[static_cast<std::size_t>(i) * c + j];
  double inv = 1.0 / static_cast<double>(idx.size());
  for (auto& e : v) e *= inv;
  return make_result(1, c, std::move(v), {x.node()},
                     [xn = x.node(), idx, c, inv](detail::Node* out) {
                       return [out, xn, idx, c, inv]() {
                         std::vector<double> g(xn->size(), 0.0);
                         for (int i : idx)
                           for (int j = 0; j < c; ++j)
                             g[static_cast<std::size_t>(i) * c + j] += out->grad[j] * inv;
                         xn->accumulate(g.data(), g.size());
                       };
                     });
}

Tensor mean_rows(const Tensor& x) {
  std::vector<int> idx(x.rows());
  for (int i = 0; i < x.rows(); ++i) idx[i] = i;
  return mean_rows_subset(x, idx);
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd_factor_from_in_out) {
  std::vector<double> v(x.values());
  for (auto& e : v) e = fwd(e);
  return make_result(x.rows(), x.cols(), std::move(v), {x.node()},
                     [xn = x.node(), bwd_factor_from_in_out](detail::Node* out) {
                       return [out, xn, bwd_factor_from_in_out]() {
                         std::vector<double> g(out->grad.size());
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] = out->grad[i] *
                                  bwd_factor_from_in_out(xn->value[i], out->value[i]);
                         xn->accumulate(g.data(), g.size());
                       };
                     });
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double e) {
        // saturate rather than overflow
        if (e >= 0) return 1.0 / (1.0 + std::exp(-e));
        double z = std::exp(e);
        return z / (1.0 + z);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_t(const Tensor& x) {
  return unary_op(x, [](double e) { return std::tanh(e); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, [](double e) { return e > 0 ? e : 0.0; },
                  [](double e, double) { return e > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  return unary_op(x, [alpha](double e) { return e > 0 ? e : alpha * e; },
                  [alpha](double e, double) { return e > 0 ? 1.0 : alpha; });
}

Tensor elu(const Tensor& x, double alpha) {
  return unary_op(x, [alpha](double e) { return e > 0 ? e : alpha * std::expm1(e); },
                  [alpha](double e, double y) { return e > 0 ? 1.0 : y + alpha; });
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
  int r = x.rows(), c = x.cols();
  std::vector<double> v(x.values());
  if (axis == 1) {
    for (int i = 0; i < r; ++i) {
      double* row = v.data() + static_cast<std::size_t>(i) * c;
      double mx = row[0];
      for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double s = 0.0;
      for (int j = 0; j < c; ++j) {
        row[j] = std::exp(row[j] - mx);
        s += row[j];
      }
      for (int j = 0; j < c; ++j) row[j] /= s;
    }
  } else {
    for (int j = 0; j < c; ++j) {
      double mx = v[j];
      for (int i = 1; i < r; ++i) mx = std::max(mx, v[static_cast<std::size_t>(i) * c + j]);
      double s = 0.0;
      for (int i = 0; i < r; ++i) {
        auto& e = v[static_cast<std::size_t>(i) * c + j];
        e = std::exp(e - mx);
        s += e;
      }
      for (int i = 0; i < r; ++i) v[static_cast<std::size_t>(i) * c + j] /= s;
    }
  }
  return make_result(r, c, std::move(v), {x.node()},
                     [xn = x.node(), axis, r, c](detail::Node* out) {
                       return [out, xn, axis, r, c]() {
                         std::vector<double> g(out->grad.size());
                         if (axis == 1) {
                           for (int i = 0; i < r; ++i) {
                             const double* y = out->value.data() + static_cast<std::size_t>(i) * c;
                             const double* dy = out->grad.data() + static_cast<std::size_t>(i) * c;
                             double s = 0.0;
                             for (int j = 0; j < c; ++j) s += dy[j] * y[j];
                             for (int j = 0; j < c; ++j)
                               g[static_cast<std::size_t>(i) * c + j] = y[j] * (dy[j] - s);
                           }
                         } else {
                           for (int j = 0; j < c; ++j) {
                             double s = 0.0;
                             for (int i = 0; i < r; ++i) {
                               std::size_t k = static_cast<std::size_t>(i) * c + j;
                               s += out->grad[k] * out->value[k];
                             }
                             for (int i = 0; i < r; ++i) {
                               std::size_t k = static_cast<std::size_t>(i) * c + j;
                               g[k] = out->value[k] * (out->grad[k] - s);
                             }
                           }
                         }
                         xn->accumulate(g.data(), g.size());
                       };
                     });
}

Tensor log_softmax(const Tensor& x) {
  int r = x.rows(), c = x.cols();
  std::vector<double> v(x.values());
  for (int i = 0; i < r; ++i) {
    double* row = v.data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    double lse = mx + std::log(s);
    for (int j = 0; j < c; ++j) row[j] -= lse;
  }
  return make_result(r, c, std::move(v), {x.node()}, [xn = x.node(), r, c](detail::Node* out) {
    return [out, xn, r, c]() {
      std::vector<double> g(out->grad.size());
      for (int i = 0; i < r; ++i) {
        const double* y = out->value.data() + static_cast<std::size_t>(i) * c;
        const double* dy = out->grad.data() + static_cast<std::size_t>(i) * c;
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += dy[j];
        for (int j = 0; j < c; ++j)
          g[static_cast<std::size_t>(i) * c + j] = dy[j] - std::exp(y[j]) * s;
      }
      xn->accumulate(g.data(), g.size());
    };
  });
}

// ---------------------------------------------------------------------------
// layernorm
// ---------------------------------------------------------------------------

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  int r = x.rows(), c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c)
    throw std::invalid_argument("layernorm: gamma/beta must be [1," + std::to_string(c) + "]");
  std::vector<double> v(static_cast<std::size_t>(r) * c);
  std::vector<double> xhat(static_cast<std::size_t>(r) * c);
  std::vector<double> inv_std(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const double* row = x.values().data() + static_cast<std::size_t>(i) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= c;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < c; ++j) {
      double xh = (row[j] - mu) * is;
      xhat[static_cast<std::size_t>(i) * c + j] = xh;
      v[static_cast<std::size_t>(i) * c + j] = gamma.values()[j] * xh + beta.values()[j];
    }
  }
  return make_result(
      r, c, std::move(v), {x.node(), gamma.node(), beta.node()},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat = std::move(xhat),
       inv_std = std::move(inv_std), r, c](detail::Node* out) {
        return [out, xn, gn, bn, xhat, inv_std, r, c]() {
          if (gn->requires_grad) {
            std::vector<double> g(static_cast<std::size_t>(c), 0.0);
            for (int i = 0; i < r; ++i)
              for (int j = 0; j < c; ++j)
                g[j] += out->grad[static_cast<std::size_t>(i) * c + j] *
                        xhat[static_cast<std::size_t>(i) * c + j];
            gn->accumulate(g.data(), g.size());
          }
          if (bn->requires_grad) {
            std::vector<double> g(static_cast<std::size_t>(c), 0.0);
            for (int i = 0; i < r; ++i)
              for (int j = 0; j < c; ++j)
                g[j] += out->grad[static_cast<std::size_t>(i) * c + j];
            bn->accumulate(g.data(), g.size());
          }
          if (xn->requires_grad) {
            std::vector<double> g(static_cast<std::size_t>(r) * c);
            for (int i = 0; i < r; ++i) {
              const double* dy = out->grad.data() + static_cast<std::size_t>(i) * c;
              const double* xh = xhat.data() + static_cast<std::size_t>(i) * c;
              double m1 = 0.0, m2 = 0.0;
              for (int j = 0; j < c; ++j) {
                double dxh = dy[j] * gn->value[j];
                m1 += dxh;
                m2 += dxh * xh[j];
              }
              m1 /= c;
              m2 /= c;
              for (int j = 0; j < c; ++j) {
                double dxh = dy[j] * gn->value[j];
                g[static_cast<std::size_t>(i) * c + j] =
                    inv_std[static_cast<std::size_t>(i)] * (dxh - m1 - xh[j] * m2);
              }
            }
            xn->accumulate(g.data(), g.size());
          }
        };
      });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<double>& targets) {
  if (targets.size() != static_cast<std::size_t>(logits.size()))
    throw std::invalid_argument("bce: target count " + std::to_string(targets.size()) +
                                " vs logits " + std::to_string(logits.size()));
  const double clamp = 30.0;
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    double z = std::clamp(logits.values()[i], -clamp, clamp);
    double t = targets[i];
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  double n = static_cast<double>(targets.size());
  return make_result(1, 1, {total / n}, {logits.node()},
                     [ln = logits.node(), targets, n, clamp](detail::Node* out) {
                       return [out, ln, targets, n, clamp]() {
                         std::vector<double> g(targets.size(), 0.0);
                         for (std::size_t i = 0; i < targets.size(); ++i) {
                           double raw = ln->value[i];
                           if (raw < -clamp || raw > clamp) continue;
                           double s = 1.0 / (1.0 + std::exp(-raw));
                           g[i] = out->grad[0] * (s - targets[i]) / n;
                         }
                         ln->accumulate(g.data(), g.size());
                       };
                     });
}

// ---------------------------------------------------------------------------
// composite helpers
// ---------------------------------------------------------------------------

Tensor causal_mask(int n) {
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) v[static_cast<std::size_t>(i) * n + j] = -1e30;
  return Tensor::from_data(n, n, std::move(v));
}

Tensor scaled_dot_attention(const Tensor& Q, const Tensor& K, const Tensor& V, int heads,
                            const std::optional<Tensor>& mask) {
  if (Q.cols() != K.cols())
    throw std::invalid_argument("attention: query dim " + std::to_string(Q.cols()) +
                                " vs key dim " + std::to_string(K.cols()));
  if (K.rows() != V.rows())
    throw std::invalid_argument("attention: key count " + std::to_string(K.rows()) +
                                " vs value count " + std::to_string(V.rows()));
  if (heads < 1 || Q.cols() % heads != 0 || V.cols() % heads != 0)
    throw std::invalid_argument("attention: dims not divisible by heads");
  if (K.rows() == 0) return Tensor::zeros(Q.rows(), V.cols());

  auto one_head = [&mask](const Tensor& q, const Tensor& k, const Tensor& v) {
    Tensor s = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.cols())));
    if (mask.has_value()) s = add(s, *mask);
    return matmul(softmax(s, 1), v);
  };
  if (heads == 1) return one_head(Q, K, V);

  int dq = Q.cols() / heads, dv = V.cols() / heads;
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    outs.push_back(one_head(slice_cols(Q, h * dq, (h + 1) * dq),
                            slice_cols(K, h * dq, (h + 1) * dq),
                            slice_cols(V, h * dv, (h + 1) * dv)));
  }
  return concat_cols(outs);
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  return add_rowvec(matmul_nt(x, W), b);
}

Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p) {
  if (x.cols() != p.Wz.cols())
    throw std::invalid_argument("gru_cell: input dim " + std::to_string(x.cols()) +
                                " vs expected " + std::to_string(p.Wz.cols()));
  if (h_prev.cols() != p.Uz.cols())
    throw std::invalid_argument("gru_cell: hidden dim " + std::to_string(h_prev.cols()) +
                                " vs expected " + std::to_string(p.Uz.cols()));
  Tensor z = sigmoid(add_rowvec(add(matmul_nt(x, p.Wz), matmul_nt(h_prev, p.Uz)), p.bz));
  Tensor r = sigmoid(add_rowvec(add(matmul_nt(x, p.Wr), matmul_nt(h_prev, p.Ur)), p.br));
  Tensor cand =
      tanh_t(add_rowvec(add(matmul_nt(x, p.Wh), matmul_nt(mul(r, h_prev), p.Uh)), p.bh));
  return add(mul(affine(z, -1.0, 1.0), h_prev), mul(z, cand));
}

Tensor feed_forward(const Tensor& x, const FfnParams& p) {
  return linear(relu(linear(x, p.W1, p.b1)), p.W2, p.b2);
}

}  // namespace dfmed
