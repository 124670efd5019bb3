#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dfmed {

/// Global numeric precision. F32 is the training default: every op result
/// (and every gradient accumulation) is rounded through IEEE float, so all
/// stored values are exactly representable in f32 and checkpoints serialize
/// losslessly. F64 keeps full double precision and is what gradient checks
/// require. Switch with set_precision() or the DFMED_F64=1 environment
/// variable (read by the CLI at startup).
enum class Precision { F32, F64 };

Precision precision();
void set_precision(Precision p);

struct PrecisionGuard {
  explicit PrecisionGuard(Precision p) : saved_(precision()) { set_precision(p); }
  ~PrecisionGuard() { set_precision(saved_); }

 private:
  Precision saved_;
};

/// When grad mode is off, ops skip building the backward graph entirely.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard() : saved_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(saved_); }

 private:
  bool saved_;
};

namespace detail {

struct Node {
  int rows{0};
  int cols{0};
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad{false};
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  std::size_t size() const { return value.size(); }
  void ensure_grad();
  /// grad += g, rounded through the active precision.
  void accumulate(const double* g, std::size_t n);
};

}  // namespace detail

/// Dense 2-D tensor participating in a reverse-mode gradient tape.
///
/// Every tensor is a [rows, cols] matrix; scalars are [1,1] and vectors
/// are [1,d] rows. Copying a Tensor copies a handle to the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor full(int rows, int cols, double v, bool requires_grad = false);
  static Tensor from_data(int rows, int cols, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor row(std::vector<double> v, bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  int rows() const { return n_->rows; }
  int cols() const { return n_->cols; }
  int size() const { return static_cast<int>(n_->value.size()); }

  double at(int i, int j) const;
  double item() const;  // [1,1] only
  const std::vector<double>& values() const { return n_->value; }
  /// Mutable access to leaf data (parameter updates, test fixtures).
  std::vector<double>& values_mut() { return n_->value; }
  /// Re-round stored values under the active precision after mutation.
  void requantize();

  bool requires_grad() const { return n_->requires_grad; }
  /// Empty until backward() has touched this node.
  const std::vector<double>& grad() const { return n_->grad; }
  double grad_at(int i, int j) const;
  void zero_grad();

  /// Reverse-mode sweep from a [1,1] scalar.
  void backward();

  /// Value copy detached from the graph.
  Tensor detached() const;

  const std::shared_ptr<detail::Node>& node() const { return n_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> n_;
};

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a*x + b, scalars applied elementwise.
Tensor affine(const Tensor& x, double a, double b);
Tensor scale(const Tensor& x, double a);
/// x[n,c] + broadcast row b[1,c].
Tensor add_rowvec(const Tensor& x, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a × bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// out[i,j] = u[i,0] + v[j,0] for column vectors u [n,1], v [m,1].
Tensor outer_add(const Tensor& u, const Tensor& v);

Tensor concat_cols(const std::vector<Tensor>& ts);
Tensor concat_rows(const std::vector<Tensor>& ts);
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor reshape(const Tensor& x, int rows, int cols);
/// out[i] = x[i, cols[i]], shape [n,1].
Tensor pick_per_row(const Tensor& x, const std::vector<int>& cols);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// Mean over the given rows -> [1,c]. Empty index list yields zeros.
Tensor mean_rows_subset(const Tensor& x, const std::vector<int>& idx);
Tensor mean_rows(const Tensor& x);

Tensor sigmoid(const Tensor& x);
Tensor tanh_t(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double alpha);
Tensor elu(const Tensor& x, double alpha = 1.0);

/// Max-subtracted softmax along axis (1 = within each row, 0 = within each column).
Tensor softmax(const Tensor& x, int axis = 1);
/// Row-wise log-softmax, stable.
Tensor log_softmax(const Tensor& x);

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);

/// Binary cross entropy with logits, averaged over all elements.
/// Logits are clamped to |x| <= 30 before the sigmoid (gradient is zero
/// outside the clamp).
Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<double>& targets);

/// softmax(Q Kᵀ / sqrt(d_head)) V with optional head split and additive mask
/// [q_rows, k_rows] applied to every head's scores. An empty key set (K has
/// zero rows) yields a zero output.
Tensor scaled_dot_attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                            int heads = 1,
                            const std::optional<Tensor>& mask = std::nullopt);

/// x·Wᵀ + b with W stored [out, in].
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

struct GruParams {
  Tensor Wz, Uz, bz;
  Tensor Wr, Ur, br;
  Tensor Wh, Uh, bh;
};

/// Standard GRU cell: z,r gates, tanh candidate, convex update
/// h' = (1-z)*h + z*h~.
Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p);

struct FfnParams {
  Tensor W1, b1, W2, b2;
};

/// Two-layer feed-forward with ReLU between; hidden dim is W1's output dim.
Tensor feed_forward(const Tensor& x, const FfnParams& p);

/// Constant additive causal mask [n,n]: 0 on/below diagonal, -1e30 above.
Tensor causal_mask(int n);

}  // namespace dfmed
