#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dfmed/rng.hpp"
#include "dfmed/tensor.hpp"

namespace dfmed {

/// Named trainable tensors with deterministic (sorted-name) iteration order.
class ParamStore {
 public:
  /// Xavier-uniform weight [out, in].
  Tensor xavier(const std::string& name, int out, int in, Rng& rng);
  /// Zero-initialized parameter (biases, gates).
  Tensor zeros(const std::string& name, int rows, int cols);
  /// Gaussian-initialized parameter (embedding tables), N(0, stddev^2).
  Tensor gaussian(const std::string& name, int rows, int cols, double stddev, Rng& rng);
  /// Constant fill.
  Tensor constant(const std::string& name, int rows, int cols, double v);

  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Tensor>& items() const { return params_; }
  std::size_t count() const { return params_.size(); }

  void zero_grad();
  /// Global L2 norm over all gradients.
  double grad_norm() const;

  /// Deep value copy (detached) and restore, used for checkpoint selection.
  std::map<std::string, std::vector<double>> snapshot() const;
  void restore(const std::map<std::string, std::vector<double>>& snap);

 private:
  Tensor insert(const std::string& name, Tensor t);
  std::map<std::string, Tensor> params_;
};

/// Central-difference gradient check: runs f's backward once, then compares
/// every parameter gradient against (f(θ+ε)-f(θ-ε))/2ε. Returns the max
/// relative error with denominator max(|analytic|, |numeric|, 1e-8).
/// Temporarily switches to F64 precision; f must be deterministic.
double grad_check(const std::function<Tensor()>& f, ParamStore& params, double eps = 1e-4);

}  // namespace dfmed
