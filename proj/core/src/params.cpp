#include "dfmed/params.hpp"

#include <cmath>
#include <stdexcept>

namespace dfmed {

Tensor ParamStore::insert(const std::string& name, Tensor t) {
  auto [it, fresh] = params_.emplace(name, t);
  if (!fresh) throw std::invalid_argument("param already exists: " + name);
  return it->second;
}

Tensor ParamStore::xavier(const std::string& name, int out, int in, Rng& rng) {
  double limit = std::sqrt(6.0 / (in + out));
  std::vector<double> v(static_cast<std::size_t>(out) * in);
  for (auto& e : v) e = rng.uniform(-limit, limit);
  return insert(name, Tensor::from_data(out, in, std::move(v), true));
}

Tensor ParamStore::zeros(const std::string& name, int rows, int cols) {
  return insert(name, Tensor::zeros(rows, cols, true));
}

Tensor ParamStore::gaussian(const std::string& name, int rows, int cols, double stddev,
                            Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (auto& e : v) e = rng.normal(0.0, stddev);
  return insert(name, Tensor::from_data(rows, cols, std::move(v), true));
}

Tensor ParamStore::constant(const std::string& name, int rows, int cols, double v) {
  return insert(name, Tensor::full(rows, cols, v, true));
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no such param: " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& [name, t] : params_)
    for (double g : t.grad()) s += g * g;
  return std::sqrt(s);
}

std::map<std::string, std::vector<double>> ParamStore::snapshot() const {
  std::map<std::string, std::vector<double>> snap;
  for (const auto& [name, t] : params_) snap[name] = t.values();
  return snap;
}

void ParamStore::restore(const std::map<std::string, std::vector<double>>& snap) {
  for (auto& [name, t] : params_) {
    auto it = snap.find(name);
    if (it == snap.end()) throw std::invalid_argument("snapshot missing param: " + name);
    if (it->second.size() != t.values().size())
      throw std::invalid_argument("snapshot size mismatch for " + name);
    t.values_mut() = it->second;
    t.requantize();
  }
}

double grad_check(const std::function<Tensor()>& f, ParamStore& params, double eps) {
  PrecisionGuard f64(Precision::F64);

  params.zero_grad();
  Tensor loss = f();
  if (!std::isfinite(loss.item()))
    throw std::runtime_error("grad_check: non-finite loss " + std::to_string(loss.item()));
  loss.backward();

  std::map<std::string, std::vector<double>> analytic;
  for (const auto& [name, t] : params.items()) {
    analytic[name] = t.grad();
    if (analytic[name].empty()) analytic[name].assign(t.values().size(), 0.0);
  }

  double max_rel = 0.0;
  for (auto& [name, t] : params.items()) {
    auto& data = const_cast<Tensor&>(t).values_mut();
    for (std::size_t i = 0; i < data.size(); ++i) {
      double saved = data[i];
      data[i] = saved + eps;
      double up = f().item();
      data[i] = saved - eps;
      double down = f().item();
      data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw std::runtime_error("grad_check: non-finite loss while perturbing " + name);
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic[name][i];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace dfmed
