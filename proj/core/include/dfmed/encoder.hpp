#pragma once

#include <string>
#include <vector>

#include "dfmed/params.hpp"
#include "dfmed/tensor.hpp"

namespace dfmed {

/// Constant sinusoidal position rows [n, d].
Tensor sinusoidal_positions(int n, int d);

/// Post-LN transformer encoder stack over [L, d] token states. With zero
/// layers it is the identity (no positions added), so pooled outputs reduce
/// to plain token embeddings.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  static TransformerEncoder create(ParamStore& ps, const std::string& prefix, int dim,
                                   int layers, int heads, Rng& rng);
  /// Rebind to parameters previously created under the same prefix.
  static TransformerEncoder attach(const ParamStore& ps, const std::string& prefix, int dim,
                                   int layers, int heads);

  /// `causal` masks attention to the left context only, which makes every
  /// prefix's token states identical to encoding that prefix alone.
  Tensor forward(const Tensor& x, bool causal) const;

  int dim() const { return dim_; }
  int layers() const { return static_cast<int>(layers_.size()); }

 private:
  struct Layer {
    Tensor Wq, Wk, Wv, Wo;
    Tensor ln1_g, ln1_b;
    FfnParams ffn;
    Tensor ln2_g, ln2_b;
  };
  int dim_{0};
  int heads_{1};
  std::vector<Layer> layers_;
};

}  // namespace dfmed
