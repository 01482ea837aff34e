#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfsm/matrix.hpp"
#include "cfsm/rng.hpp"
#include "cfsm/tape.hpp"

namespace cfsm::model {

/// Network shape: MLP feature extractor → CFS sigmoid layer → softmax heads.
struct ArchSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;  // extractor hidden widths
  std::size_t feature_dim = 0;      // d_F
  std::size_t cfs_dim = 0;          // d_C
  std::size_t source_classes = 0;   // C_S
  std::size_t target_classes = 0;   // C_T, 0 when there is no target head
  bool decoder = false;             // AE ablation head

  void validate() const;
  std::size_t parameter_count() const;
  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// Affine layer y = x Wᵀ + b, W is out×in, b is 1×out.
struct Layer {
  Matrix w;
  Matrix b;
};

struct ModelParams {
  ArchSpec arch;
  std::vector<Layer> extractor;
  Layer cfs;
  Layer source;
  std::optional<Layer> target;
  std::optional<Layer> decoder;

  /// Visits every parameter matrix in a fixed order with a stable name.
  void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
  void visit(const std::function<void(const std::string&, const Matrix&)>& fn) const;
  std::size_t parameter_count() const;
  bool all_finite() const;
  friend bool operator==(const ModelParams&, const ModelParams&);
};

/// Zero-initialised parameters with the given shape.
ModelParams zeros(const ArchSpec& arch);

/// Weights uniform in ±√(6/(fan_in+fan_out)), biases zero.
ModelParams initialise(const ArchSpec& arch, Rng& rng);

struct LayerVars {
  ad::Var w;
  ad::Var b;
};

/// Parameters registered as leaves on one tape.
struct BoundParams {
  std::vector<LayerVars> extractor;
  LayerVars cfs;
  LayerVars source;
  std::optional<LayerVars> target;
  std::optional<LayerVars> decoder;
};

BoundParams bind(ad::Tape& tape, const ModelParams& p);

/// Gradients of `bound` after a backward sweep, laid out like `shape`.
ModelParams collect_grads(const BoundParams& bound, const ModelParams& shape);

ad::Var affine(ad::Var x, const LayerVars& layer);

ad::Var feature_extract(ad::Var x, const BoundParams& p);

struct CfsOutput {
  ad::Var z;   // pre-activation, consumed by the classifiers
  ad::Var fc;  // sigmoid activations in (0,1)
};
CfsOutput cfs_forward(ad::Var f, const LayerVars& cfs);

ad::Var classify(ad::Var z, const LayerVars& head);

/// F̂ = F_C Vᵀ + c. Throws ConfigError without a decoder head.
ad::Var ae_reconstruct(ad::Var fc, const std::optional<LayerVars>& decoder);

/// Mean squared error against a stop-gradient copy of `f`.
ad::Var reconstruction_loss(ad::Var f_hat, ad::Var f);

/// Plain forward pass for evaluation.
struct ForwardValues {
  Matrix features;
  Matrix z;
  Matrix fc;
  Matrix source_logits;
  std::optional<Matrix> target_logits;
};
ForwardValues forward(const ModelParams& p, const Matrix& x);

/// Versioned JSON checkpoint. Doubles round-trip bit-exactly.
void save_checkpoint(const ModelParams& p, const std::string& path);
ModelParams load_checkpoint(const std::string& path);
std::string checkpoint_json(const ModelParams& p);
ModelParams checkpoint_from_json(const std::string& text);

}  // namespace cfsm::model
