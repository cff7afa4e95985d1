#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dseg/layers.hpp"
#include "dseg/metrics.hpp"

namespace dseg {

// Records named activation shapes during a forward pass; used by shape
// tests and architecture introspection.
struct ActivationProbe {
  std::vector<std::pair<std::string, Shape>> shapes;
  void note(const std::string& name, const Shape& s) { shapes.emplace_back(name, s); }
  const Shape* find(const std::string& name) const {
    for (const auto& [n, s] : shapes)
      if (n == name) return &s;
    return nullptr;
  }
};

template <typename T>
struct ForwardCtx {
  Tape<T>* tape = nullptr;  // null -> pure inference
  bool training = false;    // enables dropout
  Rng* rng = nullptr;       // dropout draws; required when training
  ActivationProbe* probe = nullptr;
};

// An executable architecture instance: ordered named parameters plus a
// forward program mapping [N,1,128,128] -> [N,1,128,128] probabilities
// strictly inside (0,1).
template <typename T>
struct ModelGraph {
  std::string name;  // unet | ynet | tnet
  uint64_t seed = 0;
  std::vector<std::pair<std::string, Tensor<T>>> params;
  std::function<Tensor<T>(const Tensor<T>&, ForwardCtx<T>&)> forward_fn;
  std::string config_text;  // JSON architecture document embedded in checkpoints

  Tensor<T> forward(const Tensor<T>& x, ForwardCtx<T>& ctx) const { return forward_fn(x, ctx); }

  // Inference forward: no tape, no dropout.
  Tensor<T> predict(const Tensor<T>& x) const {
    ForwardCtx<T> ctx;
    return forward_fn(x, ctx);
  }

  Tensor<T>* find_param(const std::string& pname) {
    for (auto& [n, t] : params)
      if (n == pname) return &t;
    return nullptr;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [_, t] : params) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& [_, t] : params) t.zero_grad();
  }
};

template <typename T> ModelGraph<T> build_unet(uint64_t seed);
template <typename T> ModelGraph<T> build_ynet(uint64_t seed);
template <typename T> ModelGraph<T> build_tnet(uint64_t seed);
template <typename T> ModelGraph<T> build_model(const std::string& name, uint64_t seed);

// ---------------------------------------------------------------------------
// E-Net: convex-weighted ensemble over per-model probability maps.
// ---------------------------------------------------------------------------

struct EnsembleSpec {
  std::map<std::string, double> weights;  // model name -> convex weight
  double threshold = 0.5;                 // foreground iff probability > threshold
};

// Pixelwise convex combination of the maps named in spec.weights, then
// strict binarization at spec.threshold. All maps must share a shape and the
// weight keys must cover exactly the provided maps.
template <typename T>
Tensor<T> enet_predict(const std::map<std::string, Tensor<T>>& prob_maps, const EnsembleSpec& spec);

struct EnsembleSearchEntry {
  std::map<std::string, double> weights;
  double miou = 0.0;
};

struct EnsembleSearchResult {
  EnsembleSpec best;
  double best_miou = 0.0;
  std::vector<EnsembleSearchEntry> table;
};

// Exhaustive search over the convex weight grid (step over the simplex of
// the provided models); deterministic tie-break to the lexicographically
// smallest weight vector in sorted-model-name order.
template <typename T>
EnsembleSearchResult ensemble_weight_search(
    const std::map<std::string, std::vector<Tensor<T>>>& prob_maps_per_model,
    const std::vector<std::vector<uint8_t>>& truths, double grid_step, double threshold = 0.5);

}  // namespace dseg
