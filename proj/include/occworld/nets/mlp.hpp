// SPDX-License-Identifier: Apache-2.0
#pragma once

// Named parameter tables and fully connected networks.

#include <cmath>
#include <string>
#include <vector>

#include "occworld/autodiff/ops.hpp"
#include "occworld/core/rng.hpp"

namespace occworld::nets {

using ad::Shape;
using ad::Tensor;

/// Ordered table of named trainable tensors. Tensors share their nodes with
/// the owning modules, so updates through the table are visible there.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  void add(const std::string& name, Tensor<T> t) {
    if (find(name)) throw UsageError("duplicate parameter name '" + name + "'");
    entries_.push_back({name, std::move(t)});
  }

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e.tensor;
    }
    return nullptr;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  /// Marks every tensor trainable or frozen.
  void set_trainable(bool on) {
    for (auto& e : entries_) e.tensor.set_requires_grad(on);
  }

  bool all_finite() const {
    for (const auto& e : entries_) {
      for (T v : e.tensor.values()) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
};

enum class Activation { identity, relu, softplus, sigmoid, tanh };

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return ad::relu(x);
    case Activation::softplus: return ad::softplus(x);
    case Activation::sigmoid: return ad::sigmoid(x);
    case Activation::tanh: return ad::tanh(x);
  }
  return x;
}

/// Stack of affine layers; layer i maps widths[i] -> widths[i+1] and applies
/// activations[i]. Weights are stored [in, out], biases [1, out].
template <typename T>
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::vector<std::size_t> widths, std::vector<Activation> activations, Rng& rng,
      bool zero_output = false)
      : widths_(std::move(widths)), activations_(std::move(activations)) {
    if (widths_.size() < 2) throw UsageError("an MLP needs at least an input and an output width");
    if (activations_.size() != widths_.size() - 1) {
      throw UsageError(detail::concat("MLP with ", widths_.size() - 1, " layers given ",
                                      activations_.size(), " activations"));
    }
    for (auto w : widths_) {
      if (w == 0) throw UsageError("MLP widths must be positive");
    }
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const auto in = widths_[l], out = widths_[l + 1];
      const bool zero = zero_output && l + 2 == widths_.size();
      std::vector<T> w(in * out, T(0));
      if (!zero) {
        // Glorot-uniform
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        for (auto& x : w) x = static_cast<T>(rng.uniform(-limit, limit));
      }
      weights_.push_back(Tensor<T>::parameter({in, out}, std::move(w)));
      biases_.push_back(Tensor<T>::parameter({1, out}, std::vector<T>(out, T(0))));
    }
  }

  /// Hidden layers share one activation; the output layer has its own.
  static Mlp make(const std::vector<std::size_t>& widths, Rng& rng,
                  Activation hidden = Activation::relu,
                  Activation output = Activation::identity, bool zero_output = false) {
    std::vector<Activation> acts(widths.size() > 1 ? widths.size() - 1 : 0, hidden);
    if (!acts.empty()) acts.back() = output;
    return Mlp(widths, acts, rng, zero_output);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != in_dim()) {
      throw ShapeError(detail::concat("MLP expects [N, ", in_dim(), "] input, got ",
                                      ad::to_string(x.shape())));
    }
    Tensor<T> h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = activate(ad::add(ad::matmul(h, weights_[l]), biases_[l]), activations_[l]);
    }
    return h;
  }

  std::size_t in_dim() const { return widths_.front(); }
  std::size_t out_dim() const { return widths_.back(); }
  std::size_t layer_count() const { return weights_.size(); }
  const std::vector<std::size_t>& widths() const { return widths_; }
  const std::vector<Activation>& activations() const { return activations_; }
  std::vector<Tensor<T>>& weights() { return weights_; }
  std::vector<Tensor<T>>& biases() { return biases_; }
  const std::vector<Tensor<T>>& weights() const { return weights_; }
  const std::vector<Tensor<T>>& biases() const { return biases_; }

  /// Sum over layers of in*out + out.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      n += widths_[l] * widths_[l + 1] + widths_[l + 1];
    }
    return n;
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      set.add(prefix + ".w" + std::to_string(l), weights_[l]);
      set.add(prefix + ".b" + std::to_string(l), biases_[l]);
    }
  }

 private:
  std::vector<std::size_t> widths_;
  std::vector<Activation> activations_;
  std::vector<Tensor<T>> weights_;
  std::vector<Tensor<T>> biases_;
};

}  // namespace occworld::nets
