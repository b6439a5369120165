#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "sdcnet/batchnorm.hpp"
#include "sdcnet/conv.hpp"
#include "sdcnet/layers.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

// Weight: conv / FC weights (weight decay applies).
// Norm:   batch-norm gamma / beta.
// Bias:   FC bias.
enum class ParamKind { Weight, Norm, Bias };

template <Scalar T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  ParamKind kind;
};

// Non-trainable state that still has to survive a checkpoint.
template <Scalar T>
struct BufferRef {
  std::string name;
  Tensor<T>* value;
};

template <Scalar T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

// Gradients keyed by parameter name, in parameter-visit order.
template <Scalar T>
class GradientSet {
 public:
  void add(std::string name, Tensor<T> grad) {
    entries_.push_back({std::move(name), std::move(grad)});
  }

  void append(GradientSet&& other) {
    for (auto& e : other.entries_) entries_.push_back(std::move(e));
    other.entries_.clear();
  }

  [[nodiscard]] const Tensor<T>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.value;
    return nullptr;
  }

  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] const NamedTensor<T>& operator[](std::size_t i) const { return entries_[i]; }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }

 private:
  std::vector<NamedTensor<T>> entries_;
};

template <Scalar T>
void collect_params(ConvLayer<T>& layer, const std::string& prefix,
                    std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &layer.weight, ParamKind::Weight});
  if (layer.spec.bias) out.push_back({prefix + ".bias", &layer.bias, ParamKind::Bias});
}

template <Scalar T>
void collect_params(BatchNormLayer<T>& layer, const std::string& prefix,
                    std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".gamma", &layer.gamma, ParamKind::Norm});
  out.push_back({prefix + ".beta", &layer.beta, ParamKind::Norm});
}

template <Scalar T>
void collect_params(LinearLayer<T>& layer, const std::string& prefix,
                    std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &layer.weight, ParamKind::Weight});
  out.push_back({prefix + ".bias", &layer.bias, ParamKind::Bias});
}

template <Scalar T>
void collect_buffers(BatchNormLayer<T>& layer, const std::string& prefix,
                     std::vector<BufferRef<T>>& out) {
  out.push_back({prefix + ".running_mean", &layer.running_mean});
  out.push_back({prefix + ".running_var", &layer.running_var});
}

template <Scalar T>
std::size_t scalar_count(const std::vector<ParamRef<T>>& params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.value->size();
  return total;
}

}  // namespace sdcnet
