#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "sra/arch.hpp"
#include "sra/tensor.hpp"

namespace sra {

/// Canonical within-layer order: weight, bias, bn-scale, bn-shift, bn-mean, bn-var.
enum class ParamRole { weight = 0, bias = 1, bn_scale = 2, bn_shift = 3, bn_mean = 4, bn_var = 5 };

std::string_view to_string(ParamRole role);
ParamRole parse_param_role(std::string_view name);

inline bool is_trainable(ParamRole role) {
  return role != ParamRole::bn_mean && role != ParamRole::bn_var;
}

struct ParamInfo {
  Index layer = 0;
  ParamRole role = ParamRole::weight;
  Shape shape;

  std::string name() const;
  Index size() const { return shape_size(shape); }
};

/// Names and shapes of every parameter tensor in canonical order. Determined
/// by the architecture alone.
std::vector<ParamInfo> param_layout(const Arch& arch, bool trainable_only = false);

template <typename Scalar>
struct Param {
  ParamInfo info;
  Tensor<Scalar> value;
};

/// Ordered, keyed parameter tensors. Also used for gradients (trainable
/// entries only).
template <typename Scalar>
class ParamSet {
 public:
  ParamSet() = default;

  static ParamSet zeros(const Arch& arch, bool trainable_only = false) {
    ParamSet set;
    for (auto& info : param_layout(arch, trainable_only)) {
      Tensor<Scalar> t(info.shape);
      set.entries_.push_back({std::move(info), std::move(t)});
    }
    return set;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  Param<Scalar>& operator[](std::size_t i) { return entries_[i]; }
  const Param<Scalar>& operator[](std::size_t i) const { return entries_[i]; }

  /// Index of (layer, role) or -1.
  Index find(Index layer, ParamRole role) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].info.layer == layer && entries_[i].info.role == role) {
        return static_cast<Index>(i);
      }
    }
    return -1;
  }

  Tensor<Scalar>& at(Index layer, ParamRole role) { return entries_[checked(layer, role)].value; }
  const Tensor<Scalar>& at(Index layer, ParamRole role) const {
    return entries_[checked(layer, role)].value;
  }
  bool contains(Index layer, ParamRole role) const { return find(layer, role) >= 0; }

  Index element_count() const {
    Index n = 0;
    for (const auto& p : entries_) n += p.value.size();
    return n;
  }

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& p : entries_) out.push_back({p.info, p.value.template cast<Other>()});
    return out;
  }

  void push_back(Param<Scalar> p) { entries_.push_back(std::move(p)); }

  bool all_finite() const {
    for (const auto& p : entries_) {
      if (!p.value.all_finite()) return false;
    }
    return true;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].info.name() != b.entries_[i].info.name()) return false;
      if (!(a.entries_[i].value == b.entries_[i].value)) return false;
    }
    return true;
  }

 private:
  std::size_t checked(Index layer, ParamRole role) const {
    Index i = find(layer, role);
    if (i < 0) {
      throw ShapeError("no parameter " + std::string(to_string(role)) + " for layer " +
                       std::to_string(layer));
    }
    return static_cast<std::size_t>(i);
  }

  std::vector<Param<Scalar>> entries_;
};

template <typename Scalar>
using Gradients = ParamSet<Scalar>;

/// Kaiming-normal weights, zero biases, unit bn scale/var.
template <typename Scalar, typename Rng>
ParamSet<Scalar> init_params(const Arch& arch, Rng& rng);

}  // namespace sra

#include "sra/detail/params_init.hpp"
