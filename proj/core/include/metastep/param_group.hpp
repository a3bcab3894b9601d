#pragma once

#include <string>
#include <utility>
#include <vector>

#include "metastep/errors.hpp"
#include "metastep/tensor.hpp"

namespace metastep {

/// Named list of tensors with a flat-view offset table. Task-parameters and
/// meta-parameters live in separate groups; the optimizer dynamics and the
/// adjoint sweep work on the flat view, loss builders on the named entries.
class ParamGroup {
 public:
  ParamGroup() = default;

  void add(std::string name, Tensor value) {
    for (const auto& e : entries_)
      if (e.name == name) throw ShapeMismatch("ParamGroup: duplicate entry '" + name + "'");
    offsets_.push_back(flat_len_);
    flat_len_ += value.numel();
    entries_.push_back({std::move(name), std::move(value)});
  }

  int64_t size() const { return static_cast<int64_t>(entries_.size()); }
  int64_t flat_len() const { return flat_len_; }
  bool empty() const { return entries_.empty(); }

  const std::string& name(int64_t i) const { return entries_[static_cast<size_t>(i)].name; }
  const Tensor& tensor(int64_t i) const { return entries_[static_cast<size_t>(i)].value; }
  Tensor& tensor(int64_t i) { return entries_[static_cast<size_t>(i)].value; }
  int64_t offset(int64_t i) const { return offsets_[static_cast<size_t>(i)]; }

  const Tensor& operator[](const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.value;
    throw ShapeMismatch("ParamGroup: no entry '" + name + "'");
  }

  Tensor flatten() const {
    Tensor flat({std::max<int64_t>(flat_len_, 1)});
    if (flat_len_ == 0) return Tensor({1});  // degenerate, unused in practice
    int64_t k = 0;
    for (const auto& e : entries_)
      for (int64_t i = 0; i < e.value.numel(); ++i) flat[k++] = e.value[i];
    return flat;
  }

  /// Same names and shapes, values taken from `flat`.
  ParamGroup with_flat(const Tensor& flat) const {
    if (flat.numel() != flat_len_)
      throw DimensionMismatch("ParamGroup::with_flat: expected length " +
                              std::to_string(flat_len_) + ", got " +
                              std::to_string(flat.numel()));
    ParamGroup out;
    int64_t k = 0;
    for (const auto& e : entries_) {
      Tensor t(e.value.shape());
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = flat[k++];
      out.add(e.name, std::move(t));
    }
    return out;
  }

  /// Same names and shapes, all values zero.
  ParamGroup zeros_like() const {
    ParamGroup out;
    for (const auto& e : entries_) out.add(e.name, Tensor::zeros(e.value.shape()));
    return out;
  }

  bool same_layout(const ParamGroup& other) const {
    if (size() != other.size()) return false;
    for (int64_t i = 0; i < size(); ++i)
      if (name(i) != other.name(i) || tensor(i).shape() != other.tensor(i).shape()) return false;
    return true;
  }

 private:
  struct Entry {
    std::string name;
    Tensor value;
  };
  std::vector<Entry> entries_;
  std::vector<int64_t> offsets_;
  int64_t flat_len_ = 0;
};

}  // namespace metastep
