#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "geodistill/numerics/tensor.hpp"

namespace geodistill::nx {

// Named trainable tensors in insertion order. Two stores built by the same
// model constructor iterate identically.
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Tensor& add(std::string name, Shape shape, std::vector<double> values);

  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;

  // Same names in the same order with identical shapes.
  bool compatible(const ParamStore& other) const;

  // Deep copy; the clone shares no storage with this store.
  ParamStore clone() const;
  void copy_values_from(const ParamStore& other);
  void zero_grad();

  // Largest elementwise |a - b| across all parameters (compatible stores).
  static double max_abs_diff(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<Entry> entries_;
};

}  // namespace geodistill::nx
