#include "geodistill/numerics/param_store.hpp"

#include <algorithm>
#include <cmath>

#include "geodistill/error.hpp"

namespace geodistill::nx {

Tensor& ParamStore::add(std::string name, Shape shape, std::vector<double> values) {
  if (contains(name)) throw InvalidArgument("ParamStore: duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), Tensor::parameter(std::move(shape), std::move(values)));
  return entries_.back().second;
}

bool ParamStore::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.first == name; });
}

const Tensor& ParamStore::at(std::string_view name) const {
  for (const Entry& e : entries_)
    if (e.first == name) return e.second;
  throw InvalidArgument("ParamStore: no parameter '" + std::string(name) + "'");
}

Tensor& ParamStore::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.second.numel();
  return n;
}

bool ParamStore::compatible(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (entries_[i].second.shape() != other.entries_[i].second.shape()) return false;
  }
  return true;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  out.entries_.reserve(entries_.size());
  for (const Entry& e : entries_) out.entries_.emplace_back(e.first, e.second.clone());
  return out;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (!compatible(other)) throw InvalidArgument("ParamStore: incompatible stores");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto src = other.entries_[i].second.values();
    std::copy(src.begin(), src.end(), entries_[i].second.mutable_values().begin());
  }
}

void ParamStore::zero_grad() {
  for (Entry& e : entries_) e.second.zero_grad();
}

double ParamStore::max_abs_diff(const ParamStore& a, const ParamStore& b) {
  if (!a.compatible(b)) throw InvalidArgument("ParamStore: incompatible stores");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    auto x = a.entries_[i].second.values();
    auto y = b.entries_[i].second.values();
    for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, std::abs(x[k] - y[k]));
  }
  return worst;
}

}  // namespace geodistill::nx
