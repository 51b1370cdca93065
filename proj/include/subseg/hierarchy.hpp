#pragma once

#include <numeric>
#include <stdexcept>
#include <vector>

#include "subseg/tensor.hpp"

namespace subseg {

/// Two-level label hierarchy: R superclasses, k_i subclasses each.
/// Subclass 0 is always the background with parent superclass 0.
struct HierarchySpec {
  int num_super = 2;            // R
  std::vector<int> sub_counts;  // k_i, sub_counts[0] == 1 for background
  std::vector<int> parent;      // subclass index -> superclass index, size K

  static HierarchySpec binary_foreground(int k_fg) {
    if (k_fg < 1) throw std::invalid_argument("hierarchy: k_fg must be >= 1");
    HierarchySpec h;
    h.num_super = 2;
    h.sub_counts = {1, k_fg};
    h.parent.assign(static_cast<size_t>(1 + k_fg), 1);
    h.parent[0] = 0;
    return h;
  }

  int num_sub() const { return static_cast<int>(parent.size()); }  // K

  int parent_of(int sub) const {
    if (sub < 0 || sub >= num_sub())
      throw std::invalid_argument("hierarchy: subclass " + std::to_string(sub) + " out of range");
    return parent[static_cast<size_t>(sub)];
  }

  void validate() const {
    if (num_super < 1) throw std::invalid_argument("hierarchy: need at least one superclass");
    if (static_cast<int>(sub_counts.size()) != num_super)
      throw std::invalid_argument("hierarchy: sub_counts size != R");
    if (sub_counts[0] != 1 || parent.empty() || parent[0] != 0)
      throw std::invalid_argument("hierarchy: subclass 0 must be the background under superclass 0");
    const int K = std::accumulate(sub_counts.begin(), sub_counts.end(), 0);
    if (K != num_sub()) throw std::invalid_argument("hierarchy: parent table size != sum of sub_counts");
    std::vector<int> seen(static_cast<size_t>(num_super), 0);
    for (int p : parent) {
      if (p < 0 || p >= num_super) throw std::invalid_argument("hierarchy: parent out of range");
      seen[static_cast<size_t>(p)]++;
    }
    for (int r = 0; r < num_super; ++r)
      if (seen[static_cast<size_t>(r)] != sub_counts[static_cast<size_t>(r)])
        throw std::invalid_argument("hierarchy: parent map does not match sub_counts");
  }

  /// Collapses a subclass map to its superclass map.
  LabelMap collapse(const LabelMap& z) const {
    LabelMap y(z.h, z.w);
    for (size_t i = 0; i < z.v.size(); ++i) y.v[i] = parent[static_cast<size_t>(z.v[i])];
    return y;
  }

  bool consistent(const LabelMap& z, const LabelMap& y) const {
    if (z.h != y.h || z.w != y.w) return false;
    for (size_t i = 0; i < z.v.size(); ++i)
      if (parent[static_cast<size_t>(z.v[i])] != y.v[i]) return false;
    return true;
  }
};

}  // namespace subseg
