#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "subseg/hierarchy.hpp"
#include "subseg/tensor.hpp"

namespace subseg {

/// 2|A n B| / (|A| + |B|); two empty masks count as a perfect match.
inline double dice_score(const LabelMap& pred, const LabelMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw std::invalid_argument("dice_score: mask shapes differ");
  int64_t a = 0, b = 0, inter = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const bool pa = pred.v[i] != 0, pb = gt.v[i] != 0;
    a += pa;
    b += pb;
    inter += pa && pb;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

namespace detail {
/// Mask pixels with a 4-neighbor outside the mask or lying on the image border.
inline std::vector<std::pair<int, int>> boundary_pixels(const LabelMap& m) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (m.at(y, x) == 0) continue;
      const bool border = y == 0 || x == 0 || y == m.h - 1 || x == m.w - 1;
      if (border || m.at(y - 1, x) == 0 || m.at(y + 1, x) == 0 || m.at(y, x - 1) == 0 ||
          m.at(y, x + 1) == 0)
        out.emplace_back(y, x);
    }
  return out;
}
}  // namespace detail

/// Nearest-rank 95th percentile of pooled boundary-to-boundary distances in
/// pixel units. Undefined (nullopt) when exactly one mask is empty.
inline std::optional<double> hd95(const LabelMap& pred, const LabelMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw std::invalid_argument("hd95: mask shapes differ");
  const auto ba = detail::boundary_pixels(pred);
  const auto bb = detail::boundary_pixels(gt);
  if (ba.empty() && bb.empty()) return 0.0;
  if (ba.empty() || bb.empty()) return std::nullopt;

  std::vector<double> pooled;
  pooled.reserve(ba.size() + bb.size());
  auto directed = [&pooled](const std::vector<std::pair<int, int>>& from,
                            const std::vector<std::pair<int, int>>& to) {
    for (const auto& [ay, ax] : from) {
      int64_t best = std::numeric_limits<int64_t>::max();
      for (const auto& [by, bx] : to) {
        const int64_t dy = ay - by, dx = ax - bx;
        best = std::min(best, dy * dy + dx * dx);
      }
      pooled.push_back(std::sqrt(static_cast<double>(best)));
    }
  };
  directed(ba, bb);
  directed(bb, ba);
  std::sort(pooled.begin(), pooled.end());
  const size_t rank = static_cast<size_t>(
      std::ceil(0.95 * static_cast<double>(pooled.size())));  // nearest-rank, 1-based
  return pooled[std::max<size_t>(rank, 1) - 1];
}

struct ClassMetric {
  double dice = 0.0;
  std::optional<double> hd95;
};

struct ClassReport {
  std::map<int, ClassMetric> per_subclass;    // foreground subclasses
  std::map<int, ClassMetric> per_superclass;  // foreground superclasses
  double mean_dice = 0.0;
  std::optional<double> mean_hd95;
  int hd95_undefined = 0;

  void finalize() {
    double d = 0.0, h = 0.0;
    int hn = 0;
    hd95_undefined = 0;
    for (const auto& [cls, m] : per_subclass) {
      d += m.dice;
      if (m.hd95) {
        h += *m.hd95;
        ++hn;
      } else {
        ++hd95_undefined;
      }
    }
    mean_dice = per_subclass.empty() ? 0.0 : d / static_cast<double>(per_subclass.size());
    mean_hd95 = hn > 0 ? std::optional<double>(h / hn) : std::nullopt;
  }
};

/// Per-foreground-subclass Dice and HD95, plus parent-collapsed superclass
/// metrics, for one prediction/ground-truth pair.
inline ClassReport evaluate(const LabelMap& pred, const LabelMap& gt, const HierarchySpec& hier) {
  ClassReport rep;
  auto binarize = [](const LabelMap& m, int cls) {
    LabelMap out(m.h, m.w);
    for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = m.v[i] == cls ? 1 : 0;
    return out;
  };
  for (int c = 1; c < hier.num_sub(); ++c) {
    const LabelMap pm = binarize(pred, c), gm = binarize(gt, c);
    rep.per_subclass[c] = {dice_score(pm, gm), hd95(pm, gm)};
  }
  const LabelMap psup = hier.collapse(pred), gsup = hier.collapse(gt);
  for (int r = 1; r < hier.num_super; ++r) {
    const LabelMap pm = binarize(psup, r), gm = binarize(gsup, r);
    rep.per_superclass[r] = {dice_score(pm, gm), hd95(pm, gm)};
  }
  rep.finalize();
  return rep;
}

/// Averages per-pair reports over a split; undefined HD95 entries are
/// excluded from means and surfaced as a count.
struct ReportAccumulator {
  std::map<int, std::vector<double>> sub_dice, sub_hd, super_dice, super_hd;
  int hd95_undefined = 0;
  int count = 0;

  void add(const ClassReport& r) {
    ++count;
    for (const auto& [c, m] : r.per_subclass) {
      sub_dice[c].push_back(m.dice);
      if (m.hd95)
        sub_hd[c].push_back(*m.hd95);
      else
        ++hd95_undefined;
    }
    for (const auto& [c, m] : r.per_superclass) {
      super_dice[c].push_back(m.dice);
      if (m.hd95) super_hd[c].push_back(*m.hd95);
    }
  }

  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }

  ClassReport finalize() const {
    ClassReport rep;
    for (const auto& [c, v] : sub_dice) {
      ClassMetric m;
      m.dice = mean(v);
      auto it = sub_hd.find(c);
      if (it != sub_hd.end() && !it->second.empty()) m.hd95 = mean(it->second);
      rep.per_subclass[c] = m;
    }
    for (const auto& [c, v] : super_dice) {
      ClassMetric m;
      m.dice = mean(v);
      auto it = super_hd.find(c);
      if (it != super_hd.end() && !it->second.empty()) m.hd95 = mean(it->second);
      rep.per_superclass[c] = m;
    }
    rep.finalize();
    rep.hd95_undefined = hd95_undefined;
    return rep;
  }
};

inline void write_report_csv(std::ostream& os, const ClassReport& rep) {
  os << "class,dice,hd95\n";
  auto hd = [](const std::optional<double>& v) {
    return v ? std::to_string(*v) : std::string();
  };
  for (const auto& [c, m] : rep.per_subclass)
    os << c << ',' << m.dice << ',' << hd(m.hd95) << '\n';
  for (const auto& [c, m] : rep.per_superclass)
    os << "super" << c << ',' << m.dice << ',' << hd(m.hd95) << '\n';
  os << "mean," << rep.mean_dice << ',' << hd(rep.mean_hd95) << '\n';
}

inline std::string report_table(const ClassReport& rep) {
  std::ostringstream os;
  os << "class        dice      hd95 (px)\n";
  char buf[96];
  for (const auto& [c, m] : rep.per_subclass) {
    std::snprintf(buf, sizeof buf, "sub %-6d %8.4f  ", c, m.dice);
    os << buf;
    if (m.hd95)
      os << *m.hd95 << '\n';
    else
      os << "undefined\n";
  }
  for (const auto& [c, m] : rep.per_superclass) {
    std::snprintf(buf, sizeof buf, "super %-4d %8.4f  ", c, m.dice);
    os << buf;
    if (m.hd95)
      os << *m.hd95 << '\n';
    else
      os << "undefined\n";
  }
  std::snprintf(buf, sizeof buf, "mean       %8.4f  ", rep.mean_dice);
  os << buf;
  if (rep.mean_hd95)
    os << *rep.mean_hd95;
  else
    os << "undefined";
  if (rep.hd95_undefined > 0) os << "  (" << rep.hd95_undefined << " undefined hd95 excluded)";
  os << '\n';
  return os.str();
}

}  // namespace subseg
