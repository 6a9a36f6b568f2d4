#pragma once

// Plain nested-loop reference implementations of the loss and correlation
// formulas. They share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace rosetta::oracle {

using Row = std::vector<double>;
using Matrix = std::vector<Row>;

inline double xlogx(double x) { return x * std::log(std::max(x, 1e-12)); }

inline double entropy(double q) { return xlogx(q) + xlogx(1.0 - q); }

// gates[layer][sample][channel]
inline double sparsity(const std::vector<Matrix>& gates) {
  const auto n = gates.front().size();
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    double per = 0.0;
    for (const auto& layer : gates) {
      double l1 = 0.0;
      for (double v : layer[s]) l1 += std::abs(v);
      per += l1 / static_cast<double>(layer[s].size());
    }
    total += per / static_cast<double>(gates.size());
  }
  return total / static_cast<double>(n);
}

// features[layer][sample][channel]
inline double kd(const std::vector<Matrix>& student, const std::vector<Matrix>& teacher) {
  double total = 0.0;
  for (std::size_t l = 0; l < student.size(); ++l) {
    double s = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < student[l].size(); ++i)
      for (std::size_t j = 0; j < student[l][i].size(); ++j) {
        const double d = student[l][i][j] - teacher[l][i][j];
        s += d * d;
        ++count;
      }
    total += s / static_cast<double>(count);
  }
  return total / static_cast<double>(student.size());
}

inline double ratio(const Row& g, const std::vector<std::uint8_t>& reserved, double eta) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!reserved[i]) continue;
    den += g[i];
    if (g[i] >= eta) num += g[i];
  }
  return den < 1e-12 ? 0.0 : num / den;
}

inline double weighted_diversity(const std::vector<Matrix>& gates, const std::vector<std::vector<std::uint8_t>>& reserved,
                                 const std::vector<double>& phis, double eta) {
  double total = 0.0;
  for (std::size_t l = 0; l < gates.size(); ++l) {
    double layer = 0.0;
    for (const auto& row : gates[l]) layer += entropy(ratio(row, reserved[l], eta));
    layer /= static_cast<double>(gates[l].size());
    for (double p : phis) total += p * layer;
  }
  return total / (static_cast<double>(gates.size()) * static_cast<double>(phis.size()));
}

inline double mse(const Row& a, const Row& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// R(p^n, p^m) straight from the definition.
inline double task_correlation(const Matrix& protos_n, const Matrix& protos_m, bool same_task) {
  double total = 0.0;
  for (std::size_t j = 0; j < protos_n.size(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < protos_m.size(); ++i) {
      if (same_task && i == j) continue;
      best = std::min(best, mse(protos_m[i], protos_n[j]));
    }
    total += best;
  }
  return total / static_cast<double>(protos_n.size());
}

inline double phi(double r_nm, double r_mm) {
  if (r_nm < 1e-12) return 0.0;
  const double v = (r_nm - r_mm) / r_nm;
  return v > 0.0 ? v : 0.0;
}

}  // namespace rosetta::oracle
