#pragma once

// Reference implementations used only by tests. Each one is written
// directly from the mathematical definition, sharing no code with the
// library routine it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, std::vector<double>(c, 0.0)); }

// Gaussian elimination with partial pivoting.
inline std::vector<double> solve(Matrix a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i][k]) > std::abs(a[piv][k])) piv = i;
    if (std::abs(a[piv][k]) < 1e-300) throw std::runtime_error("singular");
    std::swap(a[k], a[piv]);
    std::swap(b[k], b[piv]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i][k] / a[k][k];
      for (std::size_t j = k; j < n; ++j) a[i][j] -= f * a[k][j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i][j] * x[j];
    x[i] = s / a[i][i];
  }
  return x;
}

// Stationary teleporting walk from the dense weighted adjacency W: rows are
// normalized, empty rows send their mass to v. Solves
//   (I - (1 - a)(P^T + v d^T)) r = a v
// where d marks the empty rows.
inline std::vector<double> ppr_dense(const Matrix& w, const std::vector<double>& v, double alpha) {
  const std::size_t n = v.size();
  Matrix m = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) m[i][i] = 1.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double row = std::accumulate(w[j].begin(), w[j].end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double pji = row > 0.0 ? w[j][i] / row : v[i];
      m[i][j] -= (1.0 - alpha) * pji;
    }
  }
  std::vector<double> b(n);
  for (std::size_t i = 0; i < n; ++i) b[i] = alpha * v[i];
  return solve(m, b);
}

// cut(S) / min(vol S, vol rest) on a symmetric dense adjacency.
inline double conductance(const Matrix& a, const std::vector<bool>& in) {
  double cut = 0.0, vs = 0.0, vr = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (in[i]) vs += a[i][j];
      else vr += a[i][j];
      if (in[i] && !in[j]) cut += a[i][j];
    }
  const double denom = std::min(vs, vr);
  return denom > 0.0 ? cut / denom : 1.0;
}

// Smallest conductance over all proper non-empty subsets.
inline double best_conductance(const Matrix& a) {
  const std::size_t n = a.size();
  double best = 1e300;
  for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
    std::vector<bool> in(n);
    for (std::size_t i = 0; i < n; ++i) in[i] = (mask >> i) & 1U;
    best = std::min(best, conductance(a, in));
  }
  return best;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) { parent_[find(a)] = find(b); }

 private:
  std::vector<std::size_t> parent_;
};

// Fraction of (positive, negative) pairs ordered correctly, ties one half.
inline double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        if (s[i] > s[j]) good += 1.0;
        else if (s[i] == s[j]) good += 0.5;
      }
  return good / pairs;
}

// Mean over positives of the precision at that positive's score level.
inline double average_precision(const std::vector<double>& s, const std::vector<int>& y) {
  double total = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    ++pos;
    std::size_t above = 0, above_pos = 0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] >= s[i]) {
        ++above;
        above_pos += y[j] == 1;
      }
    total += static_cast<double>(above_pos) / static_cast<double>(above);
  }
  return total / static_cast<double>(pos);
}

// Central difference of f at x along coordinate i.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, std::size_t i, double h = 1e-5) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

// |a - b| / max(|a|, |b|); the floor keeps entries that are zero up to
// rounding from dividing by nothing.
inline double relative_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

}  // namespace oracle
