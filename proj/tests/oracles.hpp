#pragma once
// Naive reference implementations used as test oracles. They share no code
// with the library beyond plain containers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / (std::sqrt(dot(a, a)) * std::sqrt(dot(b, b)));
}

inline double sim(const std::vector<double>& a, const std::vector<double>& b, bool cos) { return cos ? cosine(a, b) : dot(a, b); }

// Straight from the definition, without max-shifting.
inline double info_nce(const Rows& S, const Rows& G, double tau, bool cos = true) {
  const std::size_t n = S.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(sim(S[i], G[j], cos) / tau);
    total += -std::log(std::exp(sim(S[i], G[i], cos) / tau) / denom);
  }
  return total / static_cast<double>(n);
}

// G holds N*k rows, sample j's candidates at rows j*k .. j*k+k-1.
inline double mico_loss(const Rows& S, const Rows& G, int k, double tau, bool cos = true) {
  const std::size_t n = S.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    // exhaustive argmin, lowest index on ties
    std::size_t p = i * k;
    for (int o = 1; o < k; ++o)
      if (sim(S[i], G[i * k + o], cos) < sim(S[i], G[p], cos)) p = i * k + o;
    double pos = std::exp(sim(S[i], G[p], cos) / tau);
    double neg = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i)
        for (int o = 0; o < k; ++o) neg += std::exp(sim(S[i], G[j * k + o], cos) / tau);
    total += -std::log(pos / (pos + neg));
  }
  return total / static_cast<double>(n);
}

inline int argmin_exhaustive(const std::vector<double>& v) {
  int best = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    bool is_min = true;
    for (std::size_t j = 0; j < v.size(); ++j)
      if (v[j] < v[i] || (v[j] == v[i] && j < i)) is_min = false;
    if (is_min) best = static_cast<int>(i);
  }
  return best;
}

// Sort all kept candidates by score descending with the gold placed after
// equal scores, then read off the gold's position.
inline int rank_by_sort(const std::vector<double>& scores, std::size_t gold, const std::vector<bool>& drop = {}) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (i == gold || drop.empty() || !drop[i]) kept.push_back(i);
  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return b == gold && a != gold;
  });
  return static_cast<int>(std::find(kept.begin(), kept.end(), gold) - kept.begin()) + 1;
}

inline double harmonic(int n) {
  double h = 0;
  for (int i = 1; i <= n; ++i) h += 1.0 / i;
  return h;
}

// Central differences of f with respect to every entry of x.
inline std::vector<double> numeric_gradient(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                            double h = 1e-4) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(1e-8, |a_i|, |b_i|) over entries with meaningful magnitude.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline Rows random_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Rows r(n, std::vector<double>(d));
  for (auto& row : r)
    for (auto& v : row) v = nd(rng);
  return r;
}

}  // namespace oracle
