#pragma once

// Independent references for the significance tests: Welch by hand with a
// quadrature t tail, and Mann-Whitney U by enumerating every relabelling.

#include <bit>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace cbr::test {

inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) {
    s += (i % 2 == 1 ? 4.0 : 2.0) * f(a + i * h);
  }
  return s * h / 3.0;
}

// Two-sided tail of Student's t by integrating the density over [0, |t|].
inline double student_two_sided(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0)) /
                   std::sqrt(df * M_PI);
  const auto pdf = [&](double x) { return c * std::pow(1.0 + x * x / df, -(df + 1.0) / 2.0); };
  return 1.0 - 2.0 * simpson(pdf, 0.0, std::abs(t));
}

inline double normal_two_sided(double z) {
  const auto pdf = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
  return 1.0 - 2.0 * simpson(pdf, 0.0, std::abs(z));
}

struct WelchOracle {
  double t;
  double df;
  double p;
};

inline WelchOracle welch_by_hand(const std::vector<double>& a, const std::vector<double>& b) {
  auto moments = [](const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) {
      m += v;
    }
    m /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) {
      ss += (v - m) * (v - m);
    }
    return std::pair{m, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, sa] = moments(a);
  const auto [mb, sb] = moments(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double qa = sa / na;
  const double qb = sb / nb;
  const double t = (ma - mb) / std::sqrt(qa + qb);
  const double df = (qa + qb) * (qa + qb) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  return {t, df, student_two_sided(t, df)};
}

inline double u_by_pairs(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a) {
    for (double y : b) {
      u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
    }
  }
  return u;
}

struct UOracle {
  double u;
  double p;
};

// Enumerates every way to label n_a of the pooled values as sample a. The
// exact permutation mean and variance of U (ties included) feed the normal
// approximation.
inline UOracle mann_whitney_by_enumeration(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size();
  const std::size_t k = a.size();
  double sum = 0.0;
  double sum_sq = 0.0;
  double count = 0.0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != k) {
      continue;
    }
    std::vector<double> x;
    std::vector<double> y;
    for (std::size_t i = 0; i < n; ++i) {
      ((mask >> i) & 1u ? x : y).push_back(pooled[i]);
    }
    const double u = u_by_pairs(x, y);
    sum += u;
    sum_sq += u * u;
    count += 1.0;
  }
  const double mu = sum / count;
  const double var = sum_sq / count - mu * mu;
  const double u = u_by_pairs(a, b);
  if (var <= 1e-12) {
    return {u, 1.0};
  }
  return {u, normal_two_sided((u - mu) / std::sqrt(var))};
}

}  // namespace cbr::test
