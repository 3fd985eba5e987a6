#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cbr {

enum class TestKind { t_test_two_tailed, mann_whitney_u };

struct SignificanceResult {
  TestKind kind = TestKind::t_test_two_tailed;
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  double degrees_of_freedom = 0.0;  // Welch only
};

std::string to_string(TestKind kind);

// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
SignificanceResult t_test_two_tailed(std::span<const double> a, std::span<const double> b);

// U of sample a (pairs with a > b count 1, ties 1/2), two-sided p from the
// tie-corrected normal approximation without continuity correction.
SignificanceResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> values);
// Sample standard deviation (n - 1); zero for fewer than two values.
double stddev(std::span<const double> values);

// Average ranks (1-based), ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> values);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace cbr
