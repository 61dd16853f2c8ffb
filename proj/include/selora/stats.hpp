#pragma once

#include <string>
#include <vector>

namespace selora {

// Sample statistics with the n-1 denominator, CI from the Student-t
// quantile: mean +/- t_{0.975, n-1} * sd / sqrt(n).
struct SummaryStat {
  double mean = 0.0;
  double sd = 0.0;
  double ci95_low = 0.0;
  double ci95_high = 0.0;
  int n = 0;
};

SummaryStat mean_sd(const std::vector<double>& x);

// Two measurements per run, paired by identical (model, seed). Labels are
// optional but must match the sample length when present.
struct PairedSample {
  std::vector<std::string> labels;
  std::vector<double> a;
  std::vector<double> b;
};

// Paired t-test over d_i = a_i - b_i. When the differences have zero
// variance the test is undefined: `degenerate` is set and t, p, cohens_d
// come back NaN rather than being silently dropped.
struct TTestResult {
  int n = 0;
  double mean_diff = 0.0;
  double sd_diff = 0.0;
  double t = 0.0;
  int df = 0;
  double p_two_sided = 0.0;
  double cohens_d = 0.0;
  bool degenerate = false;
};

TTestResult paired_t_test(const PairedSample& s);

// Student-t distribution function via the regularized incomplete beta
// (continued-fraction evaluation). Accurate to well under 1e-8 against
// direct integration for df in [1, 60], |t| <= 20.
double student_t_cdf(double t, int df);

// Inverse of student_t_cdf in p, by bisection. p must lie in (0, 1).
double t_quantile(double p, int df);

}  // namespace selora
