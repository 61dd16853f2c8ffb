#include "selora/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace selora {

namespace {

// Continued fraction for the incomplete beta, modified Lentz iteration.
double beta_cf(double a, double b, double x) {
  constexpr double eps = 3e-16;
  constexpr double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

// Regularized incomplete beta I_x(a, b), symmetric form for stability.
double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

}  // namespace

SummaryStat mean_sd(const std::vector<double>& x) {
  const int n = int(x.size());
  if (n < 2) throw std::invalid_argument("mean_sd: need at least 2 values, got " +
                                         std::to_string(n));
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= double(n);
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / double(n - 1));

  SummaryStat s;
  s.n = n;
  s.mean = mean;
  s.sd = sd;
  const double half = t_quantile(0.975, n - 1) * sd / std::sqrt(double(n));
  s.ci95_low = mean - half;
  s.ci95_high = mean + half;
  return s;
}

TTestResult paired_t_test(const PairedSample& s) {
  const size_t n = s.a.size();
  if (s.b.size() != n)
    throw std::invalid_argument("paired_t_test: sample lengths differ (" + std::to_string(n) +
                                " vs " + std::to_string(s.b.size()) + ")");
  if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  if (!s.labels.empty() && s.labels.size() != n)
    throw std::invalid_argument("paired_t_test: label count does not match samples");

  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) d[i] = s.a[i] - s.b[i];

  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= double(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / double(n - 1));

  TTestResult r;
  r.n = int(n);
  r.df = int(n) - 1;
  r.mean_diff = mean;
  r.sd_diff = sd;
  if (sd == 0.0) {
    r.degenerate = true;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.t = nan;
    r.p_two_sided = nan;
    r.cohens_d = nan;
    return r;
  }
  r.t = mean / (sd / std::sqrt(double(n)));
  r.p_two_sided = 2.0 * (1.0 - student_t_cdf(std::abs(r.t), r.df));
  r.cohens_d = mean / sd;
  return r;
}

double student_t_cdf(double t, int df) {
  if (df < 1) throw std::invalid_argument("student_t_cdf: df must be >= 1, got " +
                                          std::to_string(df));
  const double x = double(df) / (double(df) + t * t);
  const double half_tail = 0.5 * reg_inc_beta(0.5 * double(df), 0.5, x);
  return t >= 0.0 ? 1.0 - half_tail : half_tail;
}

double t_quantile(double p, int df) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("t_quantile: p must be inside (0, 1)");
  if (df < 1) throw std::invalid_argument("t_quantile: df must be >= 1, got " +
                                          std::to_string(df));
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -t_quantile(1.0 - p, df);

  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, df) < p) hi *= 2.0;  // p < 1 so this terminates
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace selora
