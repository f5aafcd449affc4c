// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#include "udet/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace udet {

// ---------------------------------------------------------------------------
// Incomplete gamma and chi-squared.

namespace {

constexpr double kGammaEps = 1e-15;
constexpr int kGammaMaxIter = 2000;

// Series expansion of P(a, x), valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int i = 0; i < kGammaMaxIter; ++i) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * kGammaEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction for Q(a, x) = 1 - P(a, x), valid for x >= a + 1.
double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kGammaMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kGammaEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

// Inverse standard normal CDF (AS 111), used for starting guesses and the
// Shapiro-Wilk coefficients. Refined elsewhere where more accuracy matters.
double ppnd(double prob) {
  static const double a0 = 2.50662823884, a1 = -18.61500062529,
                      a2 = 41.39119773534, a3 = -25.44106049637,
                      b1 = -8.47351093090, b2 = 23.08336743743,
                      b3 = -21.06224101826, b4 = 3.13082909833,
                      c0 = -2.78718931138, c1 = -2.29796479134,
                      c2 = 4.85014127135, c3 = 2.32121276858,
                      d1 = 3.54388924762, d2 = 1.63706781897;
  const double q = prob - 0.5;
  if (std::abs(q) <= 0.42) {
    const double r = q * q;
    return q * (((a3 * r + a2) * r + a1) * r + a0) /
           ((((b4 * r + b3) * r + b2) * r + b1) * r + 1.0);
  }
  double r = q > 0.0 ? 1.0 - prob : prob;
  if (r <= 0.0) return q > 0.0 ? 99.9999 : -99.9999;
  r = std::sqrt(-std::log(r));
  const double v = (((c3 * r + c2) * r + c1) * r + c0) / ((d2 * r + d1) * r + 1.0);
  return q < 0.0 ? -v : v;
}

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

double chi2_pdf(double x, int dof) {
  if (x <= 0.0) return 0.0;
  const double a = 0.5 * dof;
  return std::exp((a - 1.0) * std::log(x) - 0.5 * x - std::lgamma(a) -
                  a * std::log(2.0));
}

}  // namespace

double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw DomainError("gamma_p: invalid arguments");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_contfrac(a, x);
}

double chi2_cdf(double x, int dof) {
  if (dof < 1) throw DomainError("chi2_cdf: dof must be >= 1");
  if (x <= 0.0) return 0.0;
  return gamma_p(0.5 * dof, 0.5 * x);
}

double chi2_quantile(int dof, double alpha) {
  if (dof < 1) throw DomainError("chi2_quantile: dof must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw DomainError("chi2_quantile: alpha must lie in (0,1)");
  const double target = 1.0 - alpha;

  // Wilson-Hilferty starting point, then safeguarded Newton on the CDF.
  const double z = ppnd(target);
  const double t = 1.0 - 2.0 / (9.0 * dof) + z * std::sqrt(2.0 / (9.0 * dof));
  double x = dof * t * t * t;
  if (!(x > 0.0)) x = 0.5 * dof;

  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 200; ++it) {
    const double f = chi2_cdf(x, dof) - target;
    if (std::abs(f) < 1e-16) break;  // drive to CDF precision; Newton stalls safely
    if (f > 0.0) hi = x;
    else lo = x;
    const double d = chi2_pdf(x, dof);
    double x_next = d > 0.0 ? x - f / d : x;
    if (!(x_next > lo && (x_next < hi))) {
      x_next = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * x + 1.0;
    }
    if (x_next == x) break;
    x = x_next;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Confidence ellipsoids.

double mahalanobis_sq(const Vec& p, const Vec& center, const Mat& C, bool* clipped) {
  if (p.size() != center.size() || C.rows() != p.size() || C.cols() != p.size())
    throw DimensionMismatch("mahalanobis_sq: dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (C + C.transpose()));
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(lmax > 0.0)) throw SingularC("mahalanobis_sq: covariance not positive");
  const double floor_ = 1e-14 * lmax;
  const Vec d = es.eigenvectors().transpose() * (p - center);
  double sum = 0.0;
  for (int i = 0; i < d.size(); ++i) {
    double l = es.eigenvalues()[i];
    if (l < floor_) {
      l = floor_;
      if (clipped) *clipped = true;
    }
    sum += d[i] * d[i] / l;
  }
  return sum;
}

bool ellipsoid_contains(const Vec& p, const Vec& center, const Mat& C, double alpha) {
  bool clipped = false;
  const double d2 = mahalanobis_sq(p, center, C, &clipped);
  if (clipped) throw SingularC("ellipsoid_contains: covariance numerically singular");
  return d2 <= chi2_quantile(static_cast<int>(p.size()), alpha);
}

double alpha_min(const Vec& p_val, const Vec& p_cal, const Mat& C_cal, bool* clipped) {
  const double d2 = mahalanobis_sq(p_val, p_cal, C_cal, clipped);
  return 1.0 - chi2_cdf(d2, static_cast<int>(p_val.size()));
}

// ---------------------------------------------------------------------------
// Shapiro-Wilk (AS R94, Royston 1995), uncensored samples in double precision.

namespace {

double poly(const double* c, int nord, double x) {
  double res = c[0];
  if (nord == 1) return res;
  double p = x * c[nord - 1];
  for (int j = nord - 2; j >= 1; --j) p = (p + c[j]) * x;
  return res + p;
}

}  // namespace

ShapiroWilkResult shapiro_wilk(std::span<const double> sample) {
  const int n = static_cast<int>(sample.size());
  if (n < 3) throw SampleTooSmall("shapiro_wilk: need at least 3 observations");
  if (n > 5000) throw DomainError("shapiro_wilk: n > 5000 unsupported");

  std::vector<double> x(sample.begin(), sample.end());
  std::sort(x.begin(), x.end());
  const double range = x.back() - x.front();
  if (!(range > 0.0)) throw ConstantSample("shapiro_wilk: zero sample range");

  static const double c1[6] = {0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
  static const double c2[6] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  static const double c3[4] = {0.5440, -0.39978, 0.025054, -6.714e-4};
  static const double c4[4] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static const double c5[4] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static const double c6[3] = {-0.4803, -0.082676, 0.0030302};
  static const double g[2] = {-2.273, 0.459};

  const int n2 = n / 2;
  std::vector<double> a(n2);
  if (n == 3) {
    a[0] = std::sqrt(0.5);
  } else {
    const double an25 = n + 0.25;
    double summ2 = 0.0;
    std::vector<double> m(n2);
    for (int i = 0; i < n2; ++i) {
      m[i] = ppnd((i + 1 - 0.375) / an25);
      summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(static_cast<double>(n));
    const double a1 = poly(c1, 6, rsn) - m[0] / ssumm2;
    int i1;
    double fac;
    if (n > 5) {
      i1 = 2;
      const double a2 = -m[1] / ssumm2 + poly(c2, 6, rsn);
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) /
                      (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[0] = a1;
      a[1] = a2;
    } else {
      i1 = 1;
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
      a[0] = a1;
    }
    for (int i = i1; i < n2; ++i) a[i] = -m[i] / fac;
  }

  // Full antisymmetric coefficient vector; a[] holds the upper-half values.
  std::vector<double> coef(n, 0.0);
  for (int i = 0; i < n2; ++i) {
    coef[i] = -a[i];
    coef[n - 1 - i] = a[i];
  }

  // W as the squared correlation between coefficients and range-scaled data.
  double sx = 0.0;
  for (int i = 0; i < n; ++i) sx += x[i] / range;
  sx /= n;
  double sa = std::accumulate(coef.begin(), coef.end(), 0.0) / n;
  double ssa = 0.0, ssx = 0.0, sax = 0.0;
  for (int i = 0; i < n; ++i) {
    const double da = coef[i] - sa;
    const double dx = x[i] / range - sx;
    ssa += da * da;
    ssx += dx * dx;
    sax += da * dx;
  }
  const double ssassx = std::sqrt(ssa * ssx);
  const double w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);

  ShapiroWilkResult res;
  res.w = 1.0 - w1;

  if (n == 3) {
    const double pi6 = 1.90985931710274;   // 6/pi
    const double stqr = 1.04719755119660;  // asin(sqrt(3/4))
    res.p_value = std::clamp(pi6 * (std::asin(std::sqrt(res.w)) - stqr), 1e-19, 1.0);
    return res;
  }

  double y = std::log(w1);
  const double xx = std::log(static_cast<double>(n));
  double mu, sd;
  if (n <= 11) {
    const double gam = poly(g, 2, static_cast<double>(n));
    if (y >= gam) {
      res.p_value = 1e-19;
      return res;
    }
    y = -std::log(gam - y);
    mu = poly(c3, 4, static_cast<double>(n));
    sd = std::exp(poly(c4, 4, static_cast<double>(n)));
  } else {
    mu = poly(c5, 4, xx);
    sd = std::exp(poly(c6, 3, xx));
  }
  res.p_value = normal_upper_tail((y - mu) / sd);
  return res;
}

std::vector<double> build_error_sample(const MeasurementTensor& tensor, int sensor) {
  if (tensor.n_m % 2 != 0)
    throw OddSeriesCount("build_error_sample: series count must be even");
  if (sensor < 0 || sensor >= tensor.n_s)
    throw DimensionMismatch("build_error_sample: sensor index out of range");
  std::vector<double> out;
  out.reserve(static_cast<size_t>(tensor.n_m / 2) * tensor.n_q);
  for (int t = 0; t < tensor.n_m / 2; ++t)
    for (int j = 0; j < tensor.n_q; ++j)
      out.push_back(tensor.at(2 * t + 1, j, sensor) - tensor.at(2 * t, j, sensor));
  return out;
}

double combine_sigma(double sigma_repetition, double sigma_internal) {
  if (sigma_repetition < 0.0 || sigma_internal < 0.0)
    throw NegativeInput("combine_sigma: standard deviations must be nonnegative");
  return std::hypot(sigma_repetition, sigma_internal);
}

// ---------------------------------------------------------------------------
// Splitting.

std::string SplitScheme::name() const {
  switch (kind) {
    case Kind::AlternatingWithinPhase:
      return phase == Phase::Loading ? "alternating-loading" : "alternating-unloading";
    case Kind::LoadingVsUnloading:
      return "loading-vs-unloading";
    case Kind::AlternatingAcrossAll:
      return "alternating-across-all";
    default:
      return "random-monte-carlo";
  }
}

namespace {

CellSet expand_inputs(const std::vector<int>& inputs, int series_count) {
  CellSet cs;
  for (int i = 0; i < series_count; ++i)
    for (int j : inputs) cs.cells.emplace_back(i, j);
  return cs;
}

}  // namespace

Split split(const InputSchedule& schedule, const SplitScheme& scheme, int series_count) {
  schedule.validate();
  if (schedule.phases.empty() && scheme.kind != SplitScheme::Kind::RandomMonteCarlo)
    throw EmptySplit("split: schedule has no phase tags");
  const int n_q = schedule.size();
  auto excluded = [&](int j) {
    return std::find(scheme.excluded_inputs.begin(), scheme.excluded_inputs.end(), j) !=
           scheme.excluded_inputs.end();
  };

  if (scheme.kind == SplitScheme::Kind::RandomMonteCarlo) {
    std::vector<Cell> pool;
    for (int i = 0; i < series_count; ++i)
      for (int j = 0; j < n_q; ++j)
        if (!excluded(j)) pool.emplace_back(i, j);
    if (pool.size() < 2) throw EmptySplit("split: fewer than two admissible cells");
    std::mt19937_64 rng(scheme.seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    auto n_cal = static_cast<size_t>(std::lround(scheme.ratio * pool.size()));
    n_cal = std::clamp<size_t>(n_cal, 1, pool.size() - 1);
    Split s;
    s.calibration.cells.assign(pool.begin(), pool.begin() + n_cal);
    s.validation.cells.assign(pool.begin() + n_cal, pool.end());
    std::sort(s.calibration.cells.begin(), s.calibration.cells.end());
    std::sort(s.validation.cells.begin(), s.validation.cells.end());
    return s;
  }

  // Deterministic schemes partition input indices; all series on both sides.
  int peak = -1;
  for (int j = 0; j < n_q; ++j)
    if (schedule.phases[j] == Phase::Loading) peak = j;

  std::vector<int> pool;
  bool val_takes_even_positions = false;
  switch (scheme.kind) {
    case SplitScheme::Kind::AlternatingWithinPhase:
      if (scheme.phase == Phase::Loading) {
        for (int j = 0; j < n_q; ++j)
          if (schedule.phases[j] == Phase::Loading && !excluded(j)) pool.push_back(j);
      } else {
        // The descent begins at the load peak.
        if (peak >= 0 && !excluded(peak)) pool.push_back(peak);
        for (int j = 0; j < n_q; ++j)
          if (schedule.phases[j] == Phase::Unloading && !excluded(j)) pool.push_back(j);
      }
      break;
    case SplitScheme::Kind::LoadingVsUnloading: {
      std::vector<int> cal_inputs, val_inputs;
      for (int j = 0; j < n_q; ++j) {
        if (excluded(j)) continue;
        if (schedule.phases[j] == Phase::Loading && j != peak)
          cal_inputs.push_back(j);
        else
          val_inputs.push_back(j);
      }
      if (cal_inputs.empty() || val_inputs.empty())
        throw EmptySplit("split: loading-vs-unloading side empty");
      return {expand_inputs(cal_inputs, series_count),
              expand_inputs(val_inputs, series_count)};
    }
    case SplitScheme::Kind::AlternatingAcrossAll:
      for (int j = 0; j < n_q; ++j)
        if (!excluded(j)) pool.push_back(j);
      val_takes_even_positions = true;
      break;
    default:
      break;
  }

  std::vector<int> first, second;
  for (size_t t = 0; t < pool.size(); ++t)
    (t % 2 == 0 ? first : second).push_back(pool[t]);
  const auto& cal_inputs = val_takes_even_positions ? second : first;
  const auto& val_inputs = val_takes_even_positions ? first : second;
  if (cal_inputs.empty() || val_inputs.empty())
    throw EmptySplit("split: alternating scheme side empty");
  return {expand_inputs(cal_inputs, series_count),
          expand_inputs(val_inputs, series_count)};
}

// ---------------------------------------------------------------------------
// Algorithm driver.

UncertaintyReport run_algorithm1(const StateEquationModel& model,
                                 const SensorLayout& layout,
                                 const MeasurementTensor& tensor,
                                 const std::vector<SplitScheme>& schemes,
                                 double tol, const Vec& p0,
                                 const Algorithm1Options& opts) {
  if (schemes.empty()) throw ConfigError("run_algorithm1: need at least one scheme");
  if (!(tol > 0.0 && tol < 1.0)) throw DomainError("run_algorithm1: TOL must lie in (0,1)");

  UncertaintyReport report;
  report.tol = tol;
  report.n_tests = opts.n_tests > 0 ? opts.n_tests : static_cast<int>(schemes.size());
  report.threshold = tol / report.n_tests;

  using Policy = Algorithm1Options::ScreenPolicy;
  if (opts.screen_policy != Policy::Skip) {
    bool violated = false;
    for (int k = 0; k < tensor.n_s; ++k) {
      const auto sample = build_error_sample(tensor, k);
      const auto sw = shapiro_wilk(sample);
      NormalityScreenEntry e;
      e.sensor = k;
      e.w = sw.w;
      e.p_value = sw.p_value;
      double mean = std::accumulate(sample.begin(), sample.end(), 0.0) / sample.size();
      double var = 0.0;
      for (double v : sample) var += (v - mean) * (v - mean);
      var /= (sample.size() - 1);
      // Differences of two repetitions double the variance.
      e.sigma_hat = std::sqrt(var / 2.0);
      report.screen.push_back(e);
      if (sw.p_value < opts.screen_level) violated = true;
    }
    if (violated) {
      if (opts.screen_policy == Policy::Abort)
        throw NormalityViolation("run_algorithm1: measurement errors fail the normality screen");
      report.screen_waived = true;
    }
  } else {
    report.screen_waived = true;
  }

  for (const auto& scheme : schemes) {
    const Split sp = split(tensor.schedule, scheme, tensor.n_m);
    ScenarioResult sc;
    sc.scenario = scheme.name();

    const Estimate cal = estimate_with_covariance(model, layout, tensor, p0,
                                                  sp.calibration, opts.fit, opts.cov);
    const Estimate val =
        identify_parameters(model, layout, tensor, cal.p, sp.validation, opts.fit);

    sc.p_cal = cal.p;
    sc.C_cal = cal.C;
    sc.p_val = val.p;
    bool clipped = false;
    sc.mahalanobis_sq = mahalanobis_sq(val.p, cal.p, cal.C, &clipped);
    sc.covariance_clipped = clipped || cal.covariance_fallback;
    sc.alpha_min = 1.0 - chi2_cdf(sc.mahalanobis_sq, model.n_p);
    sc.rejected = sc.alpha_min < report.threshold;
    report.scenarios.push_back(sc);
    if (sc.rejected && !opts.evaluate_all_scenarios) break;
  }

  report.verdict = std::any_of(report.scenarios.begin(), report.scenarios.end(),
                               [](const ScenarioResult& s) { return s.rejected; })
                       ? 1
                       : 0;
  return report;
}

}  // namespace udet
