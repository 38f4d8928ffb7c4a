#include "mhf/profile.hpp"

#include <fftw3.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>

#include "mhf/core_data.hpp"
#include "mhf/errors.hpp"

namespace mhf {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::size_t fft_size(std::size_t n) {
  std::size_t N = 1;
  while (N < n) N <<= 1;
  return N;
}

// Circular correlation c[i] = sum_k q[k] s[i + k] for i in [0, n - m].
std::vector<double> sliding_dot(std::span<const double> q, std::span<const double> s) {
  const std::size_t n = s.size(), m = q.size();
  const std::size_t N = fft_size(n);
  const std::size_t nc = N / 2 + 1;
  double* a = fftw_alloc_real(N);
  double* b = fftw_alloc_real(N);
  fftw_complex* A = fftw_alloc_complex(nc);
  fftw_complex* B = fftw_alloc_complex(nc);
  fftw_plan pa, pb, pinv;
  {
    std::lock_guard lock(planner_mutex());
    pa = fftw_plan_dft_r2c_1d(static_cast<int>(N), a, A, FFTW_ESTIMATE);
    pb = fftw_plan_dft_r2c_1d(static_cast<int>(N), b, B, FFTW_ESTIMATE);
    pinv = fftw_plan_dft_c2r_1d(static_cast<int>(N), A, a, FFTW_ESTIMATE);
  }
  std::fill(a, a + N, 0.0);
  std::fill(b, b + N, 0.0);
  std::copy(s.begin(), s.end(), a);
  for (std::size_t k = 0; k < m; ++k) b[k] = q[m - 1 - k];
  fftw_execute(pa);
  fftw_execute(pb);
  for (std::size_t i = 0; i < nc; ++i) {
    const double re = A[i][0] * B[i][0] - A[i][1] * B[i][1];
    const double im = A[i][0] * B[i][1] + A[i][1] * B[i][0];
    A[i][0] = re;
    A[i][1] = im;
  }
  fftw_execute(pinv);
  std::vector<double> out(n - m + 1);
  const double scale = 1.0 / static_cast<double>(N);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i + m - 1] * scale;
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(pa);
    fftw_destroy_plan(pb);
    fftw_destroy_plan(pinv);
  }
  fftw_free(a);
  fftw_free(b);
  fftw_free(A);
  fftw_free(B);
  return out;
}

double direct_znorm_distance(std::span<const double> a, std::span<const double> b) {
  const auto za = znormalize(a);
  const auto zb = znormalize(b);
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (za.values[k] - zb.values[k]) * (za.values[k] - zb.values[k]);
  return std::sqrt(s);
}

double global_mean(std::span<const double> x) {
  long double s = 0.0L;
  for (double v : x) s += v;
  return static_cast<double>(s / static_cast<long double>(x.size()));
}

void check_curve(const std::vector<double>& p) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0)) throw std::logic_error("sampling curve has a negative entry");
    if (i > 0 && p[i] < p[i - 1]) throw std::logic_error("sampling curve decreases");
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::logic_error("sampling curve does not sum to 1");
}

}  // namespace

WindowStats window_stats(std::span<const double> series, std::size_t m) {
  const std::size_t n = series.size();
  if (m == 0 || m > n) throw ShapeError("window_stats: need 1 <= m <= n");
  const std::size_t L = n - m + 1;
  const double g = global_mean(series);
  std::vector<long double> s1(n + 1, 0.0L), s2(n + 1, 0.0L);
  for (std::size_t i = 0; i < n; ++i) {
    const long double v = series[i] - g;
    s1[i + 1] = s1[i] + v;
    s2[i + 1] = s2[i] + v * v;
  }
  // run_end[i]: first index after i holding a different value
  std::vector<std::size_t> run_end(n);
  run_end[n - 1] = n;
  for (std::size_t i = n - 1; i-- > 0;) run_end[i] = series[i] == series[i + 1] ? run_end[i + 1] : i + 1;

  WindowStats st;
  st.mean.resize(L);
  st.sd.resize(L);
  st.degenerate.resize(L);
  const auto lm = static_cast<long double>(m);
  for (std::size_t i = 0; i < L; ++i) {
    const long double mu = (s1[i + m] - s1[i]) / lm;
    const long double var = (s2[i + m] - s2[i]) / lm - mu * mu;
    st.mean[i] = static_cast<double>(mu) + g;
    st.sd[i] = var > 0.0L ? static_cast<double>(std::sqrt(var)) : 0.0;
    st.degenerate[i] = run_end[i] >= i + m || st.sd[i] == 0.0;
  }
  return st;
}

DistanceProfile mass(std::span<const double> query, std::span<const double> series) {
  const std::size_t m = query.size(), n = series.size();
  if (m == 0 || m > n) throw ShapeError("mass: need 1 <= query length <= series length");
  const auto zq = znormalize(query);
  if (zq.degenerate) throw DataError("mass: query has zero variance");
  double mq = 0.0;
  for (double v : query) mq += v;
  mq /= static_cast<double>(m);
  double vq = 0.0;
  std::vector<double> qc(m);
  for (std::size_t k = 0; k < m; ++k) {
    qc[k] = query[k] - mq;
    vq += qc[k] * qc[k];
  }
  const double sq = std::sqrt(vq / static_cast<double>(m));

  const double g = global_mean(series);
  std::vector<double> sc(n);
  for (std::size_t i = 0; i < n; ++i) sc[i] = series[i] - g;
  const auto dots = sliding_dot(qc, sc);
  const auto st = window_stats(series, m);

  DistanceProfile dp;
  dp.m = m;
  dp.distances.resize(dots.size());
  dp.degenerate = st.degenerate;
  const double md = static_cast<double>(m);
  const double d_max = std::sqrt(2.0 * md);
  for (std::size_t i = 0; i < dots.size(); ++i) {
    if (st.degenerate[i]) {
      dp.distances[i] = d_max;
      continue;
    }
    const double rho = std::clamp(dots[i] / (md * sq * st.sd[i]), -1.0, 1.0);
    if (1.0 - rho < 1e-6) {
      dp.distances[i] = direct_znorm_distance(query, series.subspan(i, m));
    } else {
      dp.distances[i] = std::sqrt(2.0 * md * (1.0 - rho));
    }
  }
  return dp;
}

std::size_t default_exclusion_radius(std::size_t m) { return (m + 1) / 2; }

namespace {

void check_mpi_args(std::size_t n, std::size_t m) {
  if (m < 2) throw ShapeError("matrix profile: subsequence length must be >= 2");
  if (n < 2 * m) {
    throw DataError("matrix profile: series length " + std::to_string(n) + " shorter than 2m = " +
                    std::to_string(2 * m));
  }
}

bool allowed(std::size_t i, std::size_t j, std::size_t r) { return (i > j ? i - j : j - i) > r; }

constexpr std::size_t kRowChunk = 256;

}  // namespace

MatrixProfileIndex matrix_profile_index(std::span<const double> series, std::size_t m, std::size_t exclusion_radius) {
  const std::size_t n = series.size();
  check_mpi_args(n, m);
  const std::size_t L = n - m + 1;
  const double g = global_mean(series);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = series[i] - g;
  const auto st = window_stats(series, m);
  std::vector<double> mu(L), inv(L);
  for (std::size_t i = 0; i < L; ++i) {
    mu[i] = st.mean[i] - g;
    inv[i] = st.degenerate[i] ? 0.0 : 1.0 / st.sd[i];
  }
  const double md = static_cast<double>(m);

  MatrixProfileIndex out;
  out.m = m;
  out.exclusion_radius = exclusion_radius;
  out.nn_index.assign(L, -1);
  out.distances.assign(L, 0.0);
  const std::size_t n_chunks = (L + kRowChunk - 1) / kRowChunk;

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(n_chunks); ++ci) {
    const std::size_t r0 = static_cast<std::size_t>(ci) * kRowChunk;
    const std::size_t r1 = std::min(L, r0 + kRowChunk);
    std::vector<double> qt(L);
    for (std::size_t j = 0; j < L; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += x[r0 + k] * x[j + k];
      qt[j] = s;
    }
    for (std::size_t i = r0; i < r1; ++i) {
      if (i > r0) {
        for (std::size_t j = L - 1; j >= 1; --j) qt[j] = qt[j - 1] - x[i - 1] * x[j - 1] + x[i + m - 1] * x[j + m - 1];
        double s = 0.0;
        for (std::size_t k = 0; k < m; ++k) s += x[i + k] * x[k];
        qt[0] = s;
      }
      double best = -std::numeric_limits<double>::infinity();
      std::int64_t arg = -1;
      for (std::size_t j = 0; j < L; ++j) {
        if (!allowed(i, j, exclusion_radius)) continue;
        double rho = 0.0;
        if (!st.degenerate[i] && !st.degenerate[j]) {
          rho = std::clamp((qt[j] - md * mu[i] * mu[j]) * inv[i] * inv[j] / md, -1.0, 1.0);
        }
        if (rho > best + mpi_tie_tolerance) {
          best = rho;
          arg = static_cast<std::int64_t>(j);
        }
      }
      out.nn_index[i] = arg;
      out.distances[i] = std::sqrt(std::max(0.0, 2.0 * md * (1.0 - best)));
    }
  }
  return out;
}

MatrixProfileIndex matrix_profile_index_reference(std::span<const double> series, std::size_t m,
                                                  std::size_t exclusion_radius) {
  const std::size_t n = series.size();
  check_mpi_args(n, m);
  const std::size_t L = n - m + 1;
  const auto st = window_stats(series, m);
  const double d_max = std::sqrt(2.0 * static_cast<double>(m));
  MatrixProfileIndex out;
  out.m = m;
  out.exclusion_radius = exclusion_radius;
  out.nn_index.assign(L, -1);
  out.distances.assign(L, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    std::vector<double> dist;
    if (st.degenerate[i]) {
      dist.assign(L, d_max);
    } else {
      dist = mass(series.subspan(i, m), series).distances;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < L; ++j) {
      if (!allowed(i, j, exclusion_radius)) continue;
      const double rho = 1.0 - dist[j] * dist[j] / (2.0 * static_cast<double>(m));
      if (rho > best + mpi_tie_tolerance) {
        best = rho;
        out.nn_index[i] = static_cast<std::int64_t>(j);
        out.distances[i] = dist[j];
      }
    }
  }
  return out;
}

std::vector<double> corrected_arc_count(const MatrixProfileIndex& mpi) {
  const std::size_t L = mpi.nn_index.size();
  std::vector<double> cac(L, 1.0);
  if (L == 0) return cac;
  std::vector<long> diff(L + 1, 0);
  for (std::size_t i = 0; i < L; ++i) {
    const auto j = mpi.nn_index[i];
    if (j < 0) continue;
    const std::size_t a = std::min(i, static_cast<std::size_t>(j));
    const std::size_t b = std::max(i, static_cast<std::size_t>(j));
    if (b > a + 1) {
      diff[a + 1] += 1;
      diff[b] -= 1;
    }
  }
  long ac = 0;
  const double Ld = static_cast<double>(L);
  for (std::size_t t = 0; t < L; ++t) {
    ac += diff[t];
    const double td = static_cast<double>(t);
    const double iac = 2.0 * td * (Ld - td) / Ld;
    if (t < mpi.m || t + mpi.m >= L || iac <= 0.0) continue;
    cac[t] = std::min(static_cast<double>(ac) / iac, 1.0);
  }
  return cac;
}

std::vector<double> clamp_and_normalize(std::vector<double> curve) {
  if (curve.empty()) return curve;
  for (std::size_t i = curve.size() - 1; i-- > 0;) curve[i] = std::min(curve[i], curve[i + 1]);
  double sum = 0.0;
  for (double v : curve) sum += v;
  if (!(sum > 0.0)) {
    std::fill(curve.begin(), curve.end(), 1.0 / static_cast<double>(curve.size()));
  } else {
    for (auto& v : curve) v /= sum;
  }
  return curve;
}

SamplingCurve fluss_probability(const Matrix& series, std::size_t m) {
  const std::size_t tau = series.rows();
  check_mpi_args(tau, m);
  const std::size_t L = tau - m + 1;
  SamplingCurve out;
  out.cac_sum.assign(L, 0.0);
  for (std::size_t j = 0; j < series.cols(); ++j) {
    const auto col = series.column(j);
    if (std::all_of(col.begin(), col.end(), [&](double v) { return v == col.front(); })) {
      spdlog::warn("segmentation: dimension {} is constant, skipped", j);
      ++out.skipped_dims;
      continue;
    }
    const auto cac = corrected_arc_count(matrix_profile_index(col, m, default_exclusion_radius(m)));
    for (std::size_t t = 0; t < L; ++t) out.cac_sum[t] += cac[t];
  }
  if (out.skipped_dims == series.cols()) {
    spdlog::warn("segmentation: every dimension is constant, using a uniform curve");
    out.p.assign(L, 1.0 / static_cast<double>(L));
  } else {
    out.p = clamp_and_normalize(out.cac_sum);
  }
  check_curve(out.p);
  return out;
}

}  // namespace mhf
