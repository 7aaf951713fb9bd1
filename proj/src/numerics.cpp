#include "corect/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "corect/errors.hpp"

namespace corect {

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw ValidationError("Mat: " + std::to_string(values_.size()) + " values for " +
                          std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vec Mat::column(std::size_t c) const {
  Vec out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Mat::set_column(std::size_t c, std::span<const double> v) {
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

void Mat::set_row(std::size_t r, std::span<const double> v) {
  std::copy(v.begin(), v.end(), row(r).begin());
}

Mat Mat::transposed() const {
  Mat t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

ProbDist::ProbDist(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw ValidationError("ProbDist: empty distribution");
  double total = 0.0;
  for (double p : probs_) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0 + 1e-12) {
      throw ValidationError("ProbDist: entry outside [0,1]");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ValidationError("ProbDist: entries sum to " + std::to_string(total));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  // Four independent partial sums let the compiler vectorize without fast-math.
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  const std::size_t n = a.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double scale, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += scale * x[i];
}

Vec add(std::span<const double> a, std::span<const double> b) {
  Vec out(a.begin(), a.end());
  axpy(1.0, b, out);
  return out;
}

Vec sub(std::span<const double> a, std::span<const double> b) {
  Vec out(a.begin(), a.end());
  axpy(-1.0, b, out);
  return out;
}

Vec scaled(std::span<const double> a, double s) {
  Vec out(a.begin(), a.end());
  for (double& v : out) v *= s;
  return out;
}

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

Vec matvec(const Mat& m, std::span<const double> x) {
  Vec out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), x);
  return out;
}

Vec matvec_t(const Mat& m, std::span<const double> x) {
  Vec out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (x[r] != 0.0) axpy(x[r], m.row(r), out);
  }
  return out;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw ValidationError("matmul: inner dimensions differ");
  Mat out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      axpy(aik, b.row(k), out.row(i));
    }
  return out;
}

Mat outer(std::span<const double> a, std::span<const double> b) {
  Mat out(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out(i, j) = a[i] * b[j];
  return out;
}

Vec projection_removal(std::span<const double> u, std::span<const double> w, double alpha) {
  if (u.size() != w.size()) throw ValidationError("projection_removal: size mismatch");
  const double ww = dot(w, w);
  if (!(ww > 0.0)) throw ValidationError("projection_removal: zero direction");
  return scaled(w, -alpha * dot(u, w) / ww);
}

Vec solve(const Mat& a, std::span<const double> b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw ValidationError("solve: shape mismatch");
  Mat lu = a;
  Vec x(b.begin(), b.end());
  double scale = 0.0;
  for (double v : lu.values()) scale = std::max(scale, std::abs(v));
  const double tiny = std::max(scale, 1.0) * 1e-13;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(lu(r, col)) > std::abs(lu(pivot, col))) pivot = r;
    if (std::abs(lu(pivot, col)) <= tiny) throw NumericError("solve: matrix is singular");
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(lu(pivot, c), lu(col, c));
      std::swap(x[pivot], x[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = lu(r, col) / lu(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) lu(r, c) -= f * lu(col, c);
      x[r] -= f * x[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= lu(i, c) * x[c];
    x[i] = s / lu(i, i);
  }
  return x;
}

ProbDist softmax(std::span<const double> z) {
  if (z.empty()) throw ValidationError("softmax: empty input");
  if (!all_finite(z)) throw ValidationError("softmax: non-finite logits");
  const double mx = *std::max_element(z.begin(), z.end());
  Vec p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += (p[i] = std::exp(z[i] - mx));
  for (double& v : p) v /= total;
  return ProbDist(std::move(p));
}

Vec log_softmax(std::span<const double> z) {
  if (z.empty()) throw ValidationError("log_softmax: empty input");
  if (!all_finite(z)) throw ValidationError("log_softmax: non-finite logits");
  const double mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

ProbDist normalize_log_weights(std::span<const double> log_weights) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : log_weights) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw ValidationError("normalize_log_weights: NaN or +inf weight");
    }
    mx = std::max(mx, v);
  }
  if (!std::isfinite(mx)) throw ValidationError("normalize_log_weights: no finite weight");
  Vec p(log_weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] = std::exp(log_weights[i] - mx));
  for (double& v : p) v /= total;
  return ProbDist(std::move(p));
}

double kl_divergence(const ProbDist& p, const ProbDist& q) {
  if (p.size() != q.size()) throw ValidationError("kl_divergence: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    s += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(s, 0.0);
}

double jensen_shannon(const ProbDist& p, const ProbDist& q) {
  if (p.size() != q.size()) throw ValidationError("jensen_shannon: size mismatch");
  // Summed term by term in symmetric form so JSD(p,q) and JSD(q,p) agree bitwise.
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    double term = 0.0;
    if (p[i] > 0.0) term += p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) term += q[i] * std::log(q[i] / m);
    s += term;
  }
  return std::clamp(0.5 * s, 0.0, std::log(2.0));
}

double entropy(const ProbDist& p) {
  double s = 0.0;
  for (double v : p.probs())
    if (v > 0.0) s -= v * std::log(v);
  return s;
}

Vec layer_norm(std::span<const double> x, std::span<const double> gain,
               std::span<const double> bias) {
  const std::size_t d = x.size();
  if (d < 2) throw ValidationError("layer_norm: width must be at least 2");
  if (gain.size() != d || bias.size() != d) throw ValidationError("layer_norm: shape mismatch");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  Vec out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
  return out;
}

std::size_t rank_of(TokenId token, std::span<const double> z) {
  if (token < 0 || static_cast<std::size_t>(token) >= z.size()) {
    throw ValidationError("rank_of: token " + std::to_string(token) + " out of range");
  }
  const double zt = z[static_cast<std::size_t>(token)];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] > zt || (z[i] == zt && i < static_cast<std::size_t>(token))) ++rank;
  }
  return rank;
}

TokenId argmax(std::span<const double> z) {
  if (z.empty()) throw ValidationError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < z.size(); ++i)
    if (z[i] > z[best]) best = i;
  return static_cast<TokenId>(best);
}

double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace corect
