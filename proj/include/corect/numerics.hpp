#pragma once

// Dense vector/matrix kernels and probability helpers shared by the engine.
// Everything here is a pure function over values; nothing holds state.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace corect {

using TokenId = std::int32_t;
using Vec = std::vector<double>;

/// Row-major dense matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Mat identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  Vec column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> v);
  void set_row(std::size_t r, std::span<const double> v);

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  Mat transposed() const;

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// A validated distribution over the vocabulary.
class ProbDist {
 public:
  ProbDist() = default;
  /// Throws ValidationError unless every entry is in [0,1] and the sum is 1 within 1e-6.
  explicit ProbDist(std::vector<double> probs);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  const std::vector<double>& probs() const { return probs_; }
  std::span<const double> span() const { return probs_; }

 private:
  std::vector<double> probs_;
};

inline constexpr double kLayerNormEps = 1e-5;

// --- vector algebra --------------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
/// y += scale * x
void axpy(double scale, std::span<const double> x, std::span<double> y);
Vec add(std::span<const double> a, std::span<const double> b);
Vec sub(std::span<const double> a, std::span<const double> b);
Vec scaled(std::span<const double> a, double s);
bool all_finite(std::span<const double> a);

/// M x
Vec matvec(const Mat& m, std::span<const double> x);
/// M^T x
Vec matvec_t(const Mat& m, std::span<const double> x);
Mat matmul(const Mat& a, const Mat& b);
Mat outer(std::span<const double> a, std::span<const double> b);

/// -alpha * (u.w / |w|^2) w. Throws ValidationError when w is zero.
Vec projection_removal(std::span<const double> u, std::span<const double> w, double alpha);

/// Solves A x = b by LU with partial pivoting; throws NumericError when A is singular.
Vec solve(const Mat& a, std::span<const double> b);

// --- probability -------------------------------------------------------------

ProbDist softmax(std::span<const double> z);
Vec log_softmax(std::span<const double> z);

/// Normalizes exp(w) where entries may be -inf (mapped to probability zero).
ProbDist normalize_log_weights(std::span<const double> log_weights);

double kl_divergence(const ProbDist& p, const ProbDist& q);
/// Jensen-Shannon divergence with natural log, in [0, ln 2].
double jensen_shannon(const ProbDist& p, const ProbDist& q);
/// Shannon entropy in nats.
double entropy(const ProbDist& p);

// --- misc --------------------------------------------------------------------

Vec layer_norm(std::span<const double> x, std::span<const double> gain,
               std::span<const double> bias);

/// 1-based rank: 1 + #tokens with strictly greater logit + #tied tokens with lower id.
std::size_t rank_of(TokenId token, std::span<const double> z);

/// Index of the maximum; ties resolved toward the lower index.
TokenId argmax(std::span<const double> z);

/// Rounds to the nearest float, so values survive an f32 round trip unchanged.
double round_to_f32(double v);

}  // namespace corect
