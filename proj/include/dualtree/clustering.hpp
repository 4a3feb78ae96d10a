#pragma once

// Gaussian-mixture soft clustering over dense row vectors (one item per row).
// Everything is templated on the scalar type; index builds use double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "dualtree/errors.hpp"
#include "dualtree/text.hpp"

namespace dualtree {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct GmmOptions {
  double tolerance = 1e-4;  // stop when mean per-item log-likelihood gain falls below this
  int max_iterations = 200;
  double variance_floor = 1e-6;
};

template <typename Scalar>
struct GmmModel {
  Matrix<Scalar> means;      // k x d
  Matrix<Scalar> variances;  // k x d, diagonal covariances
  Vector<Scalar> weights;    // k, sums to 1
  Scalar log_likelihood = 0;
  int n_iter = 0;
  std::vector<Scalar> log_likelihood_history;  // one entry per E-step

  Eigen::Index k() const { return means.rows(); }
  Eigen::Index dim() const { return means.cols(); }
};

template <typename Scalar>
struct SoftAssignment {
  Matrix<Scalar> responsibilities;                  // n x k, row-stochastic
  std::vector<std::vector<Eigen::Index>> memberships;  // per item, ascending, never empty
};

namespace detail {

template <typename Scalar>
std::uint64_t row_hash(const Eigen::Ref<const RowVector<Scalar>>& row) {
  std::string bytes;
  bytes.reserve(static_cast<std::size_t>(row.size()) * sizeof(double));
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    double v = static_cast<double>(row[j]);
    if (v == 0.0) v = 0.0;  // fold -0.0
    char buf[sizeof(double)];
    std::memcpy(buf, &v, sizeof(double));
    bytes.append(buf, sizeof(double));
  }
  return fnv1a64(bytes);
}

template <typename Scalar>
Scalar log_sum_exp(const Eigen::Ref<const RowVector<Scalar>>& row) {
  const Scalar m = row.maxCoeff();
  if (!std::isfinite(static_cast<double>(m))) return m;
  return m + std::log((row.array() - m).exp().sum());
}

// n x k matrix of log(w_j) + log N(x_i | mu_j, diag(var_j)).
template <typename Scalar>
Matrix<Scalar> weighted_log_density(const GmmModel<Scalar>& model, const Matrix<Scalar>& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index k = model.k();
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  Matrix<Scalar> out(n, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto var = model.variances.row(j).array();
    const Scalar log_det = var.log().sum();
    const Scalar log_w = model.weights[j] > 0 ? std::log(model.weights[j]) : -std::numeric_limits<Scalar>::infinity();
    const Matrix<Scalar> diff = x.rowwise() - model.means.row(j);
    const Vector<Scalar> quad = (diff.array().square().rowwise() / var).rowwise().sum();
    out.col(j) = (quad.array() + log_det + static_cast<Scalar>(d * kLog2Pi)) * Scalar(-0.5) + log_w;
  }
  return out;
}

}  // namespace detail

// Item order sorted by a content hash of each row (ties by value), so any
// permutation of the same rows maps to one canonical sequence.
template <typename Derived>
std::vector<Eigen::Index> canonical_order(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::vector<std::uint64_t> h(idx.size());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    h[static_cast<std::size_t>(i)] = detail::row_hash<Scalar>(x.row(i));
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    const auto ha = h[static_cast<std::size_t>(a)];
    const auto hb = h[static_cast<std::size_t>(b)];
    if (ha != hb) return ha < hb;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
    return false;
  });
  return idx;
}

template <typename Derived>
Matrix<typename Derived::Scalar> permute_rows(const Eigen::MatrixBase<Derived>& x,
                                              const std::vector<Eigen::Index>& order) {
  Matrix<typename Derived::Scalar> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < order.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(order[i]);
  return out;
}

// Seeded k-means++ picks the initial means, then diagonal-covariance EM runs
// until the gain per item drops below tolerance or max_iterations M-steps. The
// log-likelihood is nondecreasing across E-steps. Rows are processed in
// canonical order, so the model does not depend on input row order.
// All-identical rows yield a single component with floored variances.
template <typename Derived>
GmmModel<typename Derived::Scalar> fit_gmm(const Eigen::MatrixBase<Derived>& input, Eigen::Index k,
                                           std::uint64_t seed, const GmmOptions& opts = {}) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = input.rows();
  const Eigen::Index d = input.cols();
  if (k < 1 || n < k)
    throw InvalidKError("fit_gmm: need n >= k >= 1 (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");
  if (d < 1) throw PreconditionError("fit_gmm: zero-dimensional data");
  if (!input.allFinite()) throw PreconditionError("fit_gmm: non-finite input");

  const Matrix<Scalar> x = permute_rows(input, canonical_order(input));
  const auto floor = static_cast<Scalar>(opts.variance_floor);

  GmmModel<Scalar> model;
  const bool degenerate = ((x.rowwise() - x.row(0)).cwiseAbs().maxCoeff() == Scalar(0));
  if (degenerate) k = 1;

  // k-means++ seeding over the canonical rows.
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> centers;
  centers.push_back(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
  Vector<Scalar> dist2 = (x.rowwise() - x.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<Eigen::Index>(centers.size()) < k) {
    const Scalar total = dist2.sum();
    Eigen::Index pick = 0;
    if (total > 0) {
      const Scalar u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * total;
      Scalar acc = 0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc > u && dist2[i] > 0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    }
    centers.push_back(pick);
    dist2 = dist2.cwiseMin((x.rowwise() - x.row(pick)).rowwise().squaredNorm());
  }

  const RowVector<Scalar> mean_all = x.colwise().mean();
  const RowVector<Scalar> var_all =
      ((x.rowwise() - mean_all).array().square().colwise().sum() / static_cast<Scalar>(n)).max(floor).matrix();
  model.means.resize(k, d);
  model.variances.resize(k, d);
  for (Eigen::Index j = 0; j < k; ++j) {
    model.means.row(j) = x.row(centers[static_cast<std::size_t>(j)]);
    model.variances.row(j) = var_all;
  }
  model.weights = Vector<Scalar>::Constant(k, Scalar(1) / static_cast<Scalar>(k));

  Matrix<Scalar> resp(n, k);
  for (int iter = 0;; ++iter) {
    // E-step
    const Matrix<Scalar> logp = detail::weighted_log_density(model, x);
    Scalar ll = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar lse = detail::log_sum_exp<Scalar>(logp.row(i));
      resp.row(i) = (logp.row(i).array() - lse).exp();
      ll += lse;
    }
    const bool converged =
        !model.log_likelihood_history.empty() &&
        (ll - model.log_likelihood_history.back()) / static_cast<Scalar>(n) < static_cast<Scalar>(opts.tolerance);
    model.log_likelihood_history.push_back(ll);
    model.log_likelihood = ll;
    if (converged || iter >= opts.max_iterations || degenerate) break;

    // M-step
    const Vector<Scalar> nk = resp.colwise().sum().transpose();
    for (Eigen::Index j = 0; j < k; ++j) {
      model.weights[j] = nk[j] / static_cast<Scalar>(n);
      if (nk[j] <= std::numeric_limits<Scalar>::min()) continue;  // dead component keeps its parameters
      const RowVector<Scalar> mu = (resp.col(j).transpose() * x) / nk[j];
      const Matrix<Scalar> diff = x.rowwise() - mu;
      const RowVector<Scalar> var = (resp.col(j).transpose() * diff.array().square().matrix()) / nk[j];
      model.means.row(j) = mu;
      model.variances.row(j) = var.array().max(floor).matrix();
    }
    model.weights /= model.weights.sum();
    model.n_iter = iter + 1;
  }
  return model;
}

template <typename Scalar>
Scalar bic(const GmmModel<Scalar>& model, Eigen::Index n) {
  const auto k = static_cast<Scalar>(model.k());
  const auto d = static_cast<Scalar>(model.dim());
  const Scalar params = Scalar(2) * k * d + (k - Scalar(1));
  return params * std::log(static_cast<Scalar>(n)) - Scalar(2) * model.log_likelihood;
}

// Fits k = 1..min(k_max, n) and keeps the lowest BIC; ties go to smaller k.
template <typename Derived>
GmmModel<typename Derived::Scalar> select_k(const Eigen::MatrixBase<Derived>& x, Eigen::Index k_max,
                                            std::uint64_t seed, const GmmOptions& opts = {}) {
  using Scalar = typename Derived::Scalar;
  if (k_max < 1) throw InvalidKError("select_k: k_max must be >= 1");
  if (x.rows() < 1) throw InvalidKError("select_k: no items");
  std::optional<GmmModel<Scalar>> best;
  Scalar best_bic = std::numeric_limits<Scalar>::infinity();
  const Eigen::Index upper = std::min<Eigen::Index>(k_max, x.rows());
  for (Eigen::Index k = 1; k <= upper; ++k) {
    auto m = fit_gmm(x, k, seed, opts);
    if (m.k() < k) {  // degenerate data collapsed to one component
      if (!best) best = std::move(m);
      break;
    }
    const Scalar b = bic(m, x.rows());
    if (!best || b < best_bic) {
      best_bic = b;
      best = std::move(m);
    }
  }
  return std::move(*best);
}

// Bayes-rule responsibilities; an item belongs to every component at or above
// `threshold`, and always to its argmax.
template <typename Scalar, typename Derived>
SoftAssignment<Scalar> soft_assign(const GmmModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x,
                                   double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw PreconditionError("soft_assign: threshold must be in (0, 1)");
  const Matrix<Scalar> xs = x.template cast<Scalar>();
  const Matrix<Scalar> logp = detail::weighted_log_density(model, xs);
  SoftAssignment<Scalar> out;
  out.responsibilities.resize(xs.rows(), model.k());
  out.memberships.resize(static_cast<std::size_t>(xs.rows()));
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    const Scalar lse = detail::log_sum_exp<Scalar>(logp.row(i));
    out.responsibilities.row(i) = (logp.row(i).array() - lse).exp();
    Eigen::Index arg = 0;
    out.responsibilities.row(i).maxCoeff(&arg);
    auto& m = out.memberships[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < model.k(); ++j)
      if (j == arg || out.responsibilities(i, j) >= static_cast<Scalar>(threshold)) m.push_back(j);
  }
  return out;
}

// PCA projection onto the top `target_dim` principal axes. Each axis is signed
// so its largest-magnitude loading is positive. The seed is accepted for
// interface symmetry; the projection itself is deterministic.
template <typename Derived>
Matrix<typename Derived::Scalar> reduce_dim(const Eigen::MatrixBase<Derived>& x, Eigen::Index target_dim,
                                            std::uint64_t /*seed*/ = 0) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (target_dim < 1 || target_dim > d)
    throw PreconditionError("reduce_dim: target_dim must be in [1, " + std::to_string(d) + "]");
  const Matrix<Scalar> centered = x.rowwise() - x.colwise().mean();
  Matrix<Scalar> axes(d, target_dim);

  if (d <= 512 || n >= d) {
    const Matrix<Scalar> cov = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(cov);
    for (Eigen::Index c = 0; c < target_dim; ++c) axes.col(c) = es.eigenvectors().col(d - 1 - c);
  } else {
    // Wide data: work in the n x n Gram space.
    const Matrix<Scalar> gram = centered * centered.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(gram);
    for (Eigen::Index c = 0; c < target_dim; ++c) {
      if (c >= n) {
        axes.col(c).setZero();
        continue;
      }
      const Scalar lambda = es.eigenvalues()[n - 1 - c];
      if (lambda <= Scalar(0)) {
        axes.col(c).setZero();
        continue;
      }
      axes.col(c) = centered.transpose() * es.eigenvectors().col(n - 1 - c) / std::sqrt(lambda);
    }
  }
  for (Eigen::Index c = 0; c < target_dim; ++c) {
    Eigen::Index arg = 0;
    axes.col(c).cwiseAbs().maxCoeff(&arg);
    if (axes(arg, c) < 0) axes.col(c) *= Scalar(-1);
  }
  return centered * axes;
}

inline Eigen::Index default_reduced_dim(Eigen::Index n, Eigen::Index dim) {
  const auto logn = n > 1 ? static_cast<Eigen::Index>(std::ceil(std::log2(static_cast<double>(n)))) : 0;
  return std::clamp<Eigen::Index>(10 * logn, 1, dim);
}

inline Eigen::Index default_k_max(Eigen::Index n) {
  return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::ceil(std::sqrt(static_cast<double>(n)))), 1, 50);
}

struct ClusteringParams {
  double threshold = 0.1;
  std::optional<Eigen::Index> reduced_dim;  // default_reduced_dim when empty
  std::optional<Eigen::Index> k_max;        // default_k_max when empty
  GmmOptions gmm;
  std::uint64_t seed = 0;
};

struct ClusterResult {
  std::vector<std::vector<std::size_t>> clusters;  // member indices into the input rows, ascending
  Eigen::Index k = 0;
};

// reduce_dim (capped at n - 1 axes) -> select_k -> soft_assign, all in
// canonical row order, then mapped back to input indices. Empty components
// are dropped.
template <typename Derived>
ClusterResult soft_cluster(const Eigen::MatrixBase<Derived>& input, const ClusteringParams& params) {
  const Eigen::Index n = input.rows();
  ClusterResult out;
  if (n == 0) return out;
  if (n == 1) {
    out.clusters = {{0}};
    out.k = 1;
    return out;
  }
  const Matrix<double> x = input.template cast<double>();
  const auto order = canonical_order(x);
  const Matrix<double> canon = permute_rows(x, order);
  // n centred rows span at most n - 1 axes; the rest would only be floored noise.
  const Eigen::Index target = std::min<Eigen::Index>(
      params.reduced_dim ? std::clamp<Eigen::Index>(*params.reduced_dim, 1, x.cols()) : default_reduced_dim(n, x.cols()),
      std::max<Eigen::Index>(1, n - 1));
  const Matrix<double> reduced = target < x.cols() ? reduce_dim(canon, target, params.seed) : canon;
  const auto model = select_k(reduced, params.k_max.value_or(default_k_max(n)), params.seed, params.gmm);
  const auto assign = soft_assign(model, reduced, params.threshold);

  std::vector<std::vector<std::size_t>> by_component(static_cast<std::size_t>(model.k()));
  for (std::size_t i = 0; i < order.size(); ++i)
    for (auto j : assign.memberships[i]) by_component[static_cast<std::size_t>(j)].push_back(static_cast<std::size_t>(order[i]));
  for (auto& c : by_component) {
    if (c.empty()) continue;
    std::sort(c.begin(), c.end());
    out.clusters.push_back(std::move(c));
  }
  out.k = model.k();
  return out;
}

}  // namespace dualtree
