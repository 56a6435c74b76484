#pragma once

// Limited-memory BFGS and plain gradient descent for convex objectives of the form
//
//   f(w) = L(Xw) + (lambda/2) <w, w>,
//
// where the data term only depends on the scores Xw. The vector space is a
// policy (`Space`) so the same loop runs on explicit weight vectors and on
// kernel coefficients (w = X^T beta). Because scores are linear in w, the
// line search evaluates f(w + t d) from cached scores in O(n) per trial.

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <limits>
#include <utility>
#include <vector>

namespace spurlab {

enum class Solver { lbfgs, gradient_descent };

struct MinimizeOptions {
  Solver solver = Solver::lbfgs;
  double grad_tol = 1e-8;
  int max_iters = 20000;
  int memory = 20;
};

template <typename Vec>
struct MinimizeResult {
  Vec x;
  bool converged = false;
  double grad_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  double value = std::numeric_limits<double>::infinity();
};

/// Data term L(s) = sum_i c_i softplus(-y_i s_i) together with its line restriction.
///
/// `c` already includes any 1/n normalization.
class WeightedLogisticLoss {
 public:
  WeightedLogisticLoss(Eigen::VectorXd y, Eigen::VectorXd c) : y_(std::move(y)), c_(std::move(c)) {}

  static double softplus(double t) noexcept {
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
  }
  /// sigma(-z) = 1 / (1 + e^z), computed without overflow.
  static double sigmoid_neg(double z) noexcept {
    if (z >= 0.0) {
      const double e = std::exp(-z);
      return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(z));
  }

  double value(const Eigen::VectorXd& s) const {
    double f = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) f += c_[i] * softplus(-y_[i] * s[i]);
    return f;
  }

  /// dL/ds.
  Eigen::VectorXd score_gradient(const Eigen::VectorXd& s) const {
    Eigen::VectorXd r(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) r[i] = -c_[i] * y_[i] * sigmoid_neg(y_[i] * s[i]);
    return r;
  }

  /// Value and derivative of t -> L(s + t ds).
  std::pair<double, double> along(const Eigen::VectorXd& s, const Eigen::VectorXd& ds,
                                  double t) const {
    double f = 0.0;
    double df = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double z = y_[i] * (s[i] + t * ds[i]);
      f += c_[i] * softplus(-z);
      df -= c_[i] * sigmoid_neg(z) * y_[i] * ds[i];
    }
    return {f, df};
  }

  const Eigen::VectorXd& weights() const noexcept { return c_; }
  const Eigen::VectorXd& labels() const noexcept { return y_; }

 private:
  Eigen::VectorXd y_;
  Eigen::VectorXd c_;
};

/// Weight vectors in R^D with the data matrix X.
struct PrimalSpace {
  using Vec = Eigen::VectorXd;
  const Eigen::MatrixXd& x;

  Vec zero() const { return Vec::Zero(x.cols()); }
  static double dot(const Vec& a, const Vec& b) { return a.dot(b); }
  static void axpy(double alpha, const Vec& v, Vec& out) { out.noalias() += alpha * v; }
  static void scale(Vec& v, double alpha) { v *= alpha; }
  Eigen::VectorXd scores(const Vec& w) const { return x * w; }
  Vec gradient(const Eigen::VectorXd& r, const Vec& w, double lambda) const {
    Vec g = x.transpose() * r;
    g += lambda * w;
    return g;
  }
};

/// Vectors w = X^T c represented by (c, K c) with K = X X^T, so that inner
/// products <w, v> = c_w . (K c_v) cost O(n) and scores X w = K c are free.
struct GramSpace {
  struct Vec {
    Eigen::VectorXd c;
    Eigen::VectorXd kc;
  };
  const Eigen::MatrixXd& k;

  Vec zero() const { return {Eigen::VectorXd::Zero(k.rows()), Eigen::VectorXd::Zero(k.rows())}; }
  static double dot(const Vec& a, const Vec& b) { return a.c.dot(b.kc); }
  static void axpy(double alpha, const Vec& v, Vec& out) {
    out.c.noalias() += alpha * v.c;
    out.kc.noalias() += alpha * v.kc;
  }
  static void scale(Vec& v, double alpha) {
    v.c *= alpha;
    v.kc *= alpha;
  }
  static Eigen::VectorXd scores(const Vec& w) { return w.kc; }
  Vec gradient(const Eigen::VectorXd& r, const Vec& w, double lambda) const {
    Vec g{r + lambda * w.c, Eigen::VectorXd()};
    g.kc.noalias() = k * r;
    g.kc += lambda * w.kc;
    return g;
  }
};

namespace detail {

/// Weak Wolfe line search on the convex restriction phi(t) = f(x + t d).
/// Also accepts approximate-Wolfe points (Hager-Zhang) where rounding hides
/// the sufficient-decrease test. Returns 0 on failure.
template <typename Phi>
double wolfe_search(const Phi& phi, double f0, double slope0, double t0) {
  constexpr double c1 = 1e-4;
  constexpr double c2 = 0.9;
  const double eps_f = 1e-12 * std::abs(f0);
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double t = t0;
  for (int k = 0; k < 200; ++k) {
    const auto [f, df] = phi(t);
    const bool finite = std::isfinite(f) && std::isfinite(df);
    const bool armijo = finite && f <= f0 + c1 * t * slope0;
    const bool approx = finite && f <= f0 + eps_f && df <= (2.0 * c1 - 1.0) * slope0 &&
                        df >= c2 * slope0;
    if (approx) return t;
    if (!armijo) {
      hi = t;
    } else if (df < c2 * slope0) {
      lo = t;
    } else {
      return t;
    }
    t = std::isinf(hi) ? 2.0 * t : 0.5 * (lo + hi);
    if (hi - lo <= 1e-16 * std::max(1.0, hi)) break;
  }
  return lo;
}

}  // namespace detail

/// Minimizes loss(scores(w)) + lambda/2 <w, w> from `x0`.
template <typename Space>
MinimizeResult<typename Space::Vec> minimize_logistic(const Space& space,
                                                       const WeightedLogisticLoss& loss,
                                                       double lambda, typename Space::Vec x0,
                                                       const MinimizeOptions& opt) {
  using Vec = typename Space::Vec;
  MinimizeResult<Vec> res;
  Vec w = std::move(x0);
  Eigen::VectorXd s = space.scores(w);
  auto objective = [&](const Eigen::VectorXd& sc, const Vec& v) {
    return loss.value(sc) + 0.5 * lambda * Space::dot(v, v);
  };
  double f = objective(s, w);
  Vec g = space.gradient(loss.score_gradient(s), w, lambda);
  double gnorm = std::sqrt(std::max(0.0, Space::dot(g, g)));

  std::deque<Vec> s_hist;
  std::deque<Vec> y_hist;
  std::deque<double> rho_hist;
  double prev_step = 1.0;
  int failures = 0;

  int it = 0;
  for (; it < opt.max_iters && gnorm > opt.grad_tol; ++it) {
    // Search direction.
    Vec d = g;
    if (opt.solver == Solver::lbfgs && !s_hist.empty()) {
      const std::size_t m = s_hist.size();
      std::vector<double> alpha(m);
      for (std::size_t k = m; k-- > 0;) {
        alpha[k] = rho_hist[k] * Space::dot(s_hist[k], d);
        Space::axpy(-alpha[k], y_hist[k], d);
      }
      const double gamma = Space::dot(s_hist.back(), y_hist.back()) /
                           Space::dot(y_hist.back(), y_hist.back());
      Space::scale(d, gamma);
      for (std::size_t k = 0; k < m; ++k) {
        const double beta = rho_hist[k] * Space::dot(y_hist[k], d);
        Space::axpy(alpha[k] - beta, s_hist[k], d);
      }
    }
    Space::scale(d, -1.0);

    const Eigen::VectorXd sd = space.scores(d);
    const double wd = Space::dot(w, d);
    const double dd = Space::dot(d, d);
    const double ww = Space::dot(w, w);
    auto phi = [&](double t) {
      const auto [lf, ldf] = loss.along(s, sd, t);
      return std::pair{lf + 0.5 * lambda * (ww + 2.0 * t * wd + t * t * dd),
                       ldf + lambda * (wd + t * dd)};
    };
    const double slope0 = phi(0.0).second;
    if (!(slope0 < 0.0)) {
      if (s_hist.empty()) break;
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      continue;
    }

    double t0 = 1.0;
    if (s_hist.empty()) t0 = (it == 0) ? std::min(1.0, 1.0 / gnorm) : prev_step;
    if (opt.solver == Solver::gradient_descent) t0 = 2.0 * prev_step;
    const double t = detail::wolfe_search(phi, f, slope0, t0);
    if (t <= 0.0) {
      if (++failures >= 2 || s_hist.empty()) break;
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      continue;
    }
    failures = 0;
    prev_step = t;

    Space::axpy(t, d, w);
    s.noalias() += t * sd;
    f = objective(s, w);
    Vec g_new = space.gradient(loss.score_gradient(s), w, lambda);

    if (opt.solver == Solver::lbfgs) {
      Vec step = d;
      Space::scale(step, t);
      Vec dy = g_new;
      Space::axpy(-1.0, g, dy);
      const double sy = Space::dot(step, dy);
      if (sy > 1e-14 * std::sqrt(Space::dot(step, step) * Space::dot(dy, dy)) && sy > 0.0) {
        s_hist.push_back(std::move(step));
        y_hist.push_back(std::move(dy));
        rho_hist.push_back(1.0 / sy);
        if (static_cast<int>(s_hist.size()) > opt.memory) {
          s_hist.pop_front();
          y_hist.pop_front();
          rho_hist.pop_front();
        }
      }
    }
    g = std::move(g_new);
    gnorm = std::sqrt(std::max(0.0, Space::dot(g, g)));
  }

  res.x = std::move(w);
  res.grad_norm = gnorm;
  res.converged = gnorm <= opt.grad_tol;
  res.iterations = it;
  res.value = f;
  return res;
}

}  // namespace spurlab
