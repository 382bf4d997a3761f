#include "d2d/posterior.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "d2d/math.hpp"

namespace d2d {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct PreparedBlock {
  Eigen::MatrixXd costs;   // days x routes
  Eigen::MatrixXd k;       // days x (routes+1) tallies
  Eigen::VectorXd n_travel;
  double multinomial_const = 0.0;
  Eigen::VectorXd v1_base;
  int m = 0;
  int days = 0;
  std::string od_id;
};

PreparedBlock prepare_block(const DataBlock& b, Regime regime, InitValues init) {
  PreparedBlock pb;
  b.costs.validate();
  pb.costs = b.costs.costs;
  pb.m = b.costs.num_routes();
  pb.days = b.costs.horizon();
  pb.od_id = b.costs.od_id;

  const bool counts_regime = regime == Regime::pooled_counts || regime == Regime::hier_counts;
  if (counts_regime) {
    if (!b.counts) throw std::invalid_argument("posterior: counts regime needs a count series");
    b.counts->validate();
    if (b.counts->horizon() != pb.days || b.counts->num_routes() != pb.m)
      throw std::invalid_argument("posterior: counts do not align with costs");
    pb.k = b.counts->counts.cast<double>();
    pb.multinomial_const = multinomial_constant(*b.counts);
  } else {
    if (!b.trajectory) throw std::invalid_argument("posterior: complete regime needs a trajectory");
    b.trajectory->validate();
    if (b.trajectory->horizon() != pb.days || b.trajectory->num_routes != pb.m)
      throw std::invalid_argument("posterior: trajectory does not align with costs");
    pb.k = Eigen::MatrixXd::Zero(pb.days, pb.m + 1);
    for (int n = 0; n < b.trajectory->num_commuters(); ++n)
      for (int t = 0; t < pb.days; ++t) pb.k(t, b.trajectory->choices(n, t)) += 1.0;
  }
  pb.n_travel = pb.k.rightCols(pb.m).rowwise().sum();

  if (init == InitValues::free_flow) {
    if (b.v1_base.size() != pb.m)
      throw std::invalid_argument("posterior: free-flow mode needs base valuations per route");
    pb.v1_base = b.v1_base;
  } else {
    pb.v1_base = Eigen::VectorXd::Zero(pb.m);
  }
  return pb;
}

double normal_term(double x, const NormalPrior& p, double& grad_out) {
  grad_out += -(x - p.mu) / (p.sigma * p.sigma);
  return normal_logpdf(x, p.mu, p.sigma);
}

class PooledPosterior final : public Posterior {
 public:
  PooledPosterior(std::vector<DataBlock> blocks, const PriorSpec& prior,
                  const PosteriorOptions& opt)
      : prior_(prior), opt_(opt) {
    if (blocks.empty()) throw std::invalid_argument("posterior: need at least one data block");
    for (const DataBlock& b : blocks)
      blocks_.push_back(prepare_block(b, opt.regime, opt.init_values));

    layout_.names = {"eta", "theta"};
    if (opt_.sample_rho) layout_.names.push_back("rho");
    if (opt_.init_values == InitValues::endogenous_delta) {
      for (const PreparedBlock& pb : blocks_)
        for (int j = 2; j <= pb.m; ++j)
          layout_.names.push_back(blocks_.size() > 1
                                      ? "delta_" + pb.od_id + "_" + std::to_string(j)
                                      : "delta_" + std::to_string(j));
    }
    delta_at_ = opt_.sample_rho ? 3 : 2;
    dim_ = int(layout_.names.size());
    constrained_names_ = layout_.names;
  }

  int dim() const override { return dim_; }
  const ParamLayout& unconstrained_layout() const override { return layout_; }
  const std::vector<std::string>& constrained_names() const override { return constrained_names_; }

  Eigen::VectorXd to_constrained(const Eigen::VectorXd& u) const override {
    Eigen::VectorXd c = u;
    c[0] = logistic(u[0]);
    c[1] = std::exp(u[1]);
    if (opt_.sample_rho) c[2] = logistic(u[2]);
    return c;
  }

  double value_and_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const override {
    if (u.size() != dim_) throw std::invalid_argument("posterior: dimension mismatch");
    grad.setZero();
    const double eta = logistic(u[0]);
    const double theta = std::exp(u[1]);
    const double rho = opt_.sample_rho ? logistic(u[2]) : opt_.fixed_rho;
    if (!std::isfinite(theta) || eta <= 0.0 || eta >= 1.0) {
      grad.setZero();
      return kNegInf;
    }

    double total = 0.0;
    double g_eta = 0.0, g_theta = 0.0, g_rho = 0.0;
    const double log_travel = std::log1p(-rho);
    const double log_rho = rho > 0.0 ? std::log(rho) : kNegInf;

    int d_at = delta_at_;
    for (const PreparedBlock& pb : blocks_) {
      const int m = pb.m;
      Eigen::VectorXd v = pb.v1_base;
      const bool endo = opt_.init_values == InitValues::endogenous_delta;
      if (endo) {
        v.setZero();
        v.tail(m - 1) = u.segment(d_at, m - 1);
      }
      Eigen::VectorXd w = Eigen::VectorXd::Zero(m);  // dV/d(eta)
      double a = 1.0;                                // dV_t/d(delta) coefficient
      total += pb.multinomial_const;
      for (int t = 0; t < pb.days; ++t) {
        // Center valuations by the day's best route: the uncentered sum of
        // O(theta * v) terms cancels catastrophically at extreme theta and
        // can leave a spuriously positive residue.  Centered, every term is
        // nonpositive and carries its own scale.
        const double vmin = v.minCoeff();
        const Eigen::VectorXd dv = (v.array() - vmin).matrix();
        const Eigen::VectorXd neg = -theta * dv;
        const double lse = logsumexp(neg);
        const Eigen::VectorXd s = (neg.array() - lse).exp();
        const double k0 = pb.k(t, 0);
        const double nt = pb.n_travel[t];
        if (k0 > 0.0) total += k0 * log_rho;
        const double kdv = pb.k.row(t).tail(m).dot(dv);
        total += nt * (log_travel - lse) - theta * kdv;

        const double dvbar = dv.dot(s);
        g_theta += nt * dvbar - kdv;
        if (opt_.sample_rho) g_rho += (k0 > 0.0 ? k0 / rho : 0.0) - nt / (1.0 - rho);
        const double kw = pb.k.row(t).tail(m).dot(w);
        const double sw = s.dot(w);
        g_eta += -theta * (kw - nt * sw);
        if (endo)
          for (int j = 1; j < m; ++j)
            grad[d_at + j - 1] += -theta * (pb.k(t, j + 1) - nt * s[j]) * a;

        w = (1.0 - eta) * w - v + pb.costs.row(t).transpose();
        v = (1.0 - eta) * v + eta * pb.costs.row(t).transpose();
        a *= 1.0 - eta;
      }
      if (endo) d_at += m - 1;
    }

    grad[0] = g_eta * eta * (1.0 - eta);
    grad[1] = g_theta * theta;
    if (opt_.sample_rho) grad[2] = g_rho * rho * (1.0 - rho);

    // Priors composed with the transform collapse to normals on the
    // unconstrained coordinates; this avoids inf - inf at extreme values.
    total += normal_term(u[0], prior_.eta_logit, grad[0]);
    total += normal_term(u[1], prior_.theta_log, grad[1]);
    if (opt_.sample_rho) total += normal_term(u[2], prior_.rho_logit, grad[2]);
    if (opt_.init_values == InitValues::endogenous_delta)
      for (int j = delta_at_; j < dim_; ++j) total += normal_term(u[j], prior_.delta, grad[j]);

    if (!std::isfinite(total)) {
      grad.setZero();
      return kNegInf;
    }
    return total;
  }

 private:
  std::vector<PreparedBlock> blocks_;
  PriorSpec prior_;
  PosteriorOptions opt_;
  ParamLayout layout_;
  std::vector<std::string> constrained_names_;
  int dim_ = 0;
  int delta_at_ = 0;
};

class HierPosterior final : public Posterior {
 public:
  HierPosterior(const DataBlock& block, const PriorSpec& prior, const PosteriorOptions& opt)
      : prior_(prior), opt_(opt) {
    if (opt.init_values == InitValues::endogenous_delta)
      throw std::invalid_argument("posterior: hierarchical fits support zeros or free-flow initial values");
    pb_ = prepare_block(block, opt.regime, opt.init_values);
    counts_regime_ = opt.regime == Regime::hier_counts;
    if (counts_regime_) {
      n_ = block.counts->population;
    } else {
      choices_ = block.trajectory->choices;
      n_ = int(choices_.rows());
    }
    layout_.names = {"mu_eta", "sigma_eta", "mu_theta", "sigma_theta", "mu_rho", "sigma_rho"};
    const char* z_names[3] = {"z_eta_", "z_theta_", "z_rho_"};
    const char* w_names[3] = {"logit_eta_", "log_theta_", "logit_rho_"};
    for (int c = 0; c < 3; ++c)
      for (int n = 0; n < n_; ++n)
        layout_.names.push_back(std::string(opt_.centered ? w_names[c] : z_names[c]) +
                                std::to_string(n + 1));
    constrained_names_ = {"mu_eta", "sigma_eta", "mu_theta", "sigma_theta", "mu_rho", "sigma_rho"};
    const char* ind_names[3] = {"eta_", "theta_", "rho_"};
    for (int c = 0; c < 3; ++c)
      for (int n = 0; n < n_; ++n)
        constrained_names_.push_back(std::string(ind_names[c]) + std::to_string(n + 1));
  }

  int dim() const override { return 6 + 3 * n_; }
  const ParamLayout& unconstrained_layout() const override { return layout_; }
  const std::vector<std::string>& constrained_names() const override { return constrained_names_; }

  Eigen::VectorXd to_constrained(const Eigen::VectorXd& u) const override {
    Eigen::VectorXd c(dim());
    c[0] = u[0];
    c[1] = std::exp(u[1]);
    c[2] = u[2];
    c[3] = std::exp(u[3]);
    c[4] = u[4];
    c[5] = std::exp(u[5]);
    const double mu[3] = {u[0], u[2], u[4]};
    const double sigma[3] = {c[1], c[3], c[5]};
    for (int c_ix = 0; c_ix < 3; ++c_ix)
      for (int n = 0; n < n_; ++n) {
        const double coord = u[6 + c_ix * n_ + n];
        const double w = opt_.centered ? coord : mu[c_ix] + sigma[c_ix] * coord;
        c[6 + c_ix * n_ + n] = c_ix == 1 ? std::exp(w) : logistic(w);
      }
    return c;
  }

  double value_and_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const override {
    if (u.size() != dim()) throw std::invalid_argument("posterior: dimension mismatch");
    grad.setZero();
    const double mu[3] = {u[0], u[2], u[4]};
    const double us[3] = {u[1], u[3], u[5]};
    const double sigma[3] = {std::exp(u[1]), std::exp(u[3]), std::exp(u[5])};
    if (!std::isfinite(sigma[0]) || !std::isfinite(sigma[1]) || !std::isfinite(sigma[2])) {
      grad.setZero();
      return kNegInf;
    }

    double total = counts_regime_ ? likelihood_counts(u, mu, sigma, grad)
                                  : likelihood_complete(u, mu, sigma, grad);

    // Hyperpriors and per-commuter priors.
    const NormalPrior* mu_priors[3] = {&prior_.mu_eta, &prior_.mu_theta, &prior_.mu_rho};
    const HalfNormalPrior* s_priors[3] = {&prior_.sigma_eta, &prior_.sigma_theta, &prior_.sigma_rho};
    for (int c = 0; c < 3; ++c) {
      total += normal_term(mu[c], *mu_priors[c], grad[2 * c]);
      const double scale = s_priors[c]->sigma;
      // Half-normal density of sigma plus the log-scale jacobian exp(us).
      total += std::log(2.0) - 0.5 * kLog2Pi - std::log(scale) -
               0.5 * sigma[c] * sigma[c] / (scale * scale) + us[c];
      grad[2 * c + 1] += -sigma[c] * sigma[c] / (scale * scale) + 1.0;
    }
    for (int c = 0; c < 3; ++c)
      for (int n = 0; n < n_; ++n) {
        const int ix = 6 + c * n_ + n;
        if (opt_.centered) {
          const double w = u[ix];
          const double d = (w - mu[c]) / sigma[c];
          total += normal_logpdf(w, mu[c], sigma[c]);
          grad[ix] += -d / sigma[c];
          grad[2 * c] += d / sigma[c];
          grad[2 * c + 1] += d * d - 1.0;
        } else {
          total += normal_logpdf(u[ix], 0.0, 1.0);
          grad[ix] += -u[ix];
        }
      }

    if (!std::isfinite(total)) {
      grad.setZero();
      return kNegInf;
    }
    return total;
  }

 private:
  // Per-commuter coordinate index and the chain rule from the transformed
  // individual parameter w back onto (mu, log sigma, coordinate).
  void scatter(const Eigen::VectorXd& u, int c, int n, const double sigma[3], double g_w,
               Eigen::VectorXd& grad) const {
    const int ix = 6 + c * n_ + n;
    if (opt_.centered) {
      grad[ix] += g_w;
    } else {
      grad[2 * c] += g_w;
      grad[2 * c + 1] += g_w * u[ix] * sigma[c];
      grad[ix] += g_w * sigma[c];
    }
  }

  double likelihood_complete(const Eigen::VectorXd& u, const double mu[3], const double sigma[3],
                             Eigen::VectorXd& grad) const {
    const int m = pb_.m;
    double total = 0.0;
    for (int n = 0; n < n_; ++n) {
      const double w_e = opt_.centered ? u[6 + n] : mu[0] + sigma[0] * u[6 + n];
      const double w_t = opt_.centered ? u[6 + n_ + n] : mu[1] + sigma[1] * u[6 + n_ + n];
      const double w_r = opt_.centered ? u[6 + 2 * n_ + n] : mu[2] + sigma[2] * u[6 + 2 * n_ + n];
      const double eta = logistic(w_e);
      const double theta = std::exp(w_t);
      const double rho = logistic(w_r);
      if (!std::isfinite(theta) || eta <= 0.0 || eta >= 1.0) return kNegInf;

      double g_eta = 0.0, g_theta = 0.0, g_rho = 0.0;
      Eigen::VectorXd v = pb_.v1_base;
      Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
      for (int t = 0; t < pb_.days; ++t) {
        // Same per-day centering as the pooled posterior.
        const double vmin = v.minCoeff();
        const Eigen::VectorXd dv = (v.array() - vmin).matrix();
        const Eigen::VectorXd neg = -theta * dv;
        const double lse = logsumexp(neg);
        const int y = choices_(n, t);
        if (y == 0) {
          total += std::log(rho);
          g_rho += 1.0 / rho;
        } else {
          const Eigen::VectorXd s = (neg.array() - lse).exp();
          total += std::log1p(-rho) + neg[y - 1] - lse;
          g_rho += -1.0 / (1.0 - rho);
          g_theta += dv.dot(s) - dv[y - 1];
          g_eta += -theta * (w[y - 1] - s.dot(w));
        }
        w = (1.0 - eta) * w - v + pb_.costs.row(t).transpose();
        v = (1.0 - eta) * v + eta * pb_.costs.row(t).transpose();
      }
      scatter(u, 0, n, sigma, g_eta * eta * (1.0 - eta), grad);
      scatter(u, 1, n, sigma, g_theta * theta, grad);
      scatter(u, 2, n, sigma, g_rho * rho * (1.0 - rho), grad);
    }
    return total;
  }

  double likelihood_counts(const Eigen::VectorXd& u, const double mu[3], const double sigma[3],
                           Eigen::VectorXd& grad) const {
    const int m = pb_.m;
    Eigen::VectorXd eta(n_), theta(n_), rho(n_);
    for (int n = 0; n < n_; ++n) {
      const double w_e = opt_.centered ? u[6 + n] : mu[0] + sigma[0] * u[6 + n];
      const double w_t = opt_.centered ? u[6 + n_ + n] : mu[1] + sigma[1] * u[6 + n_ + n];
      const double w_r = opt_.centered ? u[6 + 2 * n_ + n] : mu[2] + sigma[2] * u[6 + 2 * n_ + n];
      eta[n] = logistic(w_e);
      theta[n] = std::exp(w_t);
      rho[n] = logistic(w_r);
      if (!std::isfinite(theta[n]) || eta[n] <= 0.0 || eta[n] >= 1.0) return kNegInf;
    }

    double total = pb_.multinomial_const;
    Eigen::MatrixXd v(n_, m), w(n_, m);
    v.rowwise() = pb_.v1_base.transpose();
    w.setZero();
    Eigen::MatrixXd s(n_, m);
    Eigen::VectorXd g_eta = Eigen::VectorXd::Zero(n_);
    Eigen::VectorXd g_theta = Eigen::VectorXd::Zero(n_);
    Eigen::VectorXd g_rho = Eigen::VectorXd::Zero(n_);

    for (int t = 0; t < pb_.days; ++t) {
      Eigen::VectorXd mean_p = Eigen::VectorXd::Zero(m + 1);
      for (int n = 0; n < n_; ++n) {
        const Eigen::VectorXd neg = -theta[n] * v.row(n).transpose();
        const double lse = logsumexp(neg);
        s.row(n) = (neg.array() - lse).exp();
        mean_p[0] += rho[n];
        mean_p.tail(m) += (1.0 - rho[n]) * s.row(n).transpose();
      }
      mean_p /= double(n_);

      Eigen::VectorXd q = Eigen::VectorXd::Zero(m + 1);
      for (int a = 0; a <= m; ++a)
        if (pb_.k(t, a) > 0.0) {
          if (mean_p[a] <= 0.0) return kNegInf;
          total += pb_.k(t, a) * std::log(mean_p[a]);
          q[a] = pb_.k(t, a) / (mean_p[a] * double(n_));
        }

      for (int n = 0; n < n_; ++n) {
        const Eigen::VectorXd sn = s.row(n).transpose();
        const double qs = q.tail(m).dot(sn);
        g_rho[n] += q[0] - qs;
        const double vbar = v.row(n).dot(sn);
        // d p(i)/d theta = (1-rho) s_i (vbar - V_i)
        double gt = 0.0;
        for (int i = 0; i < m; ++i) gt += q[i + 1] * sn[i] * (vbar - v(n, i));
        g_theta[n] += (1.0 - rho[n]) * gt;
        // d l/d V_j = -theta (1-rho) s_j (q_j - qs); fold through W for eta.
        double ge = 0.0;
        for (int j = 0; j < m; ++j) ge += sn[j] * (q[j + 1] - qs) * w(n, j);
        g_eta[n] += -theta[n] * (1.0 - rho[n]) * ge;
      }

      for (int n = 0; n < n_; ++n) {
        w.row(n) = (1.0 - eta[n]) * w.row(n) - v.row(n) + pb_.costs.row(t);
        v.row(n) = (1.0 - eta[n]) * v.row(n) + eta[n] * pb_.costs.row(t);
      }
    }

    for (int n = 0; n < n_; ++n) {
      scatter(u, 0, n, sigma, g_eta[n] * eta[n] * (1.0 - eta[n]), grad);
      scatter(u, 1, n, sigma, g_theta[n] * theta[n], grad);
      scatter(u, 2, n, sigma, g_rho[n] * rho[n] * (1.0 - rho[n]), grad);
    }
    return total;
  }

  PreparedBlock pb_;
  Eigen::MatrixXi choices_;
  PriorSpec prior_;
  PosteriorOptions opt_;
  ParamLayout layout_;
  std::vector<std::string> constrained_names_;
  int n_ = 0;
  bool counts_regime_ = false;
};

}  // namespace

std::unique_ptr<Posterior> make_posterior(std::vector<DataBlock> blocks, const PriorSpec& prior,
                                          const PosteriorOptions& options) {
  const bool hier = options.regime == Regime::hier_complete || options.regime == Regime::hier_counts;
  if (hier) {
    if (blocks.size() != 1)
      throw std::invalid_argument("posterior: hierarchical fits take exactly one OD block");
    return std::make_unique<HierPosterior>(blocks.front(), prior, options);
  }
  return std::make_unique<PooledPosterior>(std::move(blocks), prior, options);
}

double log_posterior(const Eigen::VectorXd& unconstrained, const std::vector<DataBlock>& blocks,
                     const PriorSpec& prior, const PosteriorOptions& options) {
  return make_posterior(blocks, prior, options)->value(unconstrained);
}

Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd& unconstrained,
                                   const std::vector<DataBlock>& blocks, const PriorSpec& prior,
                                   const PosteriorOptions& options) {
  const auto post = make_posterior(blocks, prior, options);
  Eigen::VectorXd grad(post->dim());
  post->value_and_gradient(unconstrained, grad);
  return grad;
}

}  // namespace d2d
