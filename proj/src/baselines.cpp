#include "dmcee/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dmcee/error.hpp"
#include "dmcee/io.hpp"
#include "dmcee/rng.hpp"
#include "dmcee/stats.hpp"

namespace dmcee {

OlsResult ols_fit(const MatrixXd& design, const VectorXd& y, const std::vector<std::string>& names) {
  const Index n = design.rows();
  const Index p = design.cols() + 1;
  if (y.size() != n) throw DimensionError("ols_fit: design has " + std::to_string(n) + " rows, y has " + std::to_string(y.size()));
  if (n < p) throw DimensionError("ols_fit: fewer rows than coefficients");
  if (!design.allFinite() || !y.allFinite()) throw DataError("ols_fit: non-finite input");
  MatrixXd x(n, p);
  x.col(0).setOnes();
  x.rightCols(p - 1) = design;

  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  const Index rank = qr.rank();
  const auto& perm = qr.colsPermutation().indices();
  if (rank < p) {
    std::string cols;
    for (Index q = rank; q < p; ++q) {
      const Index c = perm(q);
      std::string label = c == 0 ? "intercept"
                          : static_cast<std::size_t>(c - 1) < names.size() ? names[static_cast<std::size_t>(c - 1)]
                                                                          : "x" + std::to_string(c - 1);
      cols += (cols.empty() ? "" : ", ") + label;
    }
    throw NumericError("ols_fit: design is rank deficient (rank " + std::to_string(rank) + " of " + std::to_string(p) +
                       "); linearly dependent columns: " + cols);
  }
  OlsResult out;
  out.coef = qr.solve(y);
  out.rss = (x * out.coef - y).squaredNorm();
  out.dof = n - p;
  out.std_err = VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  out.p_value = VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  if (out.dof == 0) return out;

  const MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const MatrixXd r_inv = r.triangularView<Eigen::Upper>().solve(MatrixXd::Identity(p, p));
  const double sigma2 = out.rss / static_cast<double>(out.dof);
  for (Index q = 0; q < p; ++q) {
    const Index c = perm(q);
    out.std_err(c) = std::sqrt(sigma2 * r_inv.row(q).squaredNorm());
  }
  for (Index c = 0; c < p; ++c) {
    const double se = out.std_err(c);
    if (se == 0.0) {
      out.p_value(c) = out.coef(c) == 0.0 ? 1.0 : 0.0;
    } else {
      out.p_value(c) = student_t_two_sided_p(out.coef(c) / se, static_cast<double>(out.dof));
    }
  }
  return out;
}

EffectEstimate effects_with_controls(const Dataset& d, const MatrixXd& controls, const std::string& method,
                                     const std::vector<std::string>& control_names) {
  if (controls.rows() != d.n_restaurants() && controls.cols() > 0) {
    throw DimensionError("effects: control rows differ from restaurant count");
  }
  const Index m = d.n_causes();
  MatrixXd x(d.n_restaurants(), m + controls.cols());
  x.leftCols(m) = d.causes;
  if (controls.cols() > 0) x.rightCols(controls.cols()) = controls;
  std::vector<std::string> names = d.aspect_names;
  names.resize(static_cast<std::size_t>(m));
  for (Index c = 0; c < controls.cols(); ++c) {
    names.push_back(static_cast<std::size_t>(c) < control_names.size() ? control_names[static_cast<std::size_t>(c)]
                                                                       : method + "_control" + std::to_string(c));
  }
  const OlsResult fit = ols_fit(x, d.outcome, names);
  EffectEstimate e;
  e.method = method;
  e.tau_hat = fit.coef.segment(1, m);
  e.std_err = fit.std_err.segment(1, m);
  e.p_value = fit.p_value.segment(1, m);
  if (controls.cols() > 0) e.aux = controls;
  return e;
}

CovariateTable control_covariates(const CovariateTable& x) {
  std::vector<Index> drop;
  for (const auto& g : x.group_names()) {
    const auto cols = x.group_columns(g);
    if (x.categorical[static_cast<std::size_t>(cols.front())]) drop.push_back(cols.front());
  }
  for (Index c = 0; c < x.cols(); ++c) {
    if (x.rows() > 0 && (x.values.col(c).array() == x.values(0, c)).all()) drop.push_back(c);
  }
  std::sort(drop.begin(), drop.end());
  drop.erase(std::unique(drop.begin(), drop.end()), drop.end());
  return x.drop_columns(drop);
}

EffectEstimate lr_effects(const Dataset& d) { return effects_with_controls(d, MatrixXd(d.n_restaurants(), 0), "lr"); }

EffectEstimate lr_con_effects(const Dataset& d) {
  const CovariateTable controls = control_covariates(d.x_r);
  EffectEstimate e = effects_with_controls(d, controls.values, "lr_con", controls.names);
  e.aux.reset();
  return e;
}

PpcaModel ppca_fit(const MatrixXd& a, Index k, std::uint64_t seed) {
  const Index n = a.rows(), dim = a.cols();
  if (k < 0) throw ConfigError("ppca_fit: k must be non-negative");
  if (k >= dim) throw ConfigError("ppca_fit: k must be smaller than the number of causes");
  if (n < 2) throw DataError("ppca_fit: need at least two rows");
  PpcaModel m;
  m.k = k;
  m.mean = a.colwise().mean().transpose();
  const MatrixXd centered = a.rowwise() - m.mean.transpose();
  const MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  for (Index c = 0; c < dim; ++c) {
    if (!(cov(c, c) > 0.0)) throw NumericError("ppca_fit: cause column " + std::to_string(c) + " has zero variance");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("ppca_fit: eigendecomposition failed");
  m.eigenvalues = eig.eigenvalues().reverse();
  MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
  for (Index c = 0; c < dim; ++c) {
    Index big;
    vectors.col(c).cwiseAbs().maxCoeff(&big);
    if (vectors(big, c) < 0.0) vectors.col(c) *= -1.0;
  }
  m.noise_variance = m.eigenvalues.tail(dim - k).mean();
  if (!(m.noise_variance > 0.0)) throw NumericError("ppca_fit: noise variance is zero (causes lie in a k-dim subspace)");
  m.loadings.resize(dim, k);
  for (Index c = 0; c < k; ++c) {
    m.loadings.col(c) = vectors.col(c) * std::sqrt(std::max(0.0, m.eigenvalues(c) - m.noise_variance));
  }
  m.z_hat = ppca_posterior_mean(m, a);
  m.z_sample = ppca_posterior_sample(m, a, seed);
  return m;
}

namespace {

MatrixXd posterior_precision_inverse(const PpcaModel& m) {
  const MatrixXd mm = m.loadings.transpose() * m.loadings + m.noise_variance * MatrixXd::Identity(m.k, m.k);
  return mm.inverse();
}

}  // namespace

MatrixXd ppca_posterior_mean(const PpcaModel& m, const MatrixXd& a) {
  if (a.cols() != m.mean.size()) throw DimensionError("ppca_posterior_mean: width mismatch");
  const MatrixXd centered = a.rowwise() - m.mean.transpose();
  return centered * m.loadings * posterior_precision_inverse(m);
}

MatrixXd ppca_posterior_sample(const PpcaModel& m, const MatrixXd& a, std::uint64_t seed) {
  MatrixXd z = ppca_posterior_mean(m, a);
  if (m.k == 0) return z;
  const MatrixXd post_cov = m.noise_variance * posterior_precision_inverse(m);
  const MatrixXd l = post_cov.llt().matrixL();
  Rng rng(seed);
  MatrixXd eps(a.rows(), m.k);
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < m.k; ++c) eps(r, c) = rng.normal();
  z += eps * l.transpose();
  return z;
}

double ppca_log_likelihood(const PpcaModel& m, const MatrixXd& a) {
  const Index dim = m.mean.size();
  if (a.cols() != dim) throw DimensionError("ppca_log_likelihood: width mismatch");
  const MatrixXd c = m.loadings * m.loadings.transpose() + m.noise_variance * MatrixXd::Identity(dim, dim);
  const Eigen::LLT<MatrixXd> llt(c);
  const MatrixXd l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const MatrixXd centered = (a.rowwise() - m.mean.transpose()).transpose();
  const MatrixXd w = llt.matrixL().solve(centered);
  const double quad = w.squaredNorm();
  const double rows = static_cast<double>(a.rows());
  return -0.5 * (rows * (static_cast<double>(dim) * std::log(2.0 * std::numbers::pi) + log_det) + quad);
}

EffectEstimate deconfounder_effects(const Dataset& d, Index k, std::uint64_t seed, DeconfounderDiagnostics* diag) {
  if (k == 0) {
    EffectEstimate e = lr_effects(d);
    e.method = "deconfounder";
    return e;
  }
  const PpcaModel model = ppca_fit(d.causes, k, seed);
  if (diag) {
    const Index n = d.n_restaurants();
    const Index held = n / 5;
    diag->heldout_rows = 0;
    diag->heldout_log_likelihood = std::numeric_limits<double>::quiet_NaN();
    if (held >= 1 && n - held > d.n_causes()) {
      std::vector<Index> order(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      Rng rng = Rng::stream(seed, streams::kBaselines, 1);
      for (Index i = n - 1; i > 0; --i) {
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)))]);
      }
      MatrixXd fit_rows(n - held, d.n_causes()), test_rows(held, d.n_causes());
      for (Index i = 0; i < n; ++i) {
        const Index r = order[static_cast<std::size_t>(i)];
        if (i < held) test_rows.row(i) = d.causes.row(r);
        else fit_rows.row(i - held) = d.causes.row(r);
      }
      try {
        const PpcaModel part = ppca_fit(fit_rows, k, seed);
        diag->heldout_log_likelihood = ppca_log_likelihood(part, test_rows) / static_cast<double>(held);
        diag->heldout_rows = held;
      } catch (const NumericError&) {
      }
    }
  }
  std::vector<std::string> names;
  for (Index c = 0; c < k; ++c) names.push_back("z_hat" + std::to_string(c));
  return effects_with_controls(d, model.z_sample, "deconfounder", names);
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::d_out: return "d_out";
    case Variant::d_cau: return "d_cau";
    case Variant::dmcee: return "dmcee";
  }
  return "dmcee";
}

TrainConfig variant_config(const TrainConfig& base, Variant v) {
  TrainConfig c = base;
  if (v == Variant::d_out) c.weights.beta = 0.0;
  if (v == Variant::d_cau) c.include_outcome = false;
  return c;
}

EffectEstimate gcn_effects(const Dataset& d, const TrainConfig& base, FittedModel* fitted) {
  TrainConfig cfg = base;
  cfg.weights.alpha = 1.0;
  cfg.weights.beta = 0.0;
  cfg.include_outcome = false;
  FittedModel model = train(d, cfg);
  const MatrixXd out_r = encode(d, model.params).out_r;
  EffectEstimate e = effects_with_controls(d, out_r, "gcn");
  if (fitted) *fitted = std::move(model);
  return e;
}

EffectEstimate estimate_from_model(const Dataset& d, const FittedModel& model, Variant v) {
  const SurrogateConfounder g = fitted_surrogate(d, model.params);
  if (v == Variant::d_cau) return effects_with_controls(d, g.gamma_r, "d_cau");
  EffectEstimate e;
  e.method = variant_name(v);
  e.tau_hat = extract_effects(model.params.adjustment);
  e.aux = g.gamma_r;
  try {
    const EffectEstimate refit = effects_with_controls(d, g.gamma_r, e.method);
    e.std_err = refit.std_err;
    e.p_value = refit.p_value;
    e.refit_tau = refit.tau_hat;
  } catch (const NumericError&) {
    const Index m = d.n_causes();
    e.std_err = VectorXd::Constant(m, std::numeric_limits<double>::quiet_NaN());
    e.p_value = e.std_err;
    e.refit_tau = e.std_err;
  }
  return e;
}

EffectEstimate variant_effects(const Dataset& d, const TrainConfig& config, Variant v, FittedModel* fitted) {
  FittedModel model = train(d, variant_config(config, v));
  EffectEstimate e = estimate_from_model(d, model, v);
  if (fitted) *fitted = std::move(model);
  return e;
}

void write_effects_csv(const std::vector<EffectEstimate>& estimates, const std::vector<std::string>& aspects,
                       const std::filesystem::path& path) {
  auto fmt = [](const VectorXd& v, Index j) {
    return j < v.size() && std::isfinite(v(j)) ? io::format_double(v(j)) : std::string("NA");
  };
  io::CsvWriter w(path);
  w.row({"method", "aspect", "tau_hat", "std_err", "p_value", "refit_tau"});
  for (const auto& e : estimates) {
    for (Index j = 0; j < e.tau_hat.size(); ++j) {
      const std::string aspect =
          static_cast<std::size_t>(j) < aspects.size() ? aspects[static_cast<std::size_t>(j)] : std::to_string(j);
      w.row({e.method, aspect, fmt(e.tau_hat, j), fmt(e.std_err, j), fmt(e.p_value, j), fmt(e.refit_tau, j)});
    }
  }
}

}  // namespace dmcee
