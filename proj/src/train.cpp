#include "dmcee/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "dmcee/error.hpp"
#include "dmcee/io.hpp"
#include "dmcee/rng.hpp"

namespace dmcee {

void TrainConfig::check() const {
  if (epochs < 0) throw ConfigError("train: epoch must be non-negative");
  if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train: lr must be positive");
  if (embed_dim <= 0 || layer_size <= 0 || n_layers <= 0) {
    throw ConfigError("train: embed_size, layer_size and n_layers must be positive");
  }
  if (gamma_dim < 0) throw ConfigError("train: gamma_dim must be non-negative");
  if (weights.alpha < 0.0 || weights.beta < 0.0 || weights.lambda < 0.0) {
    throw ConfigError("train: alpha, beta and lambda must be non-negative");
  }
  if (node_dropout < 0.0 || node_dropout >= 1.0 || mess_dropout < 0.0 || mess_dropout >= 1.0) {
    throw ConfigError("train: dropout ratios must lie in [0, 1)");
  }
  if (leaky_slope < 0.0 || leaky_slope >= 1.0) throw ConfigError("train: leaky_slope must lie in [0, 1)");
  if (negatives_per_positive < 1) throw ConfigError("train: negatives_per_positive must be at least 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_epsilon > 0.0)) {
    throw ConfigError("train: invalid adam constants");
  }
  const auto names = tensor_names(n_layers);
  for (const auto& f : frozen) {
    if (std::find(names.begin(), names.end(), f) == names.end()) throw ConfigError("train: unknown frozen tensor '" + f + "'");
  }
}

TrainConfig TrainConfig::real_defaults() {
  TrainConfig c;
  c.embed_dim = 32;
  c.batch_size = 1024;
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"epoch", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.learning_rate},
          {"alpha", c.weights.alpha},
          {"beta", c.weights.beta},
          {"lambda", c.weights.lambda},
          {"embed_size", c.embed_dim},
          {"layer_size", c.layer_size},
          {"n_layers", c.n_layers},
          {"gamma_dim", c.gamma_dim},
          {"node_dropout", c.node_dropout},
          {"mess_dropout", c.mess_dropout},
          {"leaky_slope", c.leaky_slope},
          {"optimizer", c.optimizer == Optimizer::adam ? "adam" : "sgd"},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"include_outcome", c.include_outcome},
          {"negatives_per_positive", c.negatives_per_positive},
          {"frozen", c.frozen},
          {"divergence_limit", c.divergence_limit},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "epoch") c.epochs = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<Index>();
      else if (key == "lr") c.learning_rate = v.get<double>();
      else if (key == "alpha") c.weights.alpha = v.get<double>();
      else if (key == "beta") c.weights.beta = v.get<double>();
      else if (key == "lambda") c.weights.lambda = v.get<double>();
      else if (key == "embed_size") c.embed_dim = v.get<Index>();
      else if (key == "layer_size") c.layer_size = v.get<Index>();
      else if (key == "n_layers") c.n_layers = v.get<Index>();
      else if (key == "gamma_dim") c.gamma_dim = v.get<Index>();
      else if (key == "node_dropout") c.node_dropout = v.get<double>();
      else if (key == "mess_dropout") c.mess_dropout = v.get<double>();
      else if (key == "leaky_slope") c.leaky_slope = v.get<double>();
      else if (key == "optimizer") {
        const auto s = v.get<std::string>();
        if (s == "adam") c.optimizer = Optimizer::adam;
        else if (s == "sgd") c.optimizer = Optimizer::sgd;
        else throw ConfigError("train: optimizer must be adam or sgd, got '" + s + "'");
      } else if (key == "adam_beta1") c.adam_beta1 = v.get<double>();
      else if (key == "adam_beta2") c.adam_beta2 = v.get<double>();
      else if (key == "adam_epsilon") c.adam_epsilon = v.get<double>();
      else if (key == "include_outcome") c.include_outcome = v.get<bool>();
      else if (key == "negatives_per_positive") c.negatives_per_positive = v.get<Index>();
      else if (key == "frozen") c.frozen = v.get<std::vector<std::string>>();
      else if (key == "divergence_limit") c.divergence_limit = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("train: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

std::vector<std::string> tensor_names(Index n_layers) {
  std::vector<std::string> names{"w_r", "w_u"};
  for (Index l = 0; l < n_layers; ++l) {
    names.push_back("layer" + std::to_string(l) + ".w_1");
    names.push_back("layer" + std::to_string(l) + ".w_2");
  }
  for (const char* n : {"gamma_map", "theta_c", "theta_a", "theta_gamma"}) names.emplace_back(n);
  return names;
}

std::vector<TensorRef> tensors(ModelParams& p) {
  std::vector<TensorRef> out;
  auto add = [&](std::string name, auto& m) { out.push_back({std::move(name), m.data(), m.rows(), m.cols()}); };
  add("w_r", p.encoder.w_r);
  add("w_u", p.encoder.w_u);
  for (std::size_t l = 0; l < p.encoder.layers.size(); ++l) {
    add("layer" + std::to_string(l) + ".w_1", p.encoder.layers[l].w_1);
    add("layer" + std::to_string(l) + ".w_2", p.encoder.layers[l].w_2);
  }
  add("gamma_map", p.adjustment.gamma_map);
  add("theta_c", p.adjustment.theta_c);
  add("theta_a", p.adjustment.theta_a);
  add("theta_gamma", p.adjustment.theta_gamma);
  return out;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  z.encoder = detail::zeros_like(p.encoder);
  const AdjustmentParams& a = p.adjustment;
  z.adjustment.gamma_map = MatrixXd::Zero(a.gamma_map.rows(), a.gamma_map.cols());
  z.adjustment.theta_c = MatrixXd::Zero(a.theta_c.rows(), a.theta_c.cols());
  z.adjustment.theta_a = VectorXd::Zero(a.theta_a.size());
  z.adjustment.theta_gamma = VectorXd::Zero(a.theta_gamma.size());
  return z;
}

ModelParams init_params(const Dataset& d, const TrainConfig& cfg) {
  cfg.check();
  Rng rng = Rng::stream(cfg.seed, streams::kInit, 0);
  auto xavier = [&](Index rows, Index cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    MatrixXd m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
    return m;
  };
  ModelParams p;
  p.encoder.leaky_slope = cfg.leaky_slope;
  p.encoder.w_r = xavier(d.x_r.cols(), cfg.embed_dim);
  p.encoder.w_u = xavier(d.x_u.cols(), cfg.embed_dim);
  Index in = cfg.embed_dim;
  for (Index l = 0; l < cfg.n_layers; ++l) {
    EncoderLayer layer;
    layer.w_1 = xavier(cfg.layer_size, in);
    layer.w_2 = xavier(cfg.layer_size, in);
    p.encoder.layers.push_back(std::move(layer));
    in = cfg.layer_size;
  }
  const Index dg = cfg.effective_gamma_dim();
  p.adjustment.gamma_map = dg == cfg.layer_size ? MatrixXd(MatrixXd::Identity(dg, dg)) : xavier(cfg.layer_size, dg);
  p.adjustment.theta_c = xavier(dg, d.n_causes());
  p.adjustment.theta_a = xavier(d.n_causes(), 1).col(0);
  p.adjustment.theta_gamma = xavier(dg, 1).col(0);
  return p;
}

namespace {

double logistic_complement(double diff) {
  // sigma(-diff)
  if (diff >= 0.0) {
    const double e = std::exp(-diff);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(diff));
}

struct HeadResult {
  double l_v = 0.0, l_c = 0.0, l_y = 0.0;
  MatrixXd d_out_r, d_out_u;
  AdjustmentParams grad;
};

// `triples` and `rows` index into out_u / out_r; a triple with j < 0 has no
// negative and contributes nothing. `a` and `y` are the rows of A and y
// matching `rows`.
HeadResult head_objective(const MatrixXd& out_r, const MatrixXd& out_u, const std::vector<Triple>& triples,
                          const std::vector<Index>& rows, const MatrixXd& a, const VectorXd& y,
                          const AdjustmentParams& p, const TrainConfig& cfg, bool want_grad) {
  HeadResult res;
  const double alpha = cfg.weights.alpha, beta = cfg.weights.beta;
  if (want_grad) {
    res.d_out_r = MatrixXd::Zero(out_r.rows(), out_r.cols());
    res.d_out_u = MatrixXd::Zero(out_u.rows(), out_u.cols());
    res.grad.gamma_map = MatrixXd::Zero(p.gamma_map.rows(), p.gamma_map.cols());
    res.grad.theta_c = MatrixXd::Zero(p.theta_c.rows(), p.theta_c.cols());
    res.grad.theta_a = VectorXd::Zero(p.theta_a.size());
    res.grad.theta_gamma = VectorXd::Zero(p.theta_gamma.size());
  }
  for (const Triple& t : triples) {
    if (t.j < 0) continue;
    const RowVector gap = out_r.row(t.i) - out_r.row(t.j);
    const double diff = out_u.row(t.u).dot(gap);
    res.l_v += neg_log_sigmoid(diff);
    if (want_grad && alpha != 0.0) {
      const double g = -alpha * logistic_complement(diff);
      res.d_out_u.row(t.u) += g * gap;
      res.d_out_r.row(t.i) += g * out_u.row(t.u);
      res.d_out_r.row(t.j) -= g * out_u.row(t.u);
    }
  }
  if (rows.empty()) return res;
  const Index n = static_cast<Index>(rows.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  MatrixXd o(n, out_r.cols());
  for (Index k = 0; k < n; ++k) o.row(k) = out_r.row(rows[static_cast<std::size_t>(k)]);
  const MatrixXd gamma = o * p.gamma_map;
  const MatrixXd res_c = gamma * p.theta_c - a;
  res.l_c = res_c.squaredNorm() * inv_n;
  VectorXd res_y;
  if (cfg.include_outcome) {
    res_y = a * p.theta_a + gamma * p.theta_gamma - y;
    res.l_y = res_y.squaredNorm() * inv_n;
  }
  if (!want_grad) return res;
  MatrixXd d_gamma = MatrixXd::Zero(n, gamma.cols());
  if (beta != 0.0) {
    const MatrixXd dc = (2.0 * beta * inv_n) * res_c;
    res.grad.theta_c.noalias() = gamma.transpose() * dc;
    d_gamma.noalias() += dc * p.theta_c.transpose();
  }
  if (cfg.include_outcome) {
    const VectorXd dy = (2.0 * inv_n) * res_y;
    res.grad.theta_a.noalias() = a.transpose() * dy;
    res.grad.theta_gamma.noalias() = gamma.transpose() * dy;
    d_gamma.noalias() += dy * p.theta_gamma.transpose();
  }
  res.grad.gamma_map.noalias() = o.transpose() * d_gamma;
  const MatrixXd d_o = d_gamma * p.gamma_map.transpose();
  for (Index k = 0; k < n; ++k) res.d_out_r.row(rows[static_cast<std::size_t>(k)]) += d_o.row(k);
  return res;
}

void gather_outcome_rows(const Dataset& d, const std::vector<Index>& rows, MatrixXd& a, VectorXd& y) {
  const Index n = static_cast<Index>(rows.size());
  a.resize(n, d.n_causes());
  y.resize(n);
  for (Index k = 0; k < n; ++k) {
    const Index r = rows[static_cast<std::size_t>(k)];
    a.row(k) = d.causes.row(r);
    y(k) = d.outcome(r);
  }
}

void add_ridge(const ModelParams& params, double lambda, ModelParams& grad) {
  if (lambda == 0.0) return;
  ModelParams& p = const_cast<ModelParams&>(params);
  auto src = tensors(p);
  auto dst = tensors(grad);
  for (std::size_t t = 0; t < src.size(); ++t) {
    for (Index k = 0; k < src[t].size(); ++k) dst[t].data[k] += 2.0 * lambda * src[t].data[k];
  }
}

LossBreakdown breakdown(const HeadResult& h, const ModelParams& params, const TrainConfig& cfg) {
  return total_loss(h.l_v, h.l_c, cfg.include_outcome ? h.l_y : 0.0, params, cfg.weights);
}

Gradient full_objective(const Dataset& d, const ModelParams& params, const TrainConfig& cfg,
                        const std::vector<Triple>& triples, const std::vector<Index>& rows,
                        const detail::Propagation& prop, const std::vector<MatrixXd>& mask_r,
                        const std::vector<MatrixXd>& mask_u, bool want_grad) {
  const detail::FullForward f = detail::full_forward(d, params.encoder, prop, mask_r, mask_u);
  MatrixXd a;
  VectorXd y;
  gather_outcome_rows(d, rows, a, y);
  HeadResult h = head_objective(f.out_r, f.out_u, triples, rows, a, y, params.adjustment, cfg, want_grad);
  Gradient g;
  g.loss = breakdown(h, params, cfg);
  if (want_grad) {
    g.grad.encoder = detail::full_backward(d, params.encoder, prop, f, h.d_out_r, h.d_out_u);
    g.grad.adjustment = std::move(h.grad);
    add_ridge(params, cfg.weights.lambda, g.grad);
  }
  return g;
}

std::vector<Triple> to_triples(const TripleBatch& b) { return b.triples; }

void check_batch(const Dataset& d, const TripleBatch& batch, std::span<const Index> rows) {
  for (const Triple& t : batch.triples) {
    if (t.u < 0 || t.u >= d.n_consumers() || t.i < 0 || t.i >= d.n_restaurants() || t.j >= d.n_restaurants()) {
      throw DimensionError("batch: triple index out of range");
    }
  }
  for (Index r : rows) {
    if (r < 0 || r >= d.n_restaurants()) throw DimensionError("batch: outcome row out of range");
  }
}

// Aggregated neighbor covariates for one epoch of single-layer training:
// row r of s_r is sum_u p_ru keep_u x_u, so the layer's neighbor input is s_r W_U.
struct FastContext {
  MatrixXd s_r;  // n_restaurants x d_u
  MatrixXd s_u;  // n_consumers x d_r
};

class FastStepper {
 public:
  FastStepper(const Dataset& d, const TrainConfig& cfg)
      : d_(d), cfg_(cfg), slot_r_(static_cast<std::size_t>(d.n_restaurants()), -1),
        slot_u_(static_cast<std::size_t>(d.n_consumers()), -1) {}

  void set_context(FastContext ctx) { ctx_ = std::move(ctx); }

  Gradient step(const ModelParams& params, const Triple* first, const Triple* last, const std::vector<Index>& rows,
                Rng& rng) {
    local_r_.clear();
    local_u_.clear();
    auto slot_r = [&](Index r) {
      auto& s = slot_r_[static_cast<std::size_t>(r)];
      if (s < 0) {
        s = static_cast<Index>(local_r_.size());
        local_r_.push_back(r);
      }
      return s;
    };
    auto slot_u = [&](Index u) {
      auto& s = slot_u_[static_cast<std::size_t>(u)];
      if (s < 0) {
        s = static_cast<Index>(local_u_.size());
        local_u_.push_back(u);
      }
      return s;
    };
    std::vector<Triple> local_triples;
    local_triples.reserve(static_cast<std::size_t>(last - first));
    std::vector<Index> local_rows;
    for (Index r : rows) local_rows.push_back(slot_r(r));
    for (const Triple* t = first; t != last; ++t) {
      Triple lt{slot_u(t->u), slot_r(t->i), t->j >= 0 ? slot_r(t->j) : -1};
      local_triples.push_back(lt);
    }
    const EncoderParams& enc = params.encoder;
    const EncoderLayer& layer = enc.layers.front();
    const Index nr = static_cast<Index>(local_r_.size()), nu = static_cast<Index>(local_u_.size());
    MatrixXd xr(nr, d_.x_r.cols()), sr(nr, ctx_.s_r.cols()), xu(nu, d_.x_u.cols()), su(nu, ctx_.s_u.cols());
    for (Index k = 0; k < nr; ++k) {
      xr.row(k) = d_.x_r.values.row(local_r_[static_cast<std::size_t>(k)]);
      sr.row(k) = ctx_.s_r.row(local_r_[static_cast<std::size_t>(k)]);
    }
    for (Index k = 0; k < nu; ++k) {
      xu.row(k) = d_.x_u.values.row(local_u_[static_cast<std::size_t>(k)]);
      su.row(k) = ctx_.s_u.row(local_u_[static_cast<std::size_t>(k)]);
    }
    const MatrixXd e_r = xr * enc.w_r, h_r = sr * enc.w_u;
    const MatrixXd e_u = xu * enc.w_u, h_u = su * enc.w_r;
    MatrixXd mask_r, mask_u;
    if (cfg_.mess_dropout > 0.0) {
      mask_r = draw_mask(rng, nr, layer.w_1.rows());
      mask_u = draw_mask(rng, nu, layer.w_1.rows());
    }
    MatrixXd pre_r, out_r, pre_u, out_u;
    detail::layer_forward(e_r, h_r, layer, mask_r, enc.leaky_slope, pre_r, out_r);
    detail::layer_forward(e_u, h_u, layer, mask_u, enc.leaky_slope, pre_u, out_u);

    MatrixXd a;
    VectorXd y;
    gather_outcome_rows(d_, rows, a, y);
    HeadResult h = head_objective(out_r, out_u, local_triples, local_rows, a, y, params.adjustment, cfg_, true);

    Gradient g;
    g.loss = breakdown(h, params, cfg_);
    g.grad.encoder = detail::zeros_like(enc);
    EncoderLayer& gl = g.grad.encoder.layers.front();
    MatrixXd de_r, dh_r, de_u, dh_u;
    detail::layer_backward(e_r, h_r, pre_r, mask_r, layer, h.d_out_r, enc.leaky_slope, gl, de_r, dh_r);
    detail::layer_backward(e_u, h_u, pre_u, mask_u, layer, h.d_out_u, enc.leaky_slope, gl, de_u, dh_u);
    g.grad.encoder.w_r.noalias() = xr.transpose() * de_r + su.transpose() * dh_u;
    g.grad.encoder.w_u.noalias() = xu.transpose() * de_u + sr.transpose() * dh_r;
    g.grad.adjustment = std::move(h.grad);
    add_ridge(params, cfg_.weights.lambda, g.grad);

    for (Index r : local_r_) slot_r_[static_cast<std::size_t>(r)] = -1;
    for (Index u : local_u_) slot_u_[static_cast<std::size_t>(u)] = -1;
    return g;
  }

  MatrixXd draw_mask(Rng& rng, Index rows, Index cols) const {
    const double scale = 1.0 / (1.0 - cfg_.mess_dropout);
    MatrixXd m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = rng.bernoulli(cfg_.mess_dropout) ? 0.0 : scale;
    return m;
  }

 private:
  const Dataset& d_;
  const TrainConfig& cfg_;
  FastContext ctx_;
  std::vector<Index> slot_r_, slot_u_;
  std::vector<Index> local_r_, local_u_;
};

class OptimizerState {
 public:
  OptimizerState(const TrainConfig& cfg, ModelParams& params) : cfg_(cfg) {
    for (const auto& t : tensors(params)) {
      const bool frozen = std::find(cfg.frozen.begin(), cfg.frozen.end(), t.name) != cfg.frozen.end();
      frozen_.push_back(frozen);
      m_.push_back(VectorXd::Zero(t.size()));
      v_.push_back(VectorXd::Zero(t.size()));
    }
  }

  void apply(ModelParams& params, ModelParams& grad) {
    ++t_;
    auto p = tensors(params);
    auto g = tensors(grad);
    const double lr = cfg_.learning_rate;
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2, eps = cfg_.adam_epsilon;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (frozen_[k]) continue;
      double* w = p[k].data;
      const double* dw = g[k].data;
      if (cfg_.optimizer == Optimizer::sgd) {
        for (Index i = 0; i < p[k].size(); ++i) w[i] -= lr * dw[i];
        continue;
      }
      double* m = m_[k].data();
      double* v = v_[k].data();
      for (Index i = 0; i < p[k].size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * dw[i];
        v[i] = b2 * v[i] + (1.0 - b2) * dw[i] * dw[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<bool> frozen_;
  std::vector<VectorXd> m_, v_;
  long long t_ = 0;
};

bool all_finite(ModelParams& p) {
  for (const auto& t : tensors(p)) {
    for (Index k = 0; k < t.size(); ++k)
      if (!std::isfinite(t.data[k])) return false;
  }
  return true;
}

VectorXd node_keep(Rng& rng, Index n, double ratio) {
  VectorXd keep = VectorXd::Ones(n);
  if (ratio <= 0.0) return keep;
  const double scale = 1.0 / (1.0 - ratio);
  for (Index i = 0; i < n; ++i) keep(i) = rng.bernoulli(ratio) ? 0.0 : scale;
  return keep;
}

}  // namespace

Gradient gradient(const Dataset& d, const TripleBatch& batch, std::span<const Index> rows, const ModelParams& params,
                  const TrainConfig& cfg) {
  check_shapes(d, params.encoder);
  check_batch(d, batch, rows);
  const auto prop = detail::make_propagation(d.graph);
  return full_objective(d, params, cfg, to_triples(batch), std::vector<Index>(rows.begin(), rows.end()), prop, {}, {},
                        true);
}

LossBreakdown evaluate_loss(const Dataset& d, const TripleBatch& batch, std::span<const Index> rows,
                            const ModelParams& params, const TrainConfig& cfg) {
  check_shapes(d, params.encoder);
  check_batch(d, batch, rows);
  const auto prop = detail::make_propagation(d.graph);
  return full_objective(d, params, cfg, to_triples(batch), std::vector<Index>(rows.begin(), rows.end()), prop, {}, {},
                        false)
      .loss;
}

AuditResult finite_diff_audit(const Dataset& d, const TripleBatch& batch, std::span<const Index> rows,
                              const ModelParams& params, const TrainConfig& cfg, double step, Index min_coordinates,
                              std::uint64_t seed) {
  if (!(step > 0.0)) throw ConfigError("finite_diff_audit: step must be positive");
  TrainConfig audit_cfg = cfg;
  audit_cfg.node_dropout = 0.0;
  audit_cfg.mess_dropout = 0.0;
  const Gradient analytic = gradient(d, batch, rows, params, audit_cfg);
  ModelParams work = params;
  ModelParams grad = analytic.grad;
  auto w = tensors(work);
  auto g = tensors(grad);

  std::vector<std::pair<std::size_t, Index>> coords;
  for (std::size_t t = 0; t < w.size(); ++t)
    for (Index k = 0; k < w[t].size(); ++k) coords.emplace_back(t, k);
  if (static_cast<Index>(coords.size()) > min_coordinates) {
    Rng rng(seed);
    for (Index i = 0; i < min_coordinates; ++i) {
      const auto j = static_cast<std::size_t>(i) + rng.uniform_index(coords.size() - static_cast<std::size_t>(i));
      std::swap(coords[static_cast<std::size_t>(i)], coords[j]);
    }
    coords.resize(static_cast<std::size_t>(min_coordinates));
    std::sort(coords.begin(), coords.end());
  }
  const auto prop = detail::make_propagation(d.graph);
  const std::vector<Triple> triples = to_triples(batch);
  const std::vector<Index> row_vec(rows.begin(), rows.end());
  auto loss_at = [&]() { return full_objective(d, work, audit_cfg, triples, row_vec, prop, {}, {}, false).loss.total; };

  AuditResult out;
  for (const auto& [t, k] : coords) {
    double& x = w[t].data[k];
    const double saved = x;
    x = saved + step;
    const double up = loss_at();
    x = saved - step;
    const double down = loss_at();
    x = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double a = g[t].data[k];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > out.max_relative_error || out.worst_index < 0) {
      out.max_relative_error = rel;
      out.worst_tensor = w[t].name;
      out.worst_index = k;
    }
    ++out.coordinates_checked;
  }
  return out;
}

FittedModel train(const Dataset& d, const TrainConfig& cfg) { return train(d, cfg, init_params(d, cfg)); }

FittedModel train(const Dataset& d, const TrainConfig& cfg, const ModelParams& initial) {
  cfg.check();
  check_shapes(d, initial.encoder);
  if (initial.adjustment.theta_a.size() != d.n_causes() ||
      initial.adjustment.gamma_map.rows() != initial.encoder.layer_size()) {
    throw DimensionError("train: adjustment parameters do not match dataset or encoder");
  }
  FittedModel model;
  model.params = initial;
  model.config = cfg;
  model.seed = cfg.seed;
  if (cfg.epochs == 0) return model;

  const BipartiteGraph& graph = d.graph;
  std::vector<Edge> edges;
  for (const Edge& e : graph.edges())
    if (graph.edge_in_range(e)) edges.push_back(e);
  const Index n_edges = static_cast<Index>(edges.size());
  const auto nr64 = static_cast<std::uint64_t>(d.n_restaurants());
  std::vector<Index> all_rows(static_cast<std::size_t>(d.n_restaurants()));
  for (Index r = 0; r < d.n_restaurants(); ++r) all_rows[static_cast<std::size_t>(r)] = r;

  const bool fast = cfg.n_layers == 1;
  const bool dropout = cfg.node_dropout > 0.0 || cfg.mess_dropout > 0.0;
  const auto clean_prop = detail::make_propagation(graph);
  FastStepper stepper(d, cfg);
  OptimizerState opt(cfg, model.params);
  double limit = cfg.divergence_limit;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = Rng::stream(cfg.seed, streams::kTraining, static_cast<std::uint64_t>(epoch));
    std::vector<Index> order(static_cast<std::size_t>(n_edges));
    for (Index k = 0; k < n_edges; ++k) order[static_cast<std::size_t>(k)] = k;
    for (Index k = n_edges - 1; k > 0; --k) {
      const auto j = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(k + 1)));
      std::swap(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(j)]);
    }
    std::vector<Triple> triples;
    triples.reserve(static_cast<std::size_t>(n_edges * cfg.negatives_per_positive));
    for (Index k : order) {
      const Edge& e = edges[static_cast<std::size_t>(k)];
      const bool saturated = graph.consumer_degree(e.consumer) >= d.n_restaurants();
      for (Index n = 0; n < cfg.negatives_per_positive; ++n) {
        Index j = -1;
        if (!saturated) {
          do {
            j = static_cast<Index>(rng.uniform_index(nr64));
          } while (graph.has_edge(e.consumer, j));
        }
        triples.push_back({e.consumer, e.restaurant, j});
      }
    }

    detail::Propagation prop;
    if (dropout && cfg.node_dropout > 0.0) {
      const VectorXd keep_u = node_keep(rng, d.n_consumers(), cfg.node_dropout);
      const VectorXd keep_r = node_keep(rng, d.n_restaurants(), cfg.node_dropout);
      prop = detail::make_propagation(graph, keep_r, keep_u);
    } else {
      prop = clean_prop;
    }
    if (fast) stepper.set_context({prop.to_restaurants * d.x_u.values, prop.to_consumers * d.x_r.values});

    if (epoch == 0) {
      const LossBreakdown init =
          full_objective(d, model.params, cfg, triples, all_rows, clean_prop, {}, {}, false).loss;
      if (std::isfinite(init.total)) limit = std::max(cfg.divergence_limit, 1e6 * init.total);
    }

    const Index per_edge = cfg.negatives_per_positive;
    const Index step_edges = std::max<Index>(1, cfg.batch_size);
    const bool full_batch = cfg.batch_size >= n_edges;
    for (Index start = 0; start < std::max<Index>(n_edges, 1); start += step_edges) {
      const Index stop = std::min(n_edges, start + step_edges);
      const Triple* first = triples.data() + start * per_edge;
      const Triple* last = triples.data() + stop * per_edge;
      std::vector<Index> rows;
      if (full_batch) {
        rows = all_rows;
      } else {
        std::set<Index> seen;
        for (const Triple* t = first; t != last; ++t) seen.insert(t->i);
        rows.assign(seen.begin(), seen.end());
      }
      Gradient g;
      if (fast) {
        g = stepper.step(model.params, first, last, rows, rng);
      } else {
        std::vector<MatrixXd> mask_r, mask_u;
        if (cfg.mess_dropout > 0.0) {
          for (const auto& layer : model.params.encoder.layers) {
            mask_r.push_back(stepper.draw_mask(rng, d.n_restaurants(), layer.w_1.rows()));
            mask_u.push_back(stepper.draw_mask(rng, d.n_consumers(), layer.w_1.rows()));
          }
        }
        g = full_objective(d, model.params, cfg, std::vector<Triple>(first, last), rows, prop, mask_r, mask_u, true);
      }
      if (!std::isfinite(g.loss.total)) {
        throw DivergenceError("training diverged: non-finite batch loss at epoch " + std::to_string(epoch), epoch);
      }
      opt.apply(model.params, g.grad);
    }
    if (!all_finite(model.params)) {
      throw DivergenceError("training diverged: non-finite parameters at epoch " + std::to_string(epoch), epoch);
    }
    const LossBreakdown lb = full_objective(d, model.params, cfg, triples, all_rows, clean_prop, {}, {}, false).loss;
    if (!std::isfinite(lb.total) || lb.total > limit) {
      throw DivergenceError("training diverged: epoch loss " + io::format_double(lb.total) + " at epoch " +
                                std::to_string(epoch),
                            epoch);
    }
    model.history.push_back(lb);
  }
  return model;
}

EncodedNodes encode(const Dataset& d, const ModelParams& params) {
  return forward(d, params.encoder, DropoutSpec{}, Mode::eval, 0);
}

SurrogateConfounder fitted_surrogate(const Dataset& d, const ModelParams& params) {
  return surrogate(encode(d, params).out_r, params.adjustment);
}

void save_checkpoint(const FittedModel& model, const std::filesystem::path& path) {
  json j;
  j["format"] = "dmcee-checkpoint";
  j["version"] = 1;
  j["config"] = to_json(model.config);
  j["seed"] = model.seed;
  j["leaky_slope"] = model.params.encoder.leaky_slope;
  json list = json::array();
  ModelParams copy = model.params;
  for (const auto& t : tensors(copy)) {
    json values = json::array();
    for (Index r = 0; r < t.rows; ++r)
      for (Index c = 0; c < t.cols; ++c) values.push_back(number_or_null(t.data[c * t.rows + r]));
    list.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"values", std::move(values)}});
  }
  j["tensors"] = std::move(list);
  json hist = json::array();
  for (const auto& h : model.history) {
    hist.push_back({{"l_v", number_or_null(h.l_v)},
                    {"l_c", number_or_null(h.l_c)},
                    {"l_y", number_or_null(h.l_y)},
                    {"l2", number_or_null(h.l2)},
                    {"total", number_or_null(h.total)}});
  }
  j["history"] = std::move(hist);
  io::write_text(path, dump_json(j));
}

FittedModel load_checkpoint(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "dmcee-checkpoint") throw DataError(path.string() + ": not a checkpoint");
  FittedModel m;
  m.config = train_config_from_json(j.at("config"));
  m.seed = j.at("seed").get<std::uint64_t>();
  std::map<std::string, MatrixXd> by_name;
  for (const auto& t : j.at("tensors")) by_name[t.at("name").get<std::string>()] = matrix_from_json(t);
  auto take = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(path.string() + ": missing tensor " + name);
    return it->second;
  };
  ModelParams& p = m.params;
  p.encoder.leaky_slope = j.value("leaky_slope", m.config.leaky_slope);
  p.encoder.w_r = take("w_r");
  p.encoder.w_u = take("w_u");
  for (Index l = 0; l < m.config.n_layers; ++l) {
    p.encoder.layers.push_back(
        {take("layer" + std::to_string(l) + ".w_1"), take("layer" + std::to_string(l) + ".w_2")});
  }
  p.adjustment.gamma_map = take("gamma_map");
  p.adjustment.theta_c = take("theta_c");
  p.adjustment.theta_a = take("theta_a").col(0);
  p.adjustment.theta_gamma = take("theta_gamma").col(0);
  for (const auto& h : j.value("history", json::array())) {
    LossBreakdown b;
    auto num = [&](const char* k) { return h.at(k).is_null() ? std::nan("") : h.at(k).get<double>(); };
    b.l_v = num("l_v");
    b.l_c = num("l_c");
    b.l_y = num("l_y");
    b.l2 = num("l2");
    b.total = num("total");
    b.weights = m.config.weights;
    m.history.push_back(b);
  }
  return m;
}

void write_training_curve(const std::vector<LossBreakdown>& history, const std::filesystem::path& path) {
  io::CsvWriter w(path);
  w.row({"epoch", "l_v", "l_c", "l_y", "l2", "total"});
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& h = history[e];
    w.row({std::to_string(e), io::format_double(h.l_v), io::format_double(h.l_c), io::format_double(h.l_y),
           io::format_double(h.l2), io::format_double(h.total)});
  }
}

}  // namespace dmcee
