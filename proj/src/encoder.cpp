#include "dmcee/encoder.hpp"

#include <cmath>

#include "dmcee/error.hpp"
#include "dmcee/rng.hpp"

namespace dmcee {

RowVector embed(const RowVector& x, const MatrixXd& w) {
  if (x.size() != w.rows()) {
    throw DimensionError("embed: covariate length " + std::to_string(x.size()) + " vs embedding rows " +
                         std::to_string(w.rows()));
  }
  return x * w;
}

double norm_coefficient(const BipartiteGraph& graph, Index r, Index u) {
  const Index dr = graph.restaurant_degree(r);
  const Index du = graph.consumer_degree(u);
  if (dr == 0) throw DataError("norm_coefficient: restaurant " + std::to_string(r) + " is isolated");
  if (du == 0) throw DataError("norm_coefficient: consumer " + std::to_string(u) + " is isolated");
  return 1.0 / std::sqrt(static_cast<double>(dr) * static_cast<double>(du));
}

Eigen::VectorXd message(const RowVector& e_u, const RowVector& e_r, const EncoderParams& params, double p_ru) {
  if (params.layers.empty()) throw DimensionError("message: encoder has no layers");
  const EncoderLayer& layer = params.layers.front();
  if (e_u.size() != e_r.size() || e_u.size() != layer.w_1.cols() || layer.w_2.cols() != layer.w_1.cols()) {
    throw DimensionError("message: embedding sizes do not match layer weights");
  }
  return p_ru * (layer.w_1 * e_u.transpose() + layer.w_2 * e_u.cwiseProduct(e_r).transpose());
}

double leaky_relu(double x, double slope) { return x >= 0.0 ? x : slope * x; }

Eigen::VectorXd aggregate(const Eigen::VectorXd& self_message, const std::vector<Eigen::VectorXd>& neighbor_messages,
                          double leaky_slope) {
  Eigen::VectorXd sum = self_message;
  for (const auto& m : neighbor_messages) {
    if (m.size() != sum.size()) throw DimensionError("aggregate: message length mismatch");
    sum += m;
  }
  return sum.unaryExpr([leaky_slope](double v) { return leaky_relu(v, leaky_slope); });
}

double affinity(const RowVector& e_u, const RowVector& e_r) {
  if (e_u.size() != e_r.size()) throw DimensionError("affinity: length mismatch");
  return e_u.dot(e_r);
}

double neg_log_sigmoid(double diff) {
  return diff >= 0.0 ? std::log1p(std::exp(-diff)) : -diff + std::log1p(std::exp(diff));
}

double bpr_loss(const TripleBatch& batch, const EncodedNodes& encoded) {
  if (batch.triples.empty()) throw DataError("bpr_loss: empty batch");
  double total = 0.0;
  for (const Triple& t : batch.triples) {
    const double diff = encoded.out_u.row(t.u).dot(encoded.out_r.row(t.i)) - encoded.out_u.row(t.u).dot(encoded.out_r.row(t.j));
    total += neg_log_sigmoid(diff);
  }
  return total;
}

TripleBatch sample_negatives(const BipartiteGraph& graph, Index per_positive, std::uint64_t seed) {
  if (per_positive < 0) throw ConfigError("sample_negatives: per_positive must be non-negative");
  Rng rng(seed);
  TripleBatch batch;
  batch.triples.reserve(graph.edges().size() * static_cast<std::size_t>(per_positive));
  const auto nr = static_cast<std::uint64_t>(graph.n_restaurants());
  for (const Edge& e : graph.edges()) {
    if (graph.consumer_degree(e.consumer) >= graph.n_restaurants()) {
      throw DataError("sample_negatives: consumer " + std::to_string(e.consumer) +
                      " reviewed every restaurant, no negative exists");
    }
    for (Index k = 0; k < per_positive; ++k) {
      Index j;
      do {
        j = static_cast<Index>(rng.uniform_index(nr));
      } while (graph.has_edge(e.consumer, j));
      batch.triples.push_back({e.consumer, e.restaurant, j});
    }
  }
  return batch;
}

void check_shapes(const Dataset& d, const EncoderParams& p) {
  if (p.layers.empty()) throw DimensionError("encoder: at least one layer required");
  if (p.w_r.rows() != d.x_r.cols()) {
    throw DimensionError("encoder: W_R has " + std::to_string(p.w_r.rows()) + " rows, x_r has " +
                         std::to_string(d.x_r.cols()) + " columns");
  }
  if (p.w_u.rows() != d.x_u.cols()) {
    throw DimensionError("encoder: W_U has " + std::to_string(p.w_u.rows()) + " rows, x_u has " +
                         std::to_string(d.x_u.cols()) + " columns");
  }
  if (p.w_r.cols() != p.w_u.cols()) throw DimensionError("encoder: W_R and W_U embed sizes differ");
  Index in = p.w_r.cols();
  for (const auto& layer : p.layers) {
    if (layer.w_1.cols() != in || layer.w_2.cols() != in || layer.w_1.rows() != layer.w_2.rows()) {
      throw DimensionError("encoder: layer weights do not chain");
    }
    in = layer.w_1.rows();
  }
}

namespace detail {

Propagation make_propagation(const BipartiteGraph& g, const VectorXd& keep_r, const VectorXd& keep_u) {
  using Trip = Eigen::Triplet<double>;
  std::vector<Trip> to_r, to_u;
  to_r.reserve(static_cast<std::size_t>(g.n_edges()));
  to_u.reserve(static_cast<std::size_t>(g.n_edges()));
  for (Index r = 0; r < g.n_restaurants(); ++r) {
    for (Index u : g.restaurant_neighbors(r)) {
      const double p = 1.0 / std::sqrt(static_cast<double>(g.restaurant_degree(r)) *
                                       static_cast<double>(g.consumer_degree(u)));
      const double su = keep_u.size() ? keep_u(u) : 1.0;
      const double sr = keep_r.size() ? keep_r(r) : 1.0;
      if (su != 0.0) to_r.emplace_back(r, u, p * su);
      if (sr != 0.0) to_u.emplace_back(u, r, p * sr);
    }
  }
  Propagation prop;
  prop.to_restaurants.resize(g.n_restaurants(), g.n_consumers());
  prop.to_restaurants.setFromTriplets(to_r.begin(), to_r.end());
  prop.to_consumers.resize(g.n_consumers(), g.n_restaurants());
  prop.to_consumers.setFromTriplets(to_u.begin(), to_u.end());
  return prop;
}

void layer_forward(const MatrixXd& e, const MatrixXd& h, const EncoderLayer& layer, const MatrixXd& mask, double slope,
                   MatrixXd& pre, MatrixXd& out) {
  MatrixXd neighbor = h * layer.w_1.transpose() + h.cwiseProduct(e) * layer.w_2.transpose();
  if (mask.size()) neighbor.array() *= mask.array();
  pre = e * layer.w_1.transpose() + neighbor;
  out = pre.unaryExpr([slope](double v) { return leaky_relu(v, slope); });
}

void layer_backward(const MatrixXd& e, const MatrixXd& h, const MatrixXd& pre, const MatrixXd& mask,
                    const EncoderLayer& layer, const MatrixXd& d_out, double slope, EncoderLayer& grad,
                    MatrixXd& d_e, MatrixXd& d_h) {
  MatrixXd g = d_out;
  for (Index k = 0; k < g.size(); ++k) {
    if (pre.data()[k] < 0.0) g.data()[k] *= slope;
  }
  MatrixXd gn = mask.size() ? MatrixXd(g.cwiseProduct(mask)) : g;
  const MatrixXd he = h.cwiseProduct(e);
  grad.w_1.noalias() += g.transpose() * e + gn.transpose() * h;
  grad.w_2.noalias() += gn.transpose() * he;
  const MatrixXd gn_w2 = gn * layer.w_2;  // n x D
  d_e = g * layer.w_1 + gn_w2.cwiseProduct(h);
  d_h = gn * layer.w_1 + gn_w2.cwiseProduct(e);
}

FullForward full_forward(const Dataset& d, const EncoderParams& p, const Propagation& prop,
                         const std::vector<MatrixXd>& mask_r, const std::vector<MatrixXd>& mask_u) {
  check_shapes(d, p);
  FullForward f;
  MatrixXd cur_r = d.x_r.values * p.w_r;
  MatrixXd cur_u = d.x_u.values * p.w_u;
  const MatrixXd none;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    f.in_r.push_back(cur_r);
    f.in_u.push_back(cur_u);
    f.agg_r.push_back(prop.to_restaurants * cur_u);
    f.agg_u.push_back(prop.to_consumers * cur_r);
    f.mask_r.push_back(l < mask_r.size() ? mask_r[l] : none);
    f.mask_u.push_back(l < mask_u.size() ? mask_u[l] : none);
    MatrixXd pre_r, pre_u;
    layer_forward(f.in_r[l], f.agg_r[l], p.layers[l], f.mask_r[l], p.leaky_slope, pre_r, cur_r);
    layer_forward(f.in_u[l], f.agg_u[l], p.layers[l], f.mask_u[l], p.leaky_slope, pre_u, cur_u);
    f.pre_r.push_back(std::move(pre_r));
    f.pre_u.push_back(std::move(pre_u));
  }
  f.out_r = std::move(cur_r);
  f.out_u = std::move(cur_u);
  return f;
}

EncoderParams zeros_like(const EncoderParams& p) {
  EncoderParams z;
  z.w_r = MatrixXd::Zero(p.w_r.rows(), p.w_r.cols());
  z.w_u = MatrixXd::Zero(p.w_u.rows(), p.w_u.cols());
  for (const auto& l : p.layers) {
    z.layers.push_back({MatrixXd::Zero(l.w_1.rows(), l.w_1.cols()), MatrixXd::Zero(l.w_2.rows(), l.w_2.cols())});
  }
  z.leaky_slope = p.leaky_slope;
  return z;
}

EncoderParams full_backward(const Dataset& d, const EncoderParams& p, const Propagation& prop, const FullForward& f,
                            const MatrixXd& d_out_r, const MatrixXd& d_out_u) {
  EncoderParams grad = zeros_like(p);
  MatrixXd g_r = d_out_r, g_u = d_out_u;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    MatrixXd de_r, dh_r, de_u, dh_u;
    layer_backward(f.in_r[l], f.agg_r[l], f.pre_r[l], f.mask_r[l], p.layers[l], g_r, p.leaky_slope, grad.layers[l],
                   de_r, dh_r);
    layer_backward(f.in_u[l], f.agg_u[l], f.pre_u[l], f.mask_u[l], p.layers[l], g_u, p.leaky_slope, grad.layers[l],
                   de_u, dh_u);
    de_u.noalias() += prop.to_restaurants.transpose() * dh_r;
    de_r.noalias() += prop.to_consumers.transpose() * dh_u;
    g_r = std::move(de_r);
    g_u = std::move(de_u);
  }
  grad.w_r.noalias() = d.x_r.values.transpose() * g_r;
  grad.w_u.noalias() = d.x_u.values.transpose() * g_u;
  return grad;
}

}  // namespace detail

EncodedNodes forward(const Dataset& d, const EncoderParams& p, const DropoutSpec& dropout, Mode mode,
                     std::uint64_t seed) {
  check_shapes(d, p);
  const bool drop = mode == Mode::train && (dropout.node_dropout > 0.0 || dropout.mess_dropout > 0.0);
  detail::Propagation prop;
  std::vector<MatrixXd> mask_r, mask_u;
  if (!drop) {
    prop = detail::make_propagation(d.graph);
  } else {
    if (dropout.node_dropout < 0.0 || dropout.node_dropout >= 1.0 || dropout.mess_dropout < 0.0 ||
        dropout.mess_dropout >= 1.0) {
      throw ConfigError("forward: dropout ratios must lie in [0, 1)");
    }
    Rng rng(seed);
    auto node_keep = [&](Index n) {
      VectorXd keep = VectorXd::Ones(n);
      if (dropout.node_dropout > 0.0) {
        const double scale = 1.0 / (1.0 - dropout.node_dropout);
        for (Index i = 0; i < n; ++i) keep(i) = rng.bernoulli(dropout.node_dropout) ? 0.0 : scale;
      }
      return keep;
    };
    const VectorXd keep_u = node_keep(d.n_consumers());
    const VectorXd keep_r = node_keep(d.n_restaurants());
    prop = detail::make_propagation(d.graph, keep_r, keep_u);
    if (dropout.mess_dropout > 0.0) {
      const double scale = 1.0 / (1.0 - dropout.mess_dropout);
      auto coord_mask = [&](Index rows, Index cols) {
        MatrixXd m(rows, cols);
        for (Index r = 0; r < rows; ++r)
          for (Index c = 0; c < cols; ++c) m(r, c) = rng.bernoulli(dropout.mess_dropout) ? 0.0 : scale;
        return m;
      };
      for (const auto& layer : p.layers) {
        mask_r.push_back(coord_mask(d.n_restaurants(), layer.w_1.rows()));
        mask_u.push_back(coord_mask(d.n_consumers(), layer.w_1.rows()));
      }
    }
  }
  detail::FullForward f = detail::full_forward(d, p, prop, mask_r, mask_u);
  EncodedNodes out;
  out.e_r = std::move(f.in_r.front());
  out.e_u = std::move(f.in_u.front());
  out.out_r = std::move(f.out_r);
  out.out_u = std::move(f.out_u);
  return out;
}

}  // namespace dmcee
