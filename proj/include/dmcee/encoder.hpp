#pragma once

#include <Eigen/Sparse>
#include <cstdint>
#include <vector>

#include "dmcee/data.hpp"

namespace dmcee {

using RowVector = Eigen::RowVectorXd;
using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// One propagation layer; both matrices are d' x D_in.
struct EncoderLayer {
  MatrixXd w_1;
  MatrixXd w_2;
};

/// Weights of the proxies encoding network. Row convention throughout:
/// e_r = x_r W_R, and a layer computes
///   e'_r = LeakyReLU(W_1 e_r + sum_u p_ru (W_1 e_u + W_2 (e_u ⊙ e_r))).
struct EncoderParams {
  MatrixXd w_r;  // d_r x D
  MatrixXd w_u;  // d_u x D
  std::vector<EncoderLayer> layers;
  double leaky_slope = 0.2;

  Index embed_dim() const { return w_r.cols(); }
  Index layer_size() const { return layers.empty() ? 0 : layers.back().w_1.rows(); }
};

struct EncodedNodes {
  MatrixXd e_u;  // n_consumers x D
  MatrixXd e_r;  // n_restaurants x D
  MatrixXd out_u;  // e'_u: n_consumers x d'
  MatrixXd out_r;  // e'_r: n_restaurants x d'
};

struct Triple {
  Index u = 0;  // consumer
  Index i = 0;  // reviewed restaurant
  Index j = 0;  // restaurant u did not review
};

struct TripleBatch {
  std::vector<Triple> triples;
};

/// Ratios of dropped nodes / dropped message coordinates during training.
struct DropoutSpec {
  double node_dropout = 0.0;
  double mess_dropout = 0.0;
};

enum class Mode { train, eval };

RowVector embed(const RowVector& x, const MatrixXd& w);
double norm_coefficient(const BipartiteGraph& graph, Index r, Index u);
/// p_ru (W_1 e_u + W_2 (e_u ⊙ e_r)) using the first layer's weights.
Eigen::VectorXd message(const RowVector& e_u, const RowVector& e_r, const EncoderParams& params, double p_ru);
Eigen::VectorXd aggregate(const Eigen::VectorXd& self_message, const std::vector<Eigen::VectorXd>& neighbor_messages,
                          double leaky_slope);
double leaky_relu(double x, double slope);

/// Full-graph encoding. In train mode node dropout removes a node's outgoing
/// messages and message dropout zeroes coordinates of the aggregated
/// neighbor message, both with inverse scaling; masks are drawn from `seed`.
EncodedNodes forward(const Dataset& dataset, const EncoderParams& params, const DropoutSpec& dropout, Mode mode,
                     std::uint64_t seed);

double affinity(const RowVector& e_u, const RowVector& e_r);
/// -ln sigmoid(diff), evaluated without overflow.
double neg_log_sigmoid(double diff);
double bpr_loss(const TripleBatch& batch, const EncodedNodes& encoded);

/// For each observed edge (in edge order), `per_positive` restaurants drawn
/// uniformly from the consumer's non-neighbors by rejection.
TripleBatch sample_negatives(const BipartiteGraph& graph, Index per_positive, std::uint64_t seed);

void check_shapes(const Dataset& dataset, const EncoderParams& params);

namespace detail {

/// Degree-normalized propagation operators. Entry (r, u) of to_restaurants
/// is p_ru times the node-dropout scale of u; likewise for to_consumers.
struct Propagation {
  SparseRowMatrix to_restaurants;  // n_restaurants x n_consumers
  SparseRowMatrix to_consumers;    // n_consumers x n_restaurants
};

/// `keep_r`/`keep_u` hold per-node scales (0 or 1/(1-rho)); empty means 1.
Propagation make_propagation(const BipartiteGraph& graph, const VectorXd& keep_r = {}, const VectorXd& keep_u = {});

/// One layer on a block of rows: pre = E W1^T + M ⊙ (H W1^T + (H ⊙ E) W2^T).
/// `mask` is empty (no message dropout) or the same shape as pre.
void layer_forward(const MatrixXd& e, const MatrixXd& h, const EncoderLayer& layer, const MatrixXd& mask, double slope,
                   MatrixXd& pre, MatrixXd& out);

/// Backward of layer_forward: accumulates into grad_layer, returns dE and dH.
void layer_backward(const MatrixXd& e, const MatrixXd& h, const MatrixXd& pre, const MatrixXd& mask,
                    const EncoderLayer& layer, const MatrixXd& d_out, double slope, EncoderLayer& grad_layer,
                    MatrixXd& d_e, MatrixXd& d_h);

struct FullForward {
  std::vector<MatrixXd> in_r, in_u;    // inputs of each layer
  std::vector<MatrixXd> agg_r, agg_u;  // propagated neighbor inputs
  std::vector<MatrixXd> pre_r, pre_u;
  std::vector<MatrixXd> mask_r, mask_u;
  MatrixXd out_r, out_u;
};

FullForward full_forward(const Dataset& dataset, const EncoderParams& params, const Propagation& prop,
                         const std::vector<MatrixXd>& mask_r, const std::vector<MatrixXd>& mask_u);

/// Gradients of a scalar w.r.t. all encoder weights given dL/de'_r and dL/de'_u.
EncoderParams full_backward(const Dataset& dataset, const EncoderParams& params, const Propagation& prop,
                            const FullForward& fwd, const MatrixXd& d_out_r, const MatrixXd& d_out_u);

EncoderParams zeros_like(const EncoderParams& params);

}  // namespace detail

}  // namespace dmcee
