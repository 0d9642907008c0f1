#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dmcee/encoder.hpp"
#include "dmcee/error.hpp"
#include "dmcee/rng.hpp"
#include "dmcee/train.hpp"
#include "helpers.hpp"

using namespace dmcee;

namespace {

EncoderParams random_params(Index d_r, Index d_u, Index dim, Index out, std::uint64_t seed) {
  Dataset d = testing::make_dataset(MatrixXd::Ones(2, d_r), MatrixXd::Ones(2, d_u), {{0, 0}, {1, 1}},
                                    MatrixXd::Ones(2, 2), VectorXd::Ones(2));
  TrainConfig c;
  c.embed_dim = dim;
  c.layer_size = out;
  c.seed = seed;
  return init_params(d, c).encoder;
}

Dataset random_graph_dataset(Index nr, Index nu, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Edge> edges;
  for (Index u = 0; u < nu; ++u) edges.push_back({u, u % nr});
  for (Index r = 0; r < nr; ++r)
    for (Index u = 0; u < nu; ++u)
      if (u % nr != r && rng.uniform() < 0.3) edges.push_back({u, r});
  MatrixXd xr(nr, 3), xu(nu, 2), a(nr, 2);
  for (Index i = 0; i < xr.size(); ++i) xr.data()[i] = rng.normal();
  for (Index i = 0; i < xu.size(); ++i) xu.data()[i] = rng.normal();
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform();
  VectorXd y(nr);
  for (Index i = 0; i < nr; ++i) y(i) = rng.normal();
  return testing::make_dataset(xr, xu, edges, a, y);
}

}  // namespace

TEST_CASE("embed is a plain matrix product") {
  RowVector x(2);
  x << 1, 2;
  MatrixXd w(2, 2);
  w << 2, 0, 0, 3;
  CHECK(embed(x, w) == (RowVector(2) << 2, 6).finished());
  CHECK(embed(RowVector::Zero(2), w).isZero());
  CHECK(embed(x, MatrixXd::Identity(2, 2)) == x);
  CHECK_THROWS_AS(embed(RowVector::Ones(3), w), DimensionError);
}

TEST_CASE("norm_coefficient is the inverse square root of the degree product") {
  const BipartiteGraph one(1, 1, {{0, 0}});
  CHECK(norm_coefficient(one, 0, 0) == 1.0);
  std::vector<Edge> e;
  for (Index u = 0; u < 4; ++u)
    for (Index r = 0; r < 4; ++r) e.push_back({u, r});
  const BipartiteGraph full(4, 4, e);
  CHECK(norm_coefficient(full, 2, 3) == 0.25);
  const BipartiteGraph lonely(1, 2, {{0, 0}});
  CHECK_THROWS_AS(norm_coefficient(lonely, 0, 1), DataError);
}

TEST_CASE("message matches the hand-evaluated rule") {
  EncoderParams p;
  p.layers.push_back({MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)});
  RowVector eu(1), er(1);
  eu << 2;
  er << 3;
  CHECK(message(eu, er, p, 0.5)(0) == 4.0);
  CHECK(message(RowVector::Zero(1), er, p, 0.5).isZero());
  EncoderParams q;
  q.layers.push_back({MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 2)});
  RowVector u2(2), r2(2);
  u2 << 1.5, -2;
  r2 << 7, 9;
  CHECK(message(u2, r2, q, 1.0) == u2.transpose());
}

TEST_CASE("aggregate applies LeakyReLU to the summed messages") {
  Eigen::VectorXd self(2), n1(2);
  self << -3, 1;
  n1 << 2, 1;
  const Eigen::VectorXd out = aggregate(self, {n1}, 0.2);
  CHECK(out(0) == doctest::Approx(-0.2));
  CHECK(out(1) == 2.0);
  CHECK(aggregate(Eigen::VectorXd::Zero(3), {}, 0.2).isZero());
  CHECK(aggregate(self, {}, 0.2)(0) == doctest::Approx(-0.6));
  CHECK(leaky_relu(-1.0, 0.2) == doctest::Approx(-0.2));
  CHECK(leaky_relu(2.0, 0.2) == 2.0);
}

TEST_CASE("forward on the 2x2 fixture matches the per-node evaluation") {
  const json f = testing::fixture("encoder_forward_2x2");
  const json& in = f["inputs"];
  const double slope = in["leaky_slope"].get<double>();
  const Dataset d = testing::make_dataset(testing::mat(in["x_r"]), testing::mat(in["x_u"]), testing::edges_from(in["edges"]),
                                          MatrixXd::Ones(2, 2), VectorXd::Ones(2));
  const EncoderParams p = testing::params_from(in["params"], slope).encoder;
  const EncodedNodes e = forward(d, p, {}, Mode::eval, 0);
  const MatrixXd want_r = testing::mat(f["expected"]["out_r"]);
  const MatrixXd want_u = testing::mat(f["expected"]["out_u"]);
  CHECK((e.out_r - want_r).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((e.out_u - want_u).cwiseAbs().maxCoeff() < 1e-12);

  // The same values through the single-node building blocks.
  for (Index r = 0; r < 2; ++r) {
    const EncoderLayer& l = p.layers[0];
    const Eigen::VectorXd self = l.w_1 * e.e_r.row(r).transpose();
    std::vector<Eigen::VectorXd> msgs;
    for (Index u : d.graph.restaurant_neighbors(r)) {
      msgs.push_back(message(e.e_u.row(u), e.e_r.row(r), p, norm_coefficient(d.graph, r, u)));
    }
    CHECK((aggregate(self, msgs, slope).transpose() - want_r.row(r)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward is deterministic and dropout zero equals eval mode") {
  const Dataset d = random_graph_dataset(6, 10, 3);
  const EncoderParams p = random_params(3, 2, 4, 3, 9);
  const EncodedNodes a = forward(d, p, {}, Mode::eval, 1);
  const EncodedNodes b = forward(d, p, {}, Mode::eval, 2);
  CHECK(a.out_r == b.out_r);
  CHECK(a.out_u == b.out_u);
  const EncodedNodes t = forward(d, p, {0.0, 0.0}, Mode::train, 5);
  CHECK(t.out_r == a.out_r);
  CHECK(t.out_u == a.out_u);
  const EncodedNodes dropped = forward(d, p, {0.5, 0.5}, Mode::train, 5);
  CHECK(dropped.out_r != a.out_r);
  const EncodedNodes again = forward(d, p, {0.5, 0.5}, Mode::train, 5);
  CHECK(again.out_r == dropped.out_r);
  CHECK(a.out_r.allFinite());
  CHECK(a.e_r.rows() == 6);
  CHECK(a.out_u.rows() == 10);
  CHECK(a.out_u.cols() == 3);
}

TEST_CASE("relabeling restaurants permutes the encoded rows") {
  const Dataset d = random_graph_dataset(5, 9, 4);
  const EncoderParams p = random_params(3, 2, 4, 3, 2);
  const std::vector<Index> perm{3, 0, 4, 1, 2};  // new row k is old restaurant perm[k]
  std::vector<Index> inverse(5);
  for (Index k = 0; k < 5; ++k) inverse[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = k;
  std::vector<Edge> edges;
  for (const auto& e : d.graph.edges()) edges.push_back({e.consumer, inverse[static_cast<std::size_t>(e.restaurant)]});
  MatrixXd xr(5, d.x_r.cols());
  for (Index k = 0; k < 5; ++k) xr.row(k) = d.x_r.values.row(perm[static_cast<std::size_t>(k)]);
  const Dataset q = testing::make_dataset(xr, d.x_u.values, edges, d.causes, d.outcome);
  const EncodedNodes a = forward(d, p, {}, Mode::eval, 0);
  const EncodedNodes b = forward(q, p, {}, Mode::eval, 0);
  for (Index k = 0; k < 5; ++k) {
    CHECK((b.out_r.row(k) - a.out_r.row(perm[static_cast<std::size_t>(k)])).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK((b.out_u - a.out_u).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("affinity is a bilinear inner product") {
  RowVector a(2), b(2), c(2);
  a << 1, 0;
  b << 0, 1;
  c << 1, 1;
  CHECK(affinity(a, b) == 0.0);
  CHECK(affinity(c, c) == 2.0);
  RowVector x(3), y(3);
  x << 0.3, -1.2, 2.0;
  y << 1.5, 0.25, -0.5;
  CHECK(affinity(3.5 * x, y) == doctest::Approx(3.5 * affinity(x, y)));
}

TEST_CASE("pairwise loss values and stability") {
  CHECK(std::abs(neg_log_sigmoid(0.0) - std::log(2.0)) < 1e-12);
  CHECK(neg_log_sigmoid(std::log(3.0)) == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
  const double big = neg_log_sigmoid(1000.0);
  CHECK(std::isfinite(big));
  CHECK(big < 1e-6);
  CHECK(big >= 0.0);
  const double small = neg_log_sigmoid(-1000.0);
  CHECK(std::isfinite(small));
  CHECK(small == doctest::Approx(1000.0));
  double prev = neg_log_sigmoid(-50.0);
  for (double diff = -49.0; diff <= 30.0; diff += 1.0) {
    const double cur = neg_log_sigmoid(diff);
    CHECK(cur > 0.0);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("bpr_loss sums the triple terms") {
  EncodedNodes e;
  e.out_u = MatrixXd::Ones(1, 2);
  e.out_r = MatrixXd::Zero(2, 2);
  TripleBatch b{{{0, 0, 1}}};
  CHECK(std::abs(bpr_loss(b, e) - std::log(2.0)) < 1e-12);
  e.out_r.row(0) << 1000, 0;
  CHECK(bpr_loss(b, e) < 1e-6);
  e.out_r.row(0) << -1000, 0;
  CHECK(bpr_loss(b, e) == doctest::Approx(1000.0));
  b.triples.push_back({0, 0, 1});
  CHECK(bpr_loss(b, e) == doctest::Approx(2000.0));
}

TEST_CASE("negative sampling draws only non-edges") {
  const BipartiteGraph g(3, 2, {{0, 0}, {0, 1}, {1, 1}, {1, 2}});
  const TripleBatch b = sample_negatives(g, 1, 7);
  CHECK(b.triples.size() == 4);
  for (const auto& t : b.triples) {
    CHECK(g.has_edge(t.u, t.i));
    CHECK_FALSE(g.has_edge(t.u, t.j));
  }
  CHECK(sample_negatives(g, 3, 7).triples.size() == 12);
  const BipartiteGraph complete(2, 2, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  CHECK_THROWS_AS(sample_negatives(complete, 1, 1), DataError);
}

TEST_CASE("encoder-only training separates the two blocks") {
  const json f = testing::fixture("toy_training");
  const json& in = f["inputs"];
  CHECK(f["expected"]["two_bicliques"].get<bool>());
  const Dataset d = testing::make_dataset(testing::mat(in["x_r"]), testing::mat(in["x_u"]), testing::edges_from(in["edges"]),
                                          testing::mat(in["causes"]), testing::vec(in["outcome"]));
  TrainConfig c;
  c.epochs = 100;
  c.batch_size = 8;
  c.learning_rate = 0.05;
  c.embed_dim = 4;
  c.layer_size = 3;
  c.weights = {1.0, 0.0, 0.0};
  c.include_outcome = false;
  c.node_dropout = 0.0;
  c.mess_dropout = 0.0;
  const FittedModel m = train(d, c);
  const EncodedNodes e = encode(d, m.params);
  double within = 0.0, across = 0.0;
  for (Index u = 0; u < 8; ++u)
    for (Index r = 0; r < 6; ++r) {
      const double a = affinity(e.out_u.row(u), e.out_r.row(r));
      ((u < 4) == (r < 3) ? within : across) += a;
    }
  CHECK(within / 24.0 > across / 24.0);
}
