#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "ddhom/network.hpp"
#include "ddhom/optim.hpp"
#include "ddhom/tape.hpp"
#include "ddhom/train.hpp"

using namespace ddhom;

namespace {

Network dense_stack(int in, std::vector<int> hidden, Activation act = Activation::Softplus,
                    std::uint64_t seed = 1) {
  InputSpec is;
  is.features = in;
  std::vector<LayerSpec> layers;
  for (int h : hidden) layers.push_back(DenseSpec{h, act});
  layers.push_back(DenseSpec{1, Activation::Linear});
  Network net(is, std::move(layers));
  net.init_params(seed);
  return net;
}

Tensor random_matrix(int n, int m, Philox& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t({n, m});
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("forward: identity dense layer and closed-form activations") {
  InputSpec is;
  is.features = 1;
  Network net(is, {DenseSpec{1, Activation::Linear}});
  net.params()[0].W.data[0] = 1.0;
  net.params()[0].b.data[0] = 0.0;
  Tensor x({3, 1});
  x.data = {0.5, -2.0, 7.0};
  Tensor y = net.predict(x);
  REQUIRE(y.data == x.data);

  Tape tape;
  NodeId z = tape.softplus(tape.leaf(Tensor::scalar(0.0)));
  REQUIRE(tape.val(z).data[0] == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  NodeId big = tape.softplus(tape.leaf(Tensor::scalar(50.0)));
  REQUIRE(std::abs(tape.val(big).data[0] - 50.0) < 1e-9);
}

TEST_CASE("forward: all-ones 3x3 convolution on a constant image") {
  Tape tape;
  Tensor img = Tensor::full({1, 5, 5, 1}, 1.0);
  Tensor ker = Tensor::full({3, 3, 1, 1}, 1.0);
  ConvGeom g;
  g.kh = g.kw = 3;
  g.sh = g.sw = 1;
  g.ph = g.pw = 1;
  NodeId y = tape.conv2d(tape.leaf(img), tape.leaf(ker), g);
  const Tensor& Y = tape.val(y);
  REQUIRE(Y.shape == std::vector<int>{1, 5, 5, 1});
  REQUIRE(Y.data[2 * 5 + 2] == 9.0);
  REQUIRE(Y.data[0] == 4.0);
  REQUIRE(Y.data[4] == 4.0);
  REQUIRE(Y.data[4 * 5 + 0] == 4.0);
  REQUIRE(Y.data[4 * 5 + 4] == 4.0);
  REQUIRE(Y.data[1] == 6.0);  // edge
}

TEST_CASE("count_variables fixtures") {
  REQUIRE(dense_stack(5, {76}).count_variables() == 533);
  REQUIRE(dense_stack(5, {46, 46, 46, 46, 46, 46}).count_variables() == 11133);
  InputSpec is;
  is.features = 1;
  Network tiny(is, {DenseSpec{1, Activation::Linear}});
  REQUIRE(tiny.count_variables() == 2);
}

TEST_CASE("backward: single linear layer matches the normal-equation gradient") {
  InputSpec is;
  is.features = 3;
  Network net(is, {DenseSpec{1, Activation::Linear}});
  Philox rng(5, 0);
  for (auto& w : net.params()[0].W.data) w = rng.uniform(-1, 1);
  net.params()[0].b.data[0] = 0.3;
  int m = 20;
  Tensor X = random_matrix(m, 3, rng);
  Tensor y({m, 1});
  for (auto& v : y.data) v = rng.uniform(-1, 1);
  LossGrads lg = loss_and_grads(net, X, nullptr, y);
  // analytic: d/dw (1/m)|Xw + b - y|^2 = 2/m X^T (Xw + b - y)
  Eigen::MatrixXd Xm(m, 3);
  Eigen::VectorXd yv(m), wv(3);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < 3; ++j) Xm(i, j) = X.data[static_cast<std::size_t>(i) * 3 + j];
  for (int i = 0; i < m; ++i) yv(i) = y.data[static_cast<std::size_t>(i)];
  for (int j = 0; j < 3; ++j) wv(j) = net.params()[0].W.data[static_cast<std::size_t>(j)];
  Eigen::VectorXd resid = Xm * wv + Eigen::VectorXd::Constant(m, net.params()[0].b.data[0]) - yv;
  Eigen::VectorXd gw = 2.0 / m * Xm.transpose() * resid;
  for (int j = 0; j < 3; ++j)
    REQUIRE(lg.grads[0].data[static_cast<std::size_t>(j)] == Catch::Approx(gw(j)).epsilon(1e-12));
  REQUIRE(lg.grads[1].data[0] == Catch::Approx(2.0 / m * resid.sum()).epsilon(1e-12));

  // zero loss gradient -> zero parameter gradients
  Tensor y_exact({m, 1});
  for (int i = 0; i < m; ++i) y_exact.data[static_cast<std::size_t>(i)] = (Xm * wv)(i) + net.params()[0].b.data[0];
  LossGrads z = loss_and_grads(net, X, nullptr, y_exact);
  for (const auto& gt : z.grads)
    for (double v : gt.data) REQUIRE(std::abs(v) < 1e-14);
}

TEST_CASE("backward: gradients match finite differences on a softplus stack") {
  Network net = dense_stack(4, {7, 5}, Activation::Softplus, 3);
  Philox rng(6, 0);
  int m = 12;
  Tensor X = random_matrix(m, 4, rng);
  Tensor y({m, 1});
  for (auto& v : y.data) v = rng.uniform(-1, 1);
  LossGrads lg = loss_and_grads(net, X, nullptr, y);

  auto loss_at = [&]() { return loss_and_grads(net, X, nullptr, y).loss; };
  Philox pick(7, 0);
  std::vector<Tensor*> tp;
  for (std::size_t l = 0; l < net.params().size(); ++l)
    if (net.params()[l].has_params()) {
      tp.push_back(&net.params()[l].W);
      tp.push_back(&net.params()[l].b);
    }
  for (int probe = 0; probe < 25; ++probe) {
    std::size_t k = pick.uniform_index(tp.size());
    std::size_t i = pick.uniform_index(tp[k]->data.size());
    double h = 1e-6 * std::max(1.0, std::abs(tp[k]->data[i]));
    double saved = tp[k]->data[i];
    tp[k]->data[i] = saved + h;
    double lp = loss_at();
    tp[k]->data[i] = saved - h;
    double lm = loss_at();
    tp[k]->data[i] = saved;
    double fd = (lp - lm) / (2 * h);
    REQUIRE(lg.grads[k].data[i] == Catch::Approx(fd).epsilon(1e-6).margin(1e-10));
  }
}

TEST_CASE("input gradients: zero net, linear net, finite differences") {
  Network net = dense_stack(3, {6}, Activation::Softplus, 5);
  for (auto& w : net.params()[0].W.data) w = 0.0;
  Philox rng(8, 0);
  Tensor X = random_matrix(5, 3, rng);
  Tensor g = input_gradient(net, X, nullptr);
  for (double v : g.data) REQUIRE(v == 0.0);

  InputSpec is;
  is.features = 3;
  Network lin(is, {DenseSpec{1, Activation::Linear}});
  lin.params()[0].W.data = {2.0, -3.0, 0.5};
  g = input_gradient(lin, X, nullptr);
  for (int i = 0; i < 5; ++i) {
    REQUIRE(g.data[static_cast<std::size_t>(i) * 3 + 0] == 2.0);
    REQUIRE(g.data[static_cast<std::size_t>(i) * 3 + 1] == -3.0);
    REQUIRE(g.data[static_cast<std::size_t>(i) * 3 + 2] == 0.5);
  }

  Network rnd = dense_stack(3, {9, 7}, Activation::Softplus, 11);
  rnd.feature_stats.mean = {0.1, -0.2, 0.05};
  rnd.feature_stats.stdev = {0.7, 1.3, 0.4};
  rnd.label_stats.mean = 2.0;
  rnd.label_stats.stdev = 1.7;
  g = input_gradient(rnd, X, nullptr);
  Philox pick(9, 0);
  for (int probe = 0; probe < 20; ++probe) {
    int i = static_cast<int>(pick.uniform_index(5));
    int j = static_cast<int>(pick.uniform_index(3));
    double h = 1e-6;
    Tensor Xp = X, Xm = X;
    Xp.data[static_cast<std::size_t>(i) * 3 + j] += h;
    Xm.data[static_cast<std::size_t>(i) * 3 + j] -= h;
    double fd = (rnd.predict(Xp).data[static_cast<std::size_t>(i)] -
                 rnd.predict(Xm).data[static_cast<std::size_t>(i)]) /
                (2 * h);
    REQUIRE(g.data[static_cast<std::size_t>(i) * 3 + j] == Catch::Approx(fd).epsilon(1e-6).margin(1e-12));
  }
}

TEST_CASE("tape computes exact gradients of a hand-built quadratic") {
  // z = 0.5 * k * E11^2 per row -> dz/dE11 = k * E11
  Tape tape;
  double k = 3.7;
  Tensor E({4, 3});
  E.data = {0.1, 0.2, 0.3, -0.4, 0.0, 0.1, 1.5, -2.0, 0.7, 0.0, 0.0, 0.0};
  NodeId Ein = tape.leaf(E);
  NodeId e11 = tape.slice_cols(Ein, 0, 1);
  NodeId z = tape.scale(tape.mul(e11, e11), 0.5 * k);
  std::vector<NodeId> g = tape.gradients(tape.sum_all(z), {Ein});
  const Tensor& G = tape.val(g[0]);
  for (int i = 0; i < 4; ++i) {
    REQUIRE(G.data[static_cast<std::size_t>(i) * 3 + 0] ==
            Catch::Approx(k * E.data[static_cast<std::size_t>(i) * 3]).margin(1e-15));
    REQUIRE(G.data[static_cast<std::size_t>(i) * 3 + 1] == 0.0);
    REQUIRE(G.data[static_cast<std::size_t>(i) * 3 + 2] == 0.0);
  }
}

TEST_CASE("double backprop: penalized loss gradients match finite differences") {
  Network net = dense_stack(3, {6, 5}, Activation::Softplus, 17);
  net.feature_stats.mean = {0.0, 0.0, 0.0};
  net.feature_stats.stdev = {2.0, 0.5, 1.0};
  net.label_stats.mean = -0.3;
  net.label_stats.stdev = 0.8;
  Philox rng(10, 0);
  int m = 9;
  Tensor X = random_matrix(m, 3, rng, -0.5, 0.5);
  Tensor y({m, 1});
  for (auto& v : y.data) v = rng.uniform(-1, 1);
  Tensor Pref = random_matrix(m, 4, rng);
  Tensor Favg({m, 4});
  for (int i = 0; i < m; ++i) {
    Favg.data[static_cast<std::size_t>(i) * 4 + 0] = 1.0 + rng.uniform(-0.01, 0.01);
    Favg.data[static_cast<std::size_t>(i) * 4 + 1] = rng.uniform(-0.01, 0.01);
    Favg.data[static_cast<std::size_t>(i) * 4 + 2] = rng.uniform(-0.01, 0.01);
    Favg.data[static_cast<std::size_t>(i) * 4 + 3] = 1.0 + rng.uniform(-0.01, 0.01);
  }
  PenaltySpec pen;
  pen.P_ref = &Pref;
  pen.F_avg = &Favg;
  pen.beta = 0.37;
  pen.sigmaP = {0.9, 1.1, 1.3, 0.7};
  pen.strain_input = StrainInput::Primary;

  LossGrads lg = loss_and_grads(net, X, nullptr, y, &pen);

  SECTION("beta = 0 reduces to the plain MSE gradients") {
    PenaltySpec none = pen;
    none.beta = 0.0;
    LossGrads a = loss_and_grads(net, X, nullptr, y, &none);
    LossGrads b = loss_and_grads(net, X, nullptr, y, nullptr);
    REQUIRE(a.loss == b.loss);
    for (std::size_t k = 0; k < a.grads.size(); ++k) REQUIRE(a.grads[k].data == b.grads[k].data);
  }

  SECTION("finite-difference oracle on the full penalized loss") {
    std::vector<Tensor*> tp;
    for (std::size_t l = 0; l < net.params().size(); ++l)
      if (net.params()[l].has_params()) {
        tp.push_back(&net.params()[l].W);
        tp.push_back(&net.params()[l].b);
      }
    Philox pick(11, 0);
    for (int probe = 0; probe < 25; ++probe) {
      std::size_t k = pick.uniform_index(tp.size());
      std::size_t i = pick.uniform_index(tp[k]->data.size());
      double h = 3e-6 * std::max(1.0, std::abs(tp[k]->data[i]));
      double saved = tp[k]->data[i];
      tp[k]->data[i] = saved + h;
      double lp = loss_and_grads(net, X, nullptr, y, &pen).loss;
      tp[k]->data[i] = saved - h;
      double lm = loss_and_grads(net, X, nullptr, y, &pen).loss;
      tp[k]->data[i] = saved;
      double fd = (lp - lm) / (2 * h);
      REQUIRE(lg.grads[k].data[i] == Catch::Approx(fd).epsilon(1e-5).margin(1e-9));
    }
  }
}

TEST_CASE("double backprop through a small convolutional branch") {
  InputSpec is;
  is.image = true;
  is.h = 7;
  is.w = 7;
  is.c = 1;
  is.extra_features = 3;
  ConvGeom cg;
  cg.kh = cg.kw = 3;
  cg.sh = cg.sw = 2;
  cg.ph = cg.pw = 1;
  ConvGeom pg;
  pg.kh = pg.kw = 2;
  pg.sh = pg.sw = 1;
  pg.ph = pg.pw = 0;
  Network net(is, {Conv2DSpec{2, cg, Activation::ReLU}, MaxPool2DSpec{pg}, FlattenSpec{},
                   DenseSpec{4, Activation::ReLU}, ConcatExtraSpec{}, DenseSpec{6, Activation::Softplus},
                   DenseSpec{1, Activation::Linear}});
  net.init_params(9);
  Philox rng(20, 0);
  int m = 4;
  Tensor img({m, 7, 7, 1});
  for (auto& v : img.data) v = rng.uniform(-0.1, 0.1);
  Tensor E = random_matrix(m, 3, rng, -1e-3, 1e-3);
  Tensor y({m, 1});
  for (auto& v : y.data) v = rng.uniform(-1, 1);
  Tensor Pref = random_matrix(m, 4, rng);
  Tensor Favg = Tensor::zeros({m, 4});
  for (int i = 0; i < m; ++i) {
    Favg.data[static_cast<std::size_t>(i) * 4 + 0] = 1.0;
    Favg.data[static_cast<std::size_t>(i) * 4 + 3] = 1.0;
  }
  PenaltySpec pen;
  pen.P_ref = &Pref;
  pen.F_avg = &Favg;
  pen.beta = 0.2;
  pen.strain_input = StrainInput::Extra;

  LossGrads lg = loss_and_grads(net, img, &E, y, &pen);
  std::vector<Tensor*> tp;
  for (std::size_t l = 0; l < net.params().size(); ++l)
    if (net.params()[l].has_params()) {
      tp.push_back(&net.params()[l].W);
      tp.push_back(&net.params()[l].b);
    }
  Philox pick(21, 0);
  for (int probe = 0; probe < 20; ++probe) {
    std::size_t k = pick.uniform_index(tp.size());
    std::size_t i = pick.uniform_index(tp[k]->data.size());
    double h = 3e-6 * std::max(1.0, std::abs(tp[k]->data[i]));
    double saved = tp[k]->data[i];
    tp[k]->data[i] = saved + h;
    double lp = loss_and_grads(net, img, &E, y, &pen).loss;
    tp[k]->data[i] = saved - h;
    double lm = loss_and_grads(net, img, &E, y, &pen).loss;
    tp[k]->data[i] = saved;
    double fd = (lp - lm) / (2 * h);
    REQUIRE(lg.grads[k].data[i] == Catch::Approx(fd).epsilon(1e-5).margin(1e-9));
  }
}

TEST_CASE("learning-rate staircase") {
  LrSchedule s;
  REQUIRE(lr_at(s, 0) == 0.001);
  REQUIRE(lr_at(s, 99) == 0.001);
  REQUIRE(lr_at(s, 250) == Catch::Approx(0.001 * 0.49).epsilon(1e-12));
}

TEST_CASE("adam closed forms") {
  Tensor p({2});
  p.data = {1.0, -2.0};
  Adam adam;
  Tensor zero({2});
  adam.step({&p}, {zero}, 0.01);
  REQUIRE(p.data[0] == 1.0);
  REQUIRE(p.data[1] == -2.0);

  Tensor q({1});
  q.data = {0.5};
  Adam a2;
  Tensor g({1});
  g.data = {0.3};
  a2.step({&q}, {g}, 0.01);
  double expected = 0.5 - 0.01 * 0.3 / (std::sqrt(0.3 * 0.3) + 1e-8);
  REQUIRE(q.data[0] == Catch::Approx(expected).margin(1e-6 * 0.01));

  Tensor r({1});
  r.data = {0.0};
  Adam a3;
  double m = 0, v = 0, x = 0, gg = -1.3, lr = 0.005;
  Tensor gt({1});
  gt.data = {gg};
  a3.step({&r}, {gt}, lr);
  a3.step({&r}, {gt}, lr);
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * gg;
    v = 0.999 * v + 0.001 * gg * gg;
    double mh = m / (1 - std::pow(0.9, t));
    double vh = v / (1 - std::pow(0.999, t));
    x -= lr * mh / (std::sqrt(vh) + 1e-8);
  }
  REQUIRE(r.data[0] == Catch::Approx(x).epsilon(1e-14));
}

TEST_CASE("normalization statistics") {
  Tensor X({200, 2});
  Philox rng(12, 0);
  for (int i = 0; i < 200; ++i) {
    double s = 0;
    for (int k = 0; k < 12; ++k) s += rng.uniform();
    X.data[static_cast<std::size_t>(i) * 2] = 5.0 + 2.0 * (s - 6.0);
    X.data[static_cast<std::size_t>(i) * 2 + 1] = 42.0;  // constant column
  }
  ColumnStats st = ColumnStats::fit(X);
  REQUIRE(st.mean[0] == Catch::Approx(5.0).margin(3.0 * 2.0 / std::sqrt(200.0)));
  REQUIRE(st.stdev[0] == Catch::Approx(2.0).margin(0.5));
  REQUIRE(st.stdev[1] == 1.0);  // clamped
  REQUIRE((42.0 - st.mean[1]) / st.stdev[1] == 0.0);

  LabelStats ls = LabelStats::fit({1.0, 2.0, 3.0});
  for (double v : {-7.0, 0.0, 11.5}) REQUIRE(ls.unscale(ls.scale(v)) == Catch::Approx(v).margin(1e-12));
}

TEST_CASE("batch loss is permutation invariant to 1e-12") {
  Network net = dense_stack(4, {8}, Activation::Softplus, 21);
  Philox rng(13, 0);
  int m = 64;
  Tensor X = random_matrix(m, 4, rng);
  Tensor y({m, 1});
  for (auto& v : y.data) v = rng.uniform(-1, 1);
  double base = loss_and_grads(net, X, nullptr, y).loss;
  std::vector<int> order(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
  Philox sh(14, 0);
  shuffle(order, sh);
  Tensor Xp = gather_rows(X, order, 0, m);
  Tensor yp = gather_rows(y, order, 0, m);
  double perm = loss_and_grads(net, Xp, nullptr, yp).loss;
  REQUIRE(std::abs(base - perm) <= 1e-12 * std::max(1.0, std::abs(base)));
}

TEST_CASE("training is bitwise deterministic") {
  auto run = [&]() {
    Network net = dense_stack(3, {10}, Activation::Softplus, 33);
    Philox rng(15, 0);
    Tensor X = random_matrix(40, 3, rng);
    std::vector<double> y(40);
    for (auto& v : y) v = rng.uniform(-1, 1);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.seed = 7;
    train_network(net, X, nullptr, y, cfg);
    return net.params()[0].W.data;
  };
  REQUIRE(run() == run());
}

TEST_CASE("overfit sanity: small softplus net fits a smooth 1d function") {
  int m = 50;
  Tensor X({m, 1});
  std::vector<double> y(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    double x = -1.0 + 2.0 * i / (m - 1);
    X.data[static_cast<std::size_t>(i)] = x;
    y[static_cast<std::size_t>(i)] = std::sin(2.0 * x) + 0.3 * x * x;
  }
  Network net = dense_stack(1, {24, 24}, Activation::Softplus, 99);
  TrainConfig cfg;
  cfg.epochs = 10000;
  cfg.seed = 3;
  cfg.schedule.lr0 = 0.01;
  cfg.schedule.v_decay = 0.97;
  cfg.schedule.n_decay = 500;
  TrainHistory h = train_network(net, X, nullptr, y, cfg);
  REQUIRE(h.final_loss < 1e-6);
}

TEST_CASE("maxpool ties give the gradient to the first row-major maximum") {
  Tape tape;
  Tensor x({1, 2, 2, 1});
  x.data = {3.0, 3.0, 3.0, 1.0};
  NodeId in = tape.leaf(x);
  ConvGeom g;
  g.kh = g.kw = 2;
  g.sh = g.sw = 1;
  NodeId y = tape.maxpool(in, g);
  REQUIRE(tape.val(y).data[0] == 3.0);
  std::vector<NodeId> grad = tape.gradients(y, {in});
  const Tensor& G = tape.val(grad[0]);
  REQUIRE(G.data == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("shape mismatches raise errors naming the layer") {
  InputSpec is;
  is.features = 3;
  REQUIRE_THROWS_WITH(
      (Network{is, {DenseSpec{4, Activation::ReLU}, Conv2DSpec{2, ConvGeom{}, Activation::ReLU}}}),
      Catch::Matchers::ContainsSubstring("layer 1"));
  Network net(is, {DenseSpec{4, Activation::ReLU}, DenseSpec{1, Activation::Linear}});
  net.init_params(1);
  Tensor bad({2, 5});
  REQUIRE_THROWS_AS(net.predict(bad), InvalidInputError);
}
