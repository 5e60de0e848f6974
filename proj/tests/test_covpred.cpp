#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "riskmpc/covpred.hpp"

using namespace riskmpc;
using namespace riskmpc::oracle;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

namespace {

NetSpec small_spec(int in, std::vector<int> rec, std::vector<int> dense, int out = 4) {
  NetSpec s;
  s.input_width = in;
  s.output_width = out;
  s.recurrent_widths = std::move(rec);
  s.dense_widths = std::move(dense);
  return s;
}

MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  return MatrixXd::NullaryExpr(rows, cols, [&] { return g(rng); });
}

NetParams random_params(const NetSpec& spec, std::mt19937_64& rng, double scale = 0.5) {
  NetParams p(spec);
  p.values = random_matrix(rng, static_cast<int>(p.values.size()), 1, scale);
  return p;
}

// Straightforward scalar recurrence, one timestep and one unit at a time.
MatrixXd naive_forward(const NetParams& p, const MatrixXd& x) {
  const auto& spec = p.spec;
  const int layers = static_cast<int>(spec.recurrent_widths.size() + spec.dense_widths.size()) + 1;
  std::vector<std::vector<double>> hidden;
  for (int w : spec.recurrent_widths) hidden.emplace_back(static_cast<std::size_t>(w), 0.0);
  MatrixXd out(spec.output_width, x.cols());
  for (int t = 0; t < x.cols(); ++t) {
    std::vector<double> a(x.col(t).data(), x.col(t).data() + x.rows());
    for (int l = 0; l < layers; ++l) {
      const auto w = p.input_weights(l);
      const auto b = p.bias(l);
      const bool recurrent = l < static_cast<int>(spec.recurrent_widths.size());
      const bool last = l == layers - 1;
      std::vector<double> next(static_cast<std::size_t>(w.rows()));
      for (int i = 0; i < w.rows(); ++i) {
        double z = b[i];
        for (int j = 0; j < w.cols(); ++j) z += w(i, j) * a[static_cast<std::size_t>(j)];
        if (recurrent) {
          const auto wr = p.recurrent_weights(l);
          for (int j = 0; j < wr.cols(); ++j) z += wr(i, j) * hidden[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)];
        }
        next[static_cast<std::size_t>(i)] = last ? z : std::max(z, 0.0);
      }
      if (recurrent) hidden[static_cast<std::size_t>(l)] = next;
      a = next;
    }
    for (int i = 0; i < spec.output_width; ++i) out(i, t) = a[static_cast<std::size_t>(i)];
  }
  return out;
}

std::vector<Sequence> random_batch(std::mt19937_64& rng, const NetSpec& spec, int count, int length) {
  std::vector<Sequence> b;
  for (int i = 0; i < count; ++i)
    b.push_back({random_matrix(rng, spec.input_width, length), random_matrix(rng, spec.output_width, length)});
  return b;
}


}  // namespace

TEST_CASE("default spec layout") {
  const NetSpec spec;
  const auto shapes = layer_shapes(spec);
  REQUIRE(shapes.size() == 8);
  for (int i = 0; i < 5; ++i) CHECK(shapes[static_cast<std::size_t>(i)].recurrent);
  CHECK_FALSE(shapes[5].recurrent);
  CHECK(shapes[6].relu);
  CHECK_FALSE(shapes[7].relu);
  CHECK(shapes[7].out == 4);
  const auto expected = (18 * 64 + 64 * 64 + 64) + 4 * (64 * 64 * 2 + 64) + 2 * (64 * 64 + 64) + (64 * 4 + 4);
  CHECK(parameter_count(spec) == expected);
  CHECK_THROWS_AS(validate(small_spec(18, {0}, {})), std::invalid_argument);
}

TEST_CASE("zero parameters give zero outputs") {
  std::mt19937_64 rng(1);
  const NetParams p{NetSpec{}};
  const auto r = forward(p, random_matrix(rng, 18, 7, 10.0));
  CHECK(r.outputs.cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.final_hidden.size() == 5);
}

TEST_CASE("a single linear layer can copy inputs") {
  NetParams p(small_spec(18, {}, {}));
  p.input_weights(0).leftCols(4).setIdentity();
  std::mt19937_64 rng(2);
  const MatrixXd x = random_matrix(rng, 18, 5);
  CHECK((forward(p, x).outputs - x.topRows(4)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward matches a scalar recurrence") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto spec = small_spec(18, {5, 4}, {6}, 4);
    const auto p = random_params(spec, rng);
    const MatrixXd x = random_matrix(rng, 18, 3);
    CHECK((forward(p, x).outputs - naive_forward(p, x)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const NetSpec full;
  const auto p = init_params(full, 9);
  const MatrixXd x = random_matrix(rng, 18, 3);
  CHECK((forward(p, x).outputs - naive_forward(p, x)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("carrying the hidden state equals running the whole sequence") {
  std::mt19937_64 rng(4);
  const auto spec = small_spec(18, {6, 5}, {4});
  const auto p = random_params(spec, rng);
  const MatrixXd x = random_matrix(rng, 18, 9);
  const auto whole = forward(p, x);
  const auto head = forward(p, x.leftCols(4));
  const auto tail = forward(p, x.rightCols(5), &head.final_hidden);
  CHECK((whole.outputs.rightCols(5) - tail.outputs).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(forward(p, MatrixXd::Zero(17, 2)), std::invalid_argument);
  HiddenState wrong{VectorXd::Zero(3)};
  CHECK_THROWS_AS(forward(p, x, &wrong), std::invalid_argument);
}

TEST_CASE("perfect predictions give a zero gradient") {
  std::mt19937_64 rng(5);
  const auto spec = small_spec(18, {5, 5}, {5});
  const auto p = random_params(spec, rng);
  auto batch = random_batch(rng, spec, 3, 6);
  for (auto& s : batch) s.targets = forward(p, s.inputs).outputs;
  const auto g = bptt_grad(p, batch);
  CHECK(g.loss == 0.0);
  CHECK(g.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("BPTT agrees with central differences on small random nets") {
  std::mt19937_64 rng(6);
  const double h = 1e-5;
  int nets = 0;
  for (int attempt = 0; nets < 10 && attempt < 100; ++attempt) {
    const auto spec = small_spec(18, {4, 3}, {3}, 4);
    REQUIRE(parameter_count(spec) <= 500);
    const auto p = random_params(spec, rng, 0.6);
    const auto batch = random_batch(rng, spec, 2, 5);
    if (min_abs_preactivation(p, batch) < 1e-5) continue;
    const auto pattern = activation_pattern(p, batch);
    const auto g = bptt_grad(p, batch);
    double worst = 0.0;
    bool crossed = false;
    for (Eigen::Index i = 0; i < p.values.size() && !crossed; ++i) {
      NetParams plus = p, minus = p;
      plus.values[i] += h;
      minus.values[i] -= h;
      if (activation_pattern(plus, batch) != pattern || activation_pattern(minus, batch) != pattern) {
        crossed = true;
        break;
      }
      const double fd = (mse(plus, batch) - mse(minus, batch)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(g.values[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - g.values[i]) / denom);
    }
    if (crossed) continue;
    CHECK(worst <= 1e-4);
    ++nets;
  }
  CHECK(nets == 10);
}

TEST_CASE("doubling the residuals doubles the gradient") {
  std::mt19937_64 rng(7);
  const auto spec = small_spec(18, {5}, {5});
  const auto p = random_params(spec, rng);
  const auto batch = random_batch(rng, spec, 2, 6);
  auto doubled = batch;
  for (auto& s : doubled) {
    const MatrixXd y = forward(p, s.inputs).outputs;
    s.targets = y - 2.0 * (y - s.targets);
  }
  const auto g1 = bptt_grad(p, batch);
  const auto g2 = bptt_grad(p, doubled);
  CHECK((g2.values - 2.0 * g1.values).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + g1.values.cwiseAbs().maxCoeff()));
  CHECK(g2.loss == doctest::Approx(4.0 * g1.loss).epsilon(1e-12));
}

TEST_CASE("parallel and serial gradients are bit-identical") {
  std::mt19937_64 rng(8);
  const NetSpec spec;
  const auto p = init_params(spec, 3);
  std::vector<Sequence> batch;
  for (int i = 0; i < 7; ++i) batch.push_back({random_matrix(rng, 18, 20 + i), random_matrix(rng, 4, 20 + i)});
  const auto a = bptt_grad_serial(p, batch);
  const auto b = bptt_grad(p, batch);
  CHECK(a.loss == b.loss);
  CHECK((a.values.array() == b.values.array()).all());
  CHECK(a.loss == doctest::Approx(mse(p, batch)).epsilon(1e-12));
}

TEST_CASE("a constant target is learned") {
  std::mt19937_64 rng(10);
  const auto spec = small_spec(18, {8}, {8});
  std::vector<Sequence> data;
  // every input is the same too, so only biases matter
  const MatrixXd x = random_matrix(rng, 18, 1).replicate(1, 30);
  for (int i = 0; i < 6; ++i) data.push_back({x, MatrixXd::Constant(4, 30, 0.37)});
  TrainOptions opt;
  opt.epochs = 300;
  opt.seed = 5;
  const auto r = train(data, spec, opt);
  REQUIRE(r.history.size() == 301);
  CHECK(r.history.back().train_mse <= 1e-6);
  // predictions in raw units
  const auto& m = r.final_model;
  const auto out = forward(m.params, m.norm.apply(data[0]).inputs).outputs;
  for (Eigen::Index t = 0; t < out.cols(); ++t)
    CHECK(std::abs(m.norm.denormalize_output(out.col(t))[0] - 0.37) <= 1e-3);
}

TEST_CASE("training is deterministic per seed and reports divergence") {
  std::mt19937_64 rng(11);
  const auto spec = small_spec(18, {6, 6}, {6});
  std::vector<Sequence> data;
  for (int i = 0; i < 8; ++i) data.push_back({random_matrix(rng, 18, 12), random_matrix(rng, 4, 12)});
  TrainOptions opt;
  opt.epochs = 5;
  const auto a = train(data, spec, opt);
  const auto b = train(data, spec, opt);
  CHECK((a.final_model.params.values.array() == b.final_model.params.values.array()).all());
  CHECK(a.validation_indices.size() == 2);
  CHECK(a.train_indices.size() == 6);
  opt.parallel = false;
  const auto c = train(data, spec, opt);
  CHECK((a.final_model.params.values.array() == c.final_model.params.values.array()).all());

  opt.learning_rate = 1e308;
  opt.clip_norm = 1e308;
  CHECK_THROWS_WITH_AS(train(data, spec, opt), doctest::Contains("epoch 1"), std::runtime_error);
  CHECK_THROWS_AS(train({}, spec, TrainOptions{}), std::invalid_argument);
}

TEST_CASE("make_input sorts, pads and falls back to a sentinel") {
  const Vector3d robot(0, 0, 0.5);
  std::vector<Vector3d> feats{{3, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  const VectorXd in = make_input(robot, 0.0, feats, 5.0);
  CHECK(in.head<3>() == robot);
  CHECK(in[3] == 1.0);
  CHECK(in[6] == 2.0);
  CHECK(in[9] == 3.0);
  CHECK(in[12] == 3.0);
  CHECK(in[15] == 3.0);

  const VectorXd empty = make_input(robot, std::numbers::pi / 2, {}, 5.0);
  for (int slot = 0; slot < 5; ++slot) {
    CHECK(std::abs(empty[3 + 3 * slot]) <= 1e-15);
    CHECK(empty[4 + 3 * slot] == doctest::Approx(5.0));
    CHECK(empty[5 + 3 * slot] == 0.5);
  }

  std::vector<Vector3d> many;
  for (int i = 0; i < 9; ++i) many.emplace_back(9 - i, 0.1 * i, 0);
  const VectorXd sorted = make_input(robot, 0.0, many, 5.0);
  for (int slot = 1; slot < 5; ++slot)
    CHECK((sorted.segment<3>(3 + 3 * slot) - robot).norm() >= (sorted.segment<3>(3 * slot) - robot).norm());
}

TEST_CASE("predict_horizon") {
  std::mt19937_64 rng(12);
  CovarianceModel zero{NetParams(NetSpec{}), Normalization::identity(NetSpec{})};
  std::vector<State2> planned(13, State2{1, 2});
  const auto z = predict_horizon(zero, planned, 0.5, 0.0, {}, 5.0, zero_hidden(NetSpec{}));
  REQUIRE(z.covariances.size() == 13);
  for (const auto& c : z.covariances) CHECK(c == Covariance2{});

  CovarianceModel m{init_params(NetSpec{}, 4), Normalization::identity(NetSpec{})};
  std::vector<Vector3d> feats;
  // random positions: no two features tie in distance
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (int i = 0; i < 8; ++i) feats.emplace_back(u(rng), u(rng), 0.25 * i);
  for (std::size_t k = 0; k < planned.size(); ++k) planned[k] = {0.2 * k, 0.05 * k};
  const auto a = predict_horizon(m, planned, 0.5, 0.3, feats, 5.0, zero_hidden(NetSpec{}));
  for (const auto& c : a.covariances) {
    CHECK(c.sxy == 0.0);
    CHECK(c.syx == 0.0);
    CHECK(c.sxx >= 0.0);
    CHECK(c.syy >= 0.0);
    CHECK(std::isfinite(c.sxx));
  }
  // shuffling the raw feature list changes nothing
  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = feats;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto b = predict_horizon(m, planned, 0.5, 0.3, shuffled, 5.0, zero_hidden(NetSpec{}));
    for (std::size_t k = 0; k < a.covariances.size(); ++k) CHECK(a.covariances[k] == b.covariances[k]);
  }
  // the carried state is the state after the first pose
  MatrixXd first(18, 1);
  first.col(0) = make_input({planned[0].x, planned[0].y, 0.5}, 0.3, feats, 5.0);
  const auto step = forward(m.params, first);
  for (std::size_t l = 0; l < step.final_hidden.size(); ++l)
    CHECK((step.final_hidden[l] - a.after_first_step[l]).cwiseAbs().maxCoeff() == 0.0);
  // fewer than five features still yields finite output
  const auto few = predict_horizon(m, planned, 0.5, 0.3, {feats[0], feats[1]}, 5.0, zero_hidden(NetSpec{}));
  for (const auto& c : few.covariances) CHECK(std::isfinite(c.trace()));
}

TEST_CASE("checkpoint round trip is exact") {
  std::mt19937_64 rng(13);
  std::vector<Sequence> data;
  for (int i = 0; i < 3; ++i) data.push_back({random_matrix(rng, 18, 10, 3.0), random_matrix(rng, 4, 10, 0.01)});
  CovarianceModel m{init_params(NetSpec{}, 77), Normalization::fit(data)};
  std::stringstream ss;
  save_checkpoint(ss, m);
  const auto back = load_checkpoint(ss);
  CHECK(back.params.spec == m.params.spec);
  CHECK((back.params.values.array() == m.params.values.array()).all());
  CHECK((back.norm.input_scale.array() == m.norm.input_scale.array()).all());
  CHECK((back.norm.output_mean.array() == m.norm.output_mean.array()).all());

  std::stringstream again;
  save_checkpoint(again, back);
  std::stringstream first;
  save_checkpoint(first, m);
  CHECK(again.str() == first.str());

  std::stringstream bad("riskmpc-checkpoint v0\n{}\n");
  CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);
  std::string text = first.str();
  text.replace(text.find("\"parameters\":["), 14, "\"parameters\":[1,");
  std::stringstream longer(text);
  CHECK_THROWS_AS(load_checkpoint(longer), std::runtime_error);
}
