#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "afftrack/checkpoint.hpp"
#include "afftrack/nn.hpp"

using namespace afftrack;
using nn::Matrix;

namespace {

Matrix random_matrix(int r, int c, nn::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST_CASE("Linear-BN-ReLU special cases") {
  nn::Rng rng(1);
  nn::LinearBnRelu layer("l", 3, 3, rng);
  layer.linear.weight.value = Matrix::Identity(3, 3);
  layer.linear.bias.value.setZero();
  const Matrix x = random_matrix(5, 3, rng, 0.1, 2.0);
  const Matrix y = layer.forward(x, nn::Mode::eval);
  CHECK((y - x).cwiseAbs().maxCoeff() < 1e-4);

  const Matrix neg = -x;
  CHECK(layer.forward(neg, nn::Mode::eval).isZero(0.0));
}

TEST_CASE("Linear-BN-ReLU matches a straight-line recomputation") {
  nn::Rng rng(2);
  nn::LinearBnRelu layer("l", 4, 3, rng);
  layer.bn.gamma.value = random_matrix(1, 3, rng, 0.5, 1.5);
  layer.bn.beta.value = random_matrix(1, 3, rng);
  const Matrix x = random_matrix(6, 4, rng);
  const Matrix y = layer.forward(x, nn::Mode::train);

  const Matrix& W = layer.linear.weight.value;
  for (int j = 0; j < 3; ++j) {
    double pre[6], mean = 0.0, var = 0.0;
    for (int i = 0; i < 6; ++i) {
      pre[i] = layer.linear.bias.value(0, j);
      for (int k = 0; k < 4; ++k) pre[i] += x(i, k) * W(j, k);
      mean += pre[i] / 6.0;
    }
    for (double p : pre) var += (p - mean) * (p - mean) / 6.0;
    for (int i = 0; i < 6; ++i) {
      const double bn = layer.bn.gamma.value(0, j) * (pre[i] - mean) / std::sqrt(var + 1e-5) +
                        layer.bn.beta.value(0, j);
      CHECK(std::abs(y(i, j) - std::max(bn, 0.0)) < 1e-12);
    }
  }
}

TEST_CASE("Linear gradient closed form and zero upstream") {
  nn::Rng rng(3);
  nn::Linear lin("lin", 4, 2, rng);
  const Matrix x = random_matrix(5, 4, rng), dy = random_matrix(5, 2, rng);
  nn::Linear::Cache c;
  lin.forward(x, &c);
  lin.weight.zero_grad();
  lin.bias.zero_grad();
  const Matrix dx = lin.backward(c, dy);
  CHECK((lin.weight.grad - dy.transpose() * x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((lin.bias.grad - dy.colwise().sum()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((dx - dy * lin.weight.value).cwiseAbs().maxCoeff() < 1e-12);

  lin.weight.zero_grad();
  lin.backward(c, Matrix::Zero(5, 2));
  CHECK(lin.weight.grad.isZero(0.0));
}

TEST_CASE("FFN block gradients match central differences") {
  nn::Rng rng(4);
  nn::FFNBlock ffn("ffn", 3, 5, 4, rng);
  const Matrix x = random_matrix(6, 3, rng), w = random_matrix(6, 4, rng);
  nn::ParamList params;
  ffn.collect(params);
  nn::zero_grads(params);
  nn::FFNBlock::Cache c;
  ffn.forward(x, nn::Mode::train, &c);
  ffn.backward(c, w);
  const double h = 1e-5;
  for (nn::Param* p : params)
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data()[i];
      p->value.data()[i] = orig + h;
      const double up = (ffn.forward(x, nn::Mode::train).array() * w.array()).sum();
      p->value.data()[i] = orig - h;
      const double dn = (ffn.forward(x, nn::Mode::train).array() * w.array()).sum();
      p->value.data()[i] = orig;
      const double num = (up - dn) / (2 * h);
      INFO(p->name << "[" << i << "]");
      CHECK(std::abs(p->grad.data()[i] - num) / (std::abs(num) + 1e-8) < 1e-4 + 1e-6 / (std::abs(num) + 1e-8));
    }
}

TEST_CASE("softmax rows") {
  Matrix x(3, 3);
  x << 2, 2, 2, 0, 1000, 0, 0, std::log(2.0), -1e300;
  const Matrix p = nn::softmax_rows(x);
  CHECK(p(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(p(1, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p(2, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(p(2, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  nn::Rng rng(5);
  const Matrix r = nn::softmax_rows(random_matrix(7, 5, rng, -20, 20));
  for (int i = 0; i < 7; ++i) {
    CHECK(std::abs(r.row(i).sum() - 1.0) < 1e-12);
    CHECK(r.row(i).minCoeff() >= 0.0);
  }
}

TEST_CASE("one-cycle schedule shape") {
  nn::OneCycleSchedule s;
  s.peak_lr = 0.03;
  s.total_steps = 101;
  CHECK(s.lr(0) < s.peak_lr);
  CHECK(s.lr(100) < s.peak_lr);
  CHECK(s.lr(s.peak_step()) == doctest::Approx(0.03).epsilon(1e-15));
  CHECK(s.lr(0) == doctest::Approx(0.03 / 25).epsilon(1e-12));
  for (long t = 1; t <= s.peak_step(); ++t) CHECK(s.lr(t) > s.lr(t - 1));
  for (long t = s.peak_step() + 1; t < 101; ++t) CHECK(s.lr(t) < s.lr(t - 1));
}

TEST_CASE("Adam") {
  nn::Param p("p", Matrix::Constant(2, 2, 5.0));
  const nn::ParamList params{&p};
  nn::Adam opt(params);
  SUBCASE("zero gradients leave parameters unchanged") {
    opt.step(params, 0.1);
    CHECK(p.value == Matrix::Constant(2, 2, 5.0));
  }
  SUBCASE("quadratic loss decreases monotonically after warmup") {
    nn::OneCycleSchedule s;
    s.total_steps = 100;
    double prev = 1e300;
    for (long t = 0; t < 100; ++t) {
      const double loss = p.value.squaredNorm();
      if (t > s.peak_step()) CHECK(loss < prev);
      prev = loss;
      p.grad = 2.0 * p.value;
      opt.step(params, s.lr(t));
    }
    CHECK(p.value.squaredNorm() < 100.0);
  }
  SUBCASE("non-finite gradients are rejected") {
    p.grad(0, 0) = std::nan("");
    CHECK_THROWS_AS(opt.step(params, 0.1), NumericError);
  }
}

TEST_CASE("checkpoint text round-trips byte for byte") {
  nn::Rng rng(6);
  nn::Checkpoint ck;
  ck.meta["model.channels"] = "16";
  ck.meta["note"] = "two words";
  ck.tensors.push_back({"a.weight", random_matrix(3, 4, rng)});
  ck.tensors.push_back({"a.bias", random_matrix(1, 4, rng) * 1e-300});
  std::stringstream first;
  nn::write_checkpoint(first, ck);
  const std::string text = first.str();
  std::stringstream in(text);
  const auto back = nn::read_checkpoint(in);
  std::stringstream second;
  nn::write_checkpoint(second, back);
  CHECK(second.str() == text);
  CHECK(back.meta.at("note") == "two words");
  CHECK(back.find("a.weight")->value == ck.tensors[0].value);

  nn::Param wrong("a.weight", Matrix::Zero(2, 2));
  CHECK_THROWS_AS(nn::restore_params(back, {&wrong}), ConfigError);
}
