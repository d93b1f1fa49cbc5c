#include "doctest.h"

#include <cmath>

#include "ecnn/autodiff.hpp"
#include "ecnn/ops.hpp"
#include "support/fd_check.hpp"

using namespace ecnn;
using testsup::FdProblem;

namespace {

template <typename T>
Tensor<T> rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(s));
  rng.fill_uniform(t, lo, hi);
  return t;
}

/// Values with pairwise gaps safely above the finite-difference step, so relu
/// and maxpool stay away from their kinks.
Tensor<double> kink_safe_tensor(Shape s, Rng& rng) {
  Tensor<double> t(std::move(s));
  std::vector<int> order(t.data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::shuffle(order.begin(), order.end(), rng.engine());
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    double base = 0.01 * (order[i] - static_cast<int>(t.data.size()) / 2);
    t.data[i] = base + (base >= 0 ? 0.005 : -0.005);
  }
  return t;
}

Tensor<double> fixed_projection(const Shape& s, Rng& rng) { return rand_tensor<double>(s, rng); }

}  // namespace

TEST_SUITE("tensor-autodiff") {
  TEST_CASE("tensor shape bookkeeping and invariants") {
    Tensor<float> t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.all_finite());
    CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
    CHECK_THROWS_AS(shape_numel({3, 0}), ShapeError);
    t.data[1] = std::numeric_limits<float>::infinity();
    CHECK_FALSE(t.all_finite());
  }

  TEST_CASE("conv2d scalar scaling") {
    Tensor<float> x = Tensor<float>::full({1, 1, 3, 3}, 1.f);
    Tensor<float> w = Tensor<float>::full({1, 1, 1, 1}, 2.f);
    Tensor<float> y = ops::conv2d_forward(x, w, nullptr, 1, 0);
    CHECK(y.shape == Shape{1, 1, 3, 3});
    for (float v : y.data) CHECK(v == doctest::Approx(2.f));
  }

  TEST_CASE("conv2d direct correlation matches a hand loop") {
    Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor<double> w({1, 1, 2, 2}, {1, 0, 0, 1});
    Tensor<double> y = ops::conv2d_forward(x, w, nullptr, 1, 0);
    CHECK(y.shape == Shape{1, 1, 1, 1});
    CHECK(y.data[0] == doctest::Approx(5.0));

    // oracle: direct correlation loop on random shapes
    Rng rng(11);
    Tensor<double> xr = rand_tensor<double>({2, 3, 6, 5}, rng);
    Tensor<double> wr = rand_tensor<double>({4, 3, 3, 3}, rng);
    Tensor<double> br = rand_tensor<double>({4}, rng);
    int stride = 2, pad = 1;
    Tensor<double> got = ops::conv2d_forward(xr, wr, &br, stride, pad);
    int Hout = (6 + 2 * pad - 3) / stride + 1, Wout = (5 + 2 * pad - 3) / stride + 1;
    REQUIRE(got.shape == Shape{2, 4, Hout, Wout});
    for (int n = 0; n < 2; ++n)
      for (int m = 0; m < 4; ++m)
        for (int oh = 0; oh < Hout; ++oh)
          for (int ow = 0; ow < Wout; ++ow) {
            double acc = br.data[m];
            for (int c = 0; c < 3; ++c)
              for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj) {
                  int ih = oh * stride - pad + ki, iw = ow * stride - pad + kj;
                  if (ih < 0 || ih >= 6 || iw < 0 || iw >= 5) continue;
                  acc += xr.at4(n, c, ih, iw) * wr.at4(m, c, ki, kj);
                }
            CHECK(got.at4(n, m, oh, ow) == doctest::Approx(acc).epsilon(1e-12));
          }
  }

  TEST_CASE("conv2d zero weight yields bias broadcast") {
    Rng rng(3);
    Tensor<float> x = rand_tensor<float>({2, 2, 4, 4}, rng);
    Tensor<float> w = Tensor<float>::zeros({3, 2, 3, 3});
    Tensor<float> b({3}, {0.5f, -1.f, 2.f});
    Tensor<float> y = ops::conv2d_forward(x, w, &b, 1, 1);
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 3; ++c)
        for (int h = 0; h < 4; ++h)
          for (int wv = 0; wv < 4; ++wv) CHECK(y.at4(n, c, h, wv) == b.data[c]);
  }

  TEST_CASE("conv2d shape errors name the conflicting extents") {
    Tensor<float> x({1, 4, 5, 5});
    Tensor<float> w({2, 3, 3, 3});
    CHECK_THROWS_WITH_AS(ops::conv2d_forward(x, w, nullptr, 1, 1),
                         "conv2d: input channels 4 != weight in-channels 3", ShapeError);
    CHECK_THROWS_AS(ops::conv2d_forward(x, Tensor<float>({2, 4, 9, 9}), nullptr, 1, 0), ShapeError);
    CHECK_THROWS_AS(ops::conv2d_forward(x, Tensor<float>({2, 4, 3, 3}), nullptr, 0, 0), ValueError);
  }

  TEST_CASE("elementwise and pooling basics") {
    Tensor<float> x({1, 1, 1, 2}, {-1.f, 2.f});
    Tensor<float> r = ops::relu_forward(x);
    CHECK(r.data[0] == 0.f);
    CHECK(r.data[1] == 2.f);

    Tensor<float> p({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor<float> mp = ops::maxpool2d_forward(p, 2, 2, nullptr);
    CHECK(mp.shape == Shape{1, 1, 1, 1});
    CHECK(mp.data[0] == 4.f);

    Tensor<float> ap = ops::avgpool2d_forward(p, 2, 2);
    CHECK(ap.data[0] == doctest::Approx(2.5f));
  }

  TEST_CASE("batchnorm eval with unit stats is the identity") {
    Rng rng(5);
    Tensor<double> x = rand_tensor<double>({2, 3, 4, 4}, rng);
    Tensor<double> gamma = Tensor<double>::full({3}, 1.0);
    Tensor<double> beta = Tensor<double>::zeros({3});
    Tensor<double> mean = Tensor<double>::zeros({3});
    Tensor<double> var = Tensor<double>::full({3}, 1.0);
    Tensor<double> y = ops::batchnorm2d_forward(x, gamma, beta, mean, var, 1e-5);
    CHECK(max_abs_diff(x, y) < 1e-5);
    CHECK_THROWS_AS(ops::batchnorm2d_forward(x, Tensor<double>::zeros({4}), beta, mean, var, 1e-5), ShapeError);
  }

  TEST_CASE("backward of a linear map returns the fixed input") {
    Tape<double> tape;
    Rng rng(7);
    Tensor<double> x = rand_tensor<double>({1, 6}, rng);
    Tensor<double> w = rand_tensor<double>({1, 6}, rng);
    auto xid = tape.leaf(x, false);
    auto wid = tape.leaf(w, true);
    // loss = sum(w * x), via a linear layer with the weights under test
    auto y = tp::linear(tape, xid, wid, -1);
    auto loss = tp::inner(tape, y, Tensor<double>::full({1, 1}, 1.0));
    tape.backward(loss);
    const auto& g = tape.grad(wid);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
  }

  TEST_CASE("backward error paths") {
    Tape<double> tape;
    CHECK_THROWS_AS(tape.backward(0), ValueError);  // nothing recorded
    auto v = tape.leaf(Tensor<double>({2}, {1, 2}), true);
    CHECK_THROWS_AS(tape.backward(v), ShapeError);  // non-scalar root
  }

  TEST_CASE("disconnected parameter receives zero gradient") {
    Tape<double> tape;
    auto used = tape.leaf(Tensor<double>::scalar(3.0), true);
    auto unused = tape.leaf(Tensor<double>::scalar(5.0), true);
    auto loss = tp::inner(tape, used, Tensor<double>::scalar(2.0));
    tape.backward(loss);
    CHECK(tape.grad(used)[0] == doctest::Approx(2.0));
    CHECK(tape.grad(unused)[0] == 0.0);
  }

  TEST_CASE("gradient check: conv2d against central finite differences") {
    Rng rng(21);
    FdProblem p;
    p.inputs = {rand_tensor<double>({2, 3, 5, 5}, rng), rand_tensor<double>({4, 3, 3, 3}, rng),
                rand_tensor<double>({4}, rng)};
    Tensor<double> proj = fixed_projection({2, 4, 3, 3}, rng);
    p.forward = [proj](Tape<double>& t, const std::vector<tp::Id<double>>& in) {
      auto y = tp::conv2d(t, in[0], in[1], in[2], 2, 1);
      return tp::inner(t, y, proj);
    };
    auto rep = testsup::fd_check(p);
    CHECK(rep.max_rel_err <= 1e-5);
  }

  TEST_CASE("gradient check: linear") {
    Rng rng(22);
    FdProblem p;
    p.inputs = {rand_tensor<double>({3, 7}, rng), rand_tensor<double>({4, 7}, rng), rand_tensor<double>({4}, rng)};
    Tensor<double> proj = fixed_projection({3, 4}, rng);
    p.forward = [proj](Tape<double>& t, const std::vector<tp::Id<double>>& in) {
      return tp::inner(t, tp::linear(t, in[0], in[1], in[2]), proj);
    };
    CHECK(testsup::fd_check(p).max_rel_err <= 1e-5);
  }

  TEST_CASE("gradient check: relu, maxpool, avgpool, add, flatten") {
    Rng rng(23);
    FdProblem p;
    // the second input is a scaled copy so the SUM keeps its distance from
    // relu kinks and maxpool ties
    Tensor<double> a = kink_safe_tensor({2, 2, 4, 4}, rng);
    Tensor<double> b = a;
    for (auto& v : b.data) v *= 0.5;
    p.inputs = {a, b};
    Tensor<double> proj = fixed_projection({2, 8}, rng);
    p.forward = [proj](Tape<double>& t, const std::vector<tp::Id<double>>& in) {
      auto s = tp::add(t, in[0], in[1]);
      auto r = tp::relu(t, s);
      auto m = tp::maxpool2d(t, r, 2, 2);
      auto a = tp::avgpool2d(t, m, 1, 1);
      auto f = tp::flatten(t, a);
      return tp::inner(t, f, proj);
    };
    CHECK(testsup::fd_check(p).max_rel_err <= 1e-5);
  }

  TEST_CASE("gradient check: batchnorm in training and eval modes") {
    Rng rng(24);
    for (bool training : {true, false}) {
      FdProblem p;
      p.inputs = {rand_tensor<double>({3, 2, 3, 3}, rng), rand_tensor<double>({2}, rng, 0.5, 1.5),
                  rand_tensor<double>({2}, rng)};
      Tensor<double> proj = fixed_projection({3, 2, 3, 3}, rng);
      p.forward = [proj, training](Tape<double>& t, const std::vector<tp::Id<double>>& in) {
        Tensor<double> mean, var;
        if (training) {
          ops::batch_moments(t.value(in[0]), mean, var);
        } else {
          mean = Tensor<double>({2}, {0.1, -0.2});
          var = Tensor<double>({2}, {1.3, 0.7});
        }
        auto y = tp::batchnorm2d(t, in[0], in[1], in[2], std::move(mean), std::move(var), 1e-5, training);
        return tp::inner(t, y, proj);
      };
      CHECK(testsup::fd_check(p).max_rel_err <= 1e-5);
    }
  }

  TEST_CASE("gradient check: softmax cross-entropy") {
    Rng rng(25);
    FdProblem p;
    p.inputs = {rand_tensor<double>({4, 5}, rng, -2, 2)};
    std::vector<int> labels{0, 3, 2, 4};
    p.forward = [labels](Tape<double>& t, const std::vector<tp::Id<double>>& in) {
      return tp::cross_entropy(t, in[0], labels);
    };
    CHECK(testsup::fd_check(p).max_rel_err <= 1e-5);
  }

  TEST_CASE("conv linearity in 32-bit") {
    Rng rng(31);
    Tensor<float> x = rand_tensor<float>({1, 2, 6, 6}, rng, -0.5, 0.5);
    Tensor<float> y = rand_tensor<float>({1, 2, 6, 6}, rng, -0.5, 0.5);
    Tensor<float> w = rand_tensor<float>({3, 2, 3, 3}, rng, -0.5, 0.5);
    float a = 0.7f, b = -1.3f;
    Tensor<float> mix({1, 2, 6, 6});
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
    Tensor<float> lhs = ops::conv2d_forward(mix, w, nullptr, 1, 1);
    Tensor<float> cx = ops::conv2d_forward(x, w, nullptr, 1, 1);
    Tensor<float> cy = ops::conv2d_forward(y, w, nullptr, 1, 1);
    double worst = 0;
    for (std::size_t i = 0; i < lhs.data.size(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(lhs.data[i]) - (a * cx.data[i] + b * cy.data[i])));
    CHECK(worst <= 1e-6);
  }

  TEST_CASE("determinism: identical seeds give bit-identical op outputs") {
    auto run = [] {
      Rng rng(99);
      Tensor<float> x = rand_tensor<float>({2, 3, 8, 8}, rng);
      Tensor<float> w = rand_tensor<float>({4, 3, 3, 3}, rng);
      Tensor<float> y = ops::conv2d_forward(x, w, nullptr, 1, 1);
      return checksum(y);
    };
    CHECK(run() == run());
  }

  TEST_CASE("forward ops stay finite on finite inputs") {
    Rng rng(41);
    Tensor<double> x = rand_tensor<double>({2, 3, 6, 6}, rng, -100, 100);
    Tensor<double> w = rand_tensor<double>({4, 3, 3, 3}, rng, -50, 50);
    CHECK(ops::conv2d_forward(x, w, nullptr, 1, 1).all_finite());
    Tensor<double> logits = rand_tensor<double>({3, 8}, rng, -1e4, 1e4);
    CHECK(std::isfinite(ops::softmax_cross_entropy(logits, {0, 5, 7}, static_cast<Tensor<double>*>(nullptr))));
  }

  TEST_CASE("cross-entropy label out of range") {
    Tensor<double> logits({1, 3}, {0.0, 1.0, 2.0});
    CHECK_THROWS_AS(ops::softmax_cross_entropy(logits, {3}, static_cast<Tensor<double>*>(nullptr)), ValueError);
  }
}
