#include "doctest.h"

#include <cmath>

#include "ecnn/zoo.hpp"
#include "support/random_models.hpp"

using namespace ecnn;

namespace {

double mib(std::int64_t bytes) { return static_cast<double>(bytes) / (1024.0 * 1024.0); }

bool within(double value, double target, double rel) { return std::abs(value - target) <= rel * target; }

}  // namespace

TEST_SUITE("nn-graph") {
  TEST_CASE("zoo parameter counts match the reference figures") {
    auto params_of = [](const char* name) {
      ModelGraph<float> m = build<float>(arch_spec(name), 1);
      return static_cast<double>(m.count_params());
    };
    CHECK(within(params_of("vgg16_bn_cifar10"), 15.25e6, 0.01));
    CHECK(within(params_of("resnet20_cifar10"), 0.27e6, 0.02));
    CHECK(within(params_of("resnet56_cifar10"), 0.86e6, 0.02));
    CHECK(within(params_of("alexnet_10class"), 57.04e6, 0.01));
  }

  TEST_CASE("model sizes under the 4-byte storage rule") {
    auto size_of = [](const char* name) {
      ModelGraph<float> m = build<float>(arch_spec(name), 1);
      return mib(m.model_size_bytes());
    };
    CHECK(within(size_of("vgg16_bn_cifar10"), 58.244, 0.02));
    CHECK(within(size_of("resnet20_cifar10"), 1.078, 0.05));
    CHECK(within(size_of("resnet56_cifar10"), 3.369, 0.05));
    CHECK(within(size_of("alexnet_10class"), 217.614, 0.05));
  }

  TEST_CASE("tinynet is desk scale") {
    ModelGraph<float> m = build<float>(arch_spec("tinynet"), 1);
    CHECK(m.count_params() > 20000);
    CHECK(m.count_params() < 40000);
    m.validate();
  }

  TEST_CASE("closed-form parameter counts") {
    GraphBuilder<float> b({3, 8, 8}, 10, 1);
    int c = b.conv("conv", -1, 3, 16, 3, 1, 1, true);
    (void)c;
    int f = b.flatten("flatten", b.relu("relu", c));
    int fc = b.linear("fc", f, 16 * 8 * 8, 10, true, 64);
    ModelGraph<float> m = b.finish(fc, "probe");
    std::int64_t conv_params = 3 * 3 * 3 * 16 + 16;
    CHECK(conv_params == 448);
    std::int64_t fc_params = static_cast<std::int64_t>(16 * 8 * 8) * 10 + 10;
    CHECK(m.count_params() == conv_params + fc_params);

    GraphBuilder<float> b2({3, 2, 2}, 10, 1);
    int c2 = b2.conv("conv", -1, 3, 1024, 2, 2, 1, false);
    int fl = b2.flatten("flatten", c2);
    int head = b2.linear("fc", fl, 4096, 10, true, 4);
    ModelGraph<float> m2 = b2.finish(head, "probe2");
    CHECK(m2.param(head, ParamRole::Weight).numel() + m2.param(head, ParamRole::Bias).numel() == 40970);
  }

  TEST_CASE("empty registry reports zero size") {
    ModelGraph<float> g;
    CHECK(g.model_size_bytes() == 0);
  }

  TEST_CASE("forward shape checks for every zoo spec at batch 1 and 4") {
    for (const std::string& name : known_archs()) {
      ModelGraph<float> m = build<float>(arch_spec(name), 2);
      std::vector<Shape> shapes = m.infer_shapes();
      const Shape& out = shapes[static_cast<std::size_t>(m.output())];
      REQUIRE(out.size() == 1);
      CHECK(out[0] == m.num_classes);
      if (name == "alexnet_10class" || name == "vgg16_bn_cifar10") continue;  // covered symbolically
      for (int batch : {1, 4}) {
        Tensor<float> x({batch, m.input_shape[0], m.input_shape[1], m.input_shape[2]});
        Rng rng(3);
        rng.fill_uniform(x, -1, 1);
        Tensor<float> logits = m.forward(x, Mode::Eval);
        CHECK(logits.shape == Shape{batch, m.num_classes});
        CHECK(logits.all_finite());
      }
    }
  }

  TEST_CASE("the big zoo nets execute end to end at batch 1") {
    for (const char* name : {"vgg16_bn_cifar10", "alexnet_10class"}) {
      ModelGraph<float> m = build<float>(arch_spec(name), 4);
      Tensor<float> x({1, m.input_shape[0], m.input_shape[1], m.input_shape[2]});
      Rng rng(4);
      rng.fill_uniform(x, -1, 1);
      Tensor<float> logits = m.forward(x, Mode::Eval);
      CHECK(logits.shape == Shape{1, 10});
      CHECK(logits.all_finite());
    }
  }

  TEST_CASE("resnet20 forward on a random input produces [1,10]") {
    ModelGraph<float> m = build<float>(arch_spec("resnet20_cifar10"), 5);
    Tensor<float> x({1, 3, 32, 32});
    Rng rng(6);
    rng.fill_uniform(x, -1, 1);
    Tensor<float> logits = m.forward(x, Mode::Eval);
    CHECK(logits.shape == Shape{1, 10});
  }

  TEST_CASE("zero input with batchnorm stems yields classifier bias") {
    ModelGraph<float> m = build<float>(arch_spec("tinynet"), 9);
    Tensor<float> x({2, 3, 16, 16});
    Tensor<float> logits = m.forward(x, Mode::Eval);
    const Tensor<float>& bias = m.param(m.output(), ParamRole::Bias);
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < m.num_classes; ++c) CHECK(logits.at2(n, c) == doctest::Approx(bias.data[c]));
  }

  TEST_CASE("eval forward is pure, train forward touches only running stats") {
    ModelGraph<float> m = build<float>(arch_spec("tinynet"), 9);
    Tensor<float> x({2, 3, 16, 16});
    Rng rng(10);
    rng.fill_uniform(x, -1, 1);
    std::uint64_t before = m.registry_checksum();
    Tensor<float> a = m.forward(x, Mode::Eval);
    Tensor<float> c = m.forward(x, Mode::Eval);
    CHECK(bits_equal(a, c));
    CHECK(m.registry_checksum() == before);

    std::int64_t params_before = m.count_params();
    m.forward(x, Mode::Train);
    CHECK(m.registry_checksum() != before);  // running stats moved
    CHECK(m.count_params() == params_before);
    // parameters themselves untouched
    ModelGraph<float> fresh = build<float>(arch_spec("tinynet"), 9);
    for (const auto& [key, t] : m.registry()) {
      if (role_is_buffer(key.role)) continue;
      CHECK(bits_equal(t, fresh.param(key.node, key.role)));
    }
  }

  TEST_CASE("count_params is invariant under forward/backward") {
    ModelGraph<double> m = build<double>(arch_spec("tinynet"), 4);
    std::int64_t before = m.count_params();
    Tensor<double> x({2, 3, 16, 16});
    Rng rng(3);
    rng.fill_uniform(x, -1, 1);
    Tape<double> tape;
    auto tf = m.forward_tape(tape, x, Mode::Train);
    auto loss = tp::cross_entropy(tape, tf.logits, {0, 1});
    m.backward(tape, tf, loss);
    CHECK(m.count_params() == before);
  }

  TEST_CASE("unknown architecture names the known ones") {
    CHECK_THROWS_WITH_AS(arch_spec("resnet18"),
                         "unknown architecture 'resnet18'; known: vgg16_bn_cifar10 resnet20_cifar10 "
                         "resnet56_cifar10 alexnet_10class tinynet",
                         ValueError);
  }

  TEST_CASE("forward errors name the offending node") {
    ModelGraph<float> m = build<float>(arch_spec("tinynet"), 1);
    Tensor<float> bad({1, 4, 16, 16});
    CHECK_THROWS_AS(m.forward(bad, Mode::Eval), ShapeError);
    // sabotage one weight to trip the node check
    m.node(0).in_channels = 5;
    CHECK_THROWS_AS(m.infer_shapes(), ShapeError);
    try {
      m.infer_shapes();
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("stem.conv1") != std::string::npos);
    }
  }

  TEST_CASE("random residual models validate and forward") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
      ModelGraph<float> m = testsup::random_residual_model<float>(seed);
      m.validate();
      Tensor<float> x({2, 3, 16, 16});
      Rng rng(seed);
      rng.fill_uniform(x, -1, 1);
      Tensor<float> logits = m.forward(x, Mode::Eval);
      CHECK(logits.shape == Shape{2, 5});
    }
  }
}
