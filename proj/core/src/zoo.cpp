#include "ecnn/zoo.hpp"

#include <cmath>
#include <sstream>

namespace ecnn {

std::vector<std::string> known_archs() {
  return {"vgg16_bn_cifar10", "resnet20_cifar10", "resnet56_cifar10", "alexnet_10class", "tinynet"};
}

ArchSpec arch_spec(const std::string& name) {
  ArchSpec s;
  s.name = name;
  if (name == "vgg16_bn_cifar10") {
    s.family = "vgg";
    s.input = {3, 32, 32};
    s.num_classes = 10;
    s.conv_plan = {64, 64, -1, 128, 128, -1, 256, 256, 256, -1, 512, 512, 512, -1, 512, 512, 512, -1};
    s.head_widths = {512, 512};
  } else if (name == "resnet20_cifar10" || name == "resnet56_cifar10") {
    s.family = "resnet";
    s.input = {3, 32, 32};
    s.num_classes = 10;
    s.stage_widths = {16, 32, 64};
    int per_stage = name == "resnet20_cifar10" ? 3 : 9;
    s.stage_blocks = {per_stage, per_stage, per_stage};
  } else if (name == "alexnet_10class") {
    s.family = "alexnet";
    s.input = {3, 224, 224};
    s.num_classes = 10;
    s.head_widths = {4096, 4096};
  } else if (name == "tinynet") {
    s.family = "tiny";
    s.input = {3, 16, 16};
    s.num_classes = 4;
    s.stage_widths = {8, 16, 26};
    s.stage_blocks = {2};
  } else {
    std::ostringstream os;
    os << "unknown architecture '" << name << "'; known:";
    for (const auto& k : known_archs()) os << " " << k;
    throw ValueError(os.str());
  }
  return s;
}

template <typename T>
GraphBuilder<T>::GraphBuilder(Shape input, int num_classes, std::uint64_t seed) : rng_(seed) {
  g_.input_shape = std::move(input);
  g_.num_classes = num_classes;
}

template <typename T>
int GraphBuilder<T>::conv(const std::string& name, int from, int in_ch, int out_ch, int k, int stride, int pad,
                          bool bias) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::Conv2d;
  n.preds = preds_of(from);
  n.in_channels = in_ch;
  n.out_channels = out_ch;
  n.kernel = k;
  n.stride = stride;
  n.pad = pad;
  n.has_bias = bias;
  int id = g_.add_node(n);
  Tensor<T> w({out_ch, in_ch, k, k});
  double fan_in = static_cast<double>(in_ch) * k * k;
  double bound = std::sqrt(6.0 / fan_in);
  rng_.fill_uniform(w, -bound, bound);
  g_.set_param(id, ParamRole::Weight, std::move(w));
  if (bias) {
    Tensor<T> b({out_ch});
    double bb = 1.0 / std::sqrt(fan_in);
    rng_.fill_uniform(b, -bb, bb);
    g_.set_param(id, ParamRole::Bias, std::move(b));
  }
  g_.origin_maps()[Slot{id, Dim::Out}] = identity_map(out_ch);
  g_.origin_maps()[Slot{id, Dim::In}] = identity_map(in_ch);
  return id;
}

template <typename T>
int GraphBuilder<T>::bn(const std::string& name, int from, int channels) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::BatchNorm2d;
  n.preds = preds_of(from);
  n.in_channels = channels;
  n.out_channels = channels;
  int id = g_.add_node(n);
  g_.set_param(id, ParamRole::Gamma, Tensor<T>::full({channels}, T(1)));
  g_.set_param(id, ParamRole::Beta, Tensor<T>::zeros({channels}));
  g_.set_param(id, ParamRole::RunningMean, Tensor<T>::zeros({channels}));
  g_.set_param(id, ParamRole::RunningVar, Tensor<T>::full({channels}, T(1)));
  g_.origin_maps()[Slot{id, Dim::Out}] = identity_map(channels);
  return id;
}

template <typename T>
int GraphBuilder<T>::relu(const std::string& name, int from) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::Relu;
  n.preds = preds_of(from);
  return g_.add_node(n);
}

template <typename T>
int GraphBuilder<T>::maxpool(const std::string& name, int from, int k, int stride) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::MaxPool2d;
  n.preds = preds_of(from);
  n.kernel = k;
  n.stride = stride;
  return g_.add_node(n);
}

template <typename T>
int GraphBuilder<T>::avgpool(const std::string& name, int from, int k, int stride) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::AvgPool2d;
  n.preds = preds_of(from);
  n.kernel = k;
  n.stride = stride;
  return g_.add_node(n);
}

template <typename T>
int GraphBuilder<T>::add(const std::string& name, int a, int b) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::Add;
  n.preds = {a, b};
  return g_.add_node(n);
}

template <typename T>
int GraphBuilder<T>::flatten(const std::string& name, int from) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::Flatten;
  n.preds = preds_of(from);
  return g_.add_node(n);
}

template <typename T>
int GraphBuilder<T>::linear(const std::string& name, int from, int in_features, int out_features, bool bias,
                            int in_factor) {
  LayerNode n;
  n.name = name;
  n.kind = LayerKind::Linear;
  n.preds = preds_of(from);
  n.in_channels = in_features;
  n.out_channels = out_features;
  n.has_bias = bias;
  n.in_factor = in_factor;
  int id = g_.add_node(n);
  Tensor<T> w({out_features, in_features});
  double bound = std::sqrt(6.0 / in_features);
  rng_.fill_uniform(w, -bound, bound);
  g_.set_param(id, ParamRole::Weight, std::move(w));
  if (bias) {
    Tensor<T> b({out_features});
    double bb = 1.0 / std::sqrt(static_cast<double>(in_features));
    rng_.fill_uniform(b, -bb, bb);
    g_.set_param(id, ParamRole::Bias, std::move(b));
  }
  g_.origin_maps()[Slot{id, Dim::Out}] = identity_map(out_features);
  g_.origin_maps()[Slot{id, Dim::In}] = identity_map(in_features / in_factor);
  return id;
}

template <typename T>
ModelGraph<T> GraphBuilder<T>::finish(int output, const std::string& arch_name) {
  g_.set_output(output);
  g_.arch_name = arch_name;
  g_.validate();
  return std::move(g_);
}

namespace {

template <typename T>
ModelGraph<T> build_vgg(const ArchSpec& spec, std::uint64_t seed) {
  GraphBuilder<T> b(spec.input, spec.num_classes, seed);
  int cur = -1;
  int in_ch = spec.input[0];
  int hw = spec.input[1];
  int ci = 0, pi = 0;
  for (int width : spec.conv_plan) {
    if (width < 0) {
      cur = b.maxpool("features.pool" + std::to_string(pi++), cur, 2, 2);
      hw /= 2;
      continue;
    }
    std::string tag = std::to_string(ci++);
    cur = b.conv("features.conv" + tag, cur, in_ch, width, 3, 1, 1, /*bias=*/false);
    cur = b.bn("features.bn" + tag, cur, width);
    cur = b.relu("features.relu" + tag, cur);
    in_ch = width;
  }
  cur = b.flatten("flatten", cur);
  int feat = in_ch * hw * hw;
  int factor = hw * hw;
  int li = 0;
  for (int width : spec.head_widths) {
    cur = b.linear("classifier.fc" + std::to_string(li), cur, feat, width, /*bias=*/true, factor);
    cur = b.relu("classifier.relu" + std::to_string(li), cur);
    feat = width;
    factor = 1;
    ++li;
  }
  cur = b.linear("classifier.fc" + std::to_string(li), cur, feat, spec.num_classes, /*bias=*/true, factor);
  return b.finish(cur, spec.name);
}

template <typename T>
ModelGraph<T> build_resnet(const ArchSpec& spec, std::uint64_t seed) {
  GraphBuilder<T> b(spec.input, spec.num_classes, seed);
  int cur = b.conv("stem.conv", -1, spec.input[0], spec.stage_widths[0], 3, 1, 1, false);
  cur = b.bn("stem.bn", cur, spec.stage_widths[0]);
  cur = b.relu("stem.relu", cur);
  int in_ch = spec.stage_widths[0];
  int hw = spec.input[1];
  for (std::size_t s = 0; s < spec.stage_widths.size(); ++s) {
    int width = spec.stage_widths[s];
    for (int blk = 0; blk < spec.stage_blocks[s]; ++blk) {
      std::string base = "stage" + std::to_string(s + 1) + ".block" + std::to_string(blk) + ".";
      int stride = (s > 0 && blk == 0) ? 2 : 1;
      int skip = cur;
      int main = b.conv(base + "conv1", cur, in_ch, width, 3, stride, 1, false);
      main = b.bn(base + "bn1", main, width);
      main = b.relu(base + "relu1", main);
      main = b.conv(base + "conv2", main, width, width, 3, 1, 1, false);
      main = b.bn(base + "bn2", main, width);
      if (stride != 1 || in_ch != width) {
        skip = b.conv(base + "downsample.conv", skip, in_ch, width, 1, stride, 0, false);
        skip = b.bn(base + "downsample.bn", skip, width);
      }
      cur = b.add(base + "add", main, skip);
      cur = b.relu(base + "relu2", cur);
      if (stride == 2) hw /= 2;
      in_ch = width;
    }
  }
  cur = b.avgpool("avgpool", cur, hw, hw);
  cur = b.flatten("flatten", cur);
  cur = b.linear("fc", cur, in_ch, spec.num_classes, true, 1);
  return b.finish(cur, spec.name);
}

template <typename T>
ModelGraph<T> build_alexnet(const ArchSpec& spec, std::uint64_t seed) {
  GraphBuilder<T> b(spec.input, spec.num_classes, seed);
  int cur = b.conv("features.conv0", -1, 3, 64, 11, 4, 2, true);
  cur = b.relu("features.relu0", cur);
  cur = b.maxpool("features.pool0", cur, 3, 2);
  cur = b.conv("features.conv1", cur, 64, 192, 5, 1, 2, true);
  cur = b.relu("features.relu1", cur);
  cur = b.maxpool("features.pool1", cur, 3, 2);
  cur = b.conv("features.conv2", cur, 192, 384, 3, 1, 1, true);
  cur = b.relu("features.relu2", cur);
  cur = b.conv("features.conv3", cur, 384, 256, 3, 1, 1, true);
  cur = b.relu("features.relu3", cur);
  cur = b.conv("features.conv4", cur, 256, 256, 3, 1, 1, true);
  cur = b.relu("features.relu4", cur);
  cur = b.maxpool("features.pool2", cur, 3, 2);
  cur = b.flatten("flatten", cur);
  cur = b.linear("classifier.fc0", cur, 256 * 6 * 6, spec.head_widths[0], true, 36);
  cur = b.relu("classifier.relu0", cur);
  cur = b.linear("classifier.fc1", cur, spec.head_widths[0], spec.head_widths[1], true, 1);
  cur = b.relu("classifier.relu1", cur);
  cur = b.linear("classifier.fc2", cur, spec.head_widths[1], spec.num_classes, true, 1);
  return b.finish(cur, spec.name);
}

template <typename T>
ModelGraph<T> build_tiny(const ArchSpec& spec, std::uint64_t seed) {
  GraphBuilder<T> b(spec.input, spec.num_classes, seed);
  const int w1 = spec.stage_widths[0], w2 = spec.stage_widths[1], w3 = spec.stage_widths[2];
  int cur = b.conv("stem.conv1", -1, spec.input[0], w1, 3, 1, 1, false);
  cur = b.bn("stem.bn1", cur, w1);
  cur = b.relu("stem.relu1", cur);
  cur = b.maxpool("stem.pool1", cur, 2, 2);
  cur = b.conv("stem.conv2", cur, w1, w2, 3, 1, 1, false);
  cur = b.bn("stem.bn2", cur, w2);
  cur = b.relu("stem.relu2", cur);
  cur = b.maxpool("stem.pool2", cur, 2, 2);
  cur = b.conv("stem.conv3", cur, w2, w3, 3, 1, 1, false);
  cur = b.bn("stem.bn3", cur, w3);
  cur = b.relu("stem.relu3", cur);
  for (int blk = 0; blk < spec.stage_blocks[0]; ++blk) {
    std::string base = "block" + std::to_string(blk) + ".";
    int skip = cur;
    int main = b.conv(base + "conv1", cur, w3, w3, 3, 1, 1, false);
    main = b.bn(base + "bn1", main, w3);
    main = b.relu(base + "relu1", main);
    main = b.conv(base + "conv2", main, w3, w3, 3, 1, 1, false);
    main = b.bn(base + "bn2", main, w3);
    cur = b.add(base + "add", main, skip);
    cur = b.relu(base + "relu2", cur);
  }
  int hw = spec.input[1] / 4;  // two maxpools
  cur = b.avgpool("avgpool", cur, 2, 2);
  hw /= 2;
  cur = b.flatten("flatten", cur);
  cur = b.linear("fc", cur, w3 * hw * hw, spec.num_classes, true, hw * hw);
  return b.finish(cur, spec.name);
}

}  // namespace

template <typename T>
ModelGraph<T> build(const ArchSpec& spec, std::uint64_t seed) {
  if (spec.family == "vgg") return build_vgg<T>(spec, seed);
  if (spec.family == "resnet") return build_resnet<T>(spec, seed);
  if (spec.family == "alexnet") return build_alexnet<T>(spec, seed);
  if (spec.family == "tiny") return build_tiny<T>(spec, seed);
  throw ValueError("unknown architecture family '" + spec.family + "'");
}

template class GraphBuilder<float>;
template class GraphBuilder<double>;
template ModelGraph<float> build<float>(const ArchSpec&, std::uint64_t);
template ModelGraph<double> build<double>(const ArchSpec&, std::uint64_t);

}  // namespace ecnn
