#ifndef ECNN_ZOO_HPP
#define ECNN_ZOO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ecnn/graph.hpp"

namespace ecnn {

/// Realizable architecture description. `family` selects the builder; the
/// remaining fields parameterize it.
struct ArchSpec {
  std::string name;
  std::string family;  // vgg | resnet | alexnet | tiny
  Shape input{3, 32, 32};
  int num_classes = 10;
  std::vector<int> conv_plan;  // vgg: widths, -1 = maxpool
  std::vector<int> stage_widths;
  std::vector<int> stage_blocks;
  std::vector<int> head_widths;  // hidden classifier widths
};

std::vector<std::string> known_archs();
ArchSpec arch_spec(const std::string& name);

/// Builds the graph with Kaiming-uniform conv/linear weights, unit batchnorm,
/// and identity origin maps.
template <typename T>
ModelGraph<T> build(const ArchSpec& spec, std::uint64_t seed);

/// Incremental graph assembly with standard initialization. `from = -1` wires
/// a node to the graph input.
template <typename T>
class GraphBuilder {
 public:
  GraphBuilder(Shape input, int num_classes, std::uint64_t seed);

  int conv(const std::string& name, int from, int in_ch, int out_ch, int k, int stride, int pad, bool bias);
  int bn(const std::string& name, int from, int channels);
  int relu(const std::string& name, int from);
  int maxpool(const std::string& name, int from, int k, int stride);
  int avgpool(const std::string& name, int from, int k, int stride);
  int add(const std::string& name, int a, int b);
  int flatten(const std::string& name, int from);
  int linear(const std::string& name, int from, int in_features, int out_features, bool bias, int in_factor = 1);

  ModelGraph<T> finish(int output, const std::string& arch_name);

 private:
  ModelGraph<T> g_;
  Rng rng_;
  std::vector<int> preds_of(int from) const { return from < 0 ? std::vector<int>{} : std::vector<int>{from}; }
};

}  // namespace ecnn

#endif
