#ifndef ECNN_TRAINER_HPP
#define ECNN_TRAINER_HPP

#include <cstdint>
#include <vector>

#include "ecnn/elastic.hpp"
#include "ecnn/graph.hpp"

namespace ecnn::trainer {

enum class Optim : std::uint8_t { Adam, Sgd };

struct TrainConfig {
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  int epochs = 30;
  int batch_size = 32;
  Optim optim = Optim::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double momentum = 0.9;
  int patience = 5;
  double val_fraction = 0.2;
  std::uint64_t seed = 42;

  void check() const;
};

template <typename T>
struct Dataset {
  Tensor<T> images;  // [N,C,H,W]
  std::vector<int> labels;
  int num_classes = 0;

  int size() const { return images.shape.empty() ? 0 : images.shape[0]; }
};

/// Class-conditional oriented-stripe patterns (per-class orientation,
/// frequency, and channel mix) with random phase and Gaussian noise on
/// 3x16x16 images. Deterministic under seed; classes balanced +-1.
template <typename T>
Dataset<T> make_synth_dataset(int n, int num_classes, std::uint64_t seed);

/// lr(t) = lr_min + (lr_max - lr_min) * (1 + cos(pi * t / T)) / 2, T = epochs.
double cosine_lr(int t, const TrainConfig& cfg);

/// Mean batch cross-entropy (max-subtracted softmax).
template <typename T>
T cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double val_loss = 0;
  double val_acc = 0;
  double lr = 0;
};
using History = std::vector<EpochStats>;

/// Supervised training with an 80/20 train/val split, cosine annealing, and
/// early stopping on validation loss. A FreezeMask zeroes frozen-coordinate
/// gradients, skips their optimizer moments, and pins frozen batchnorm
/// statistics. Throws DivergenceError when the loss goes non-finite.
template <typename T>
History fit(ModelGraph<T>& model, const Dataset<T>& data, const TrainConfig& cfg,
            const elastic::FreezeMask* mask = nullptr);

/// Fraction of argmax(logits) == label, eval mode.
template <typename T>
double evaluate(ModelGraph<T>& model, const Dataset<T>& data, int batch_size = 64);

/// Labeled batches for gradient-based importance scoring.
template <typename T>
std::vector<importance::LabeledBatch<T>> take_batches(const Dataset<T>& data, int count, int batch_size);

}  // namespace ecnn::trainer

#endif
