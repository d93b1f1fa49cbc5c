#ifndef ECNN_TENSOR_HPP
#define ECNN_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ecnn/error.hpp"

namespace ecnn {

/// Tensor extents, outermost first. All extents are positive.
using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shape_eq(const Shape& a, const Shape& b);

/// Dense row-major n-d array. `grad`, when present, parallels `data`.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::optional<std::vector<T>> grad;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), T(0)) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int extent(int dim) const { return shape[static_cast<std::size_t>(dim)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  /// 4-d accessor for NCHW tensors.
  T& at4(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T at4(int n, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  T at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  void ensure_grad() {
    if (!grad) grad.emplace(data.size(), T(0));
  }
  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }

  bool all_finite() const;
};

/// Seeded random source; every stochastic choice in the engine draws from one of these.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }
  double normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen_);
  }
  /// Uniform integer in [lo, hi] inclusive.
  int randint(int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return d(gen_);
  }
  std::uint64_t raw() { return gen_(); }
  std::mt19937_64& engine() { return gen_; }

  template <typename T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    for (auto& v : t.data) v = static_cast<T>(uniform(lo, hi));
  }
  template <typename T>
  void fill_normal(Tensor<T>& t, double mean, double stddev) {
    for (auto& v : t.data) v = static_cast<T>(normal(mean, stddev));
  }

 private:
  std::mt19937_64 gen_;
};

/// FNV-1a over raw bytes.
std::uint64_t checksum_bytes(const void* p, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull);

template <typename T>
std::uint64_t checksum(const Tensor<T>& t, std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = checksum_bytes(t.shape.data(), t.shape.size() * sizeof(int), seed);
  return checksum_bytes(t.data.data(), t.data.size() * sizeof(T), h);
}

template <typename T>
bool bits_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!shape_eq(a.shape, b.shape)) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(T)) == 0;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!shape_eq(a.shape, b.shape)) throw ShapeError("max_abs_diff: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  double m = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
    if (d > m) m = d;
  }
  return m;
}

}  // namespace ecnn

#endif
