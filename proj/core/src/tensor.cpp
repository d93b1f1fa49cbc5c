#include "ecnn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ecnn {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent " + std::to_string(e) + " in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

std::uint64_t checksum_bytes(const void* p, std::size_t n, std::uint64_t seed) {
  const unsigned char* b = static_cast<const unsigned char*>(p);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace ecnn
