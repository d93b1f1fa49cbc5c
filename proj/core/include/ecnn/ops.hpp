#ifndef ECNN_OPS_HPP
#define ECNN_OPS_HPP

#include <vector>

#include "ecnn/tensor.hpp"

namespace ecnn::ops {

// Convolution is correlation (no kernel flip). x: [N,Cin,H,W], w: [Cout,Cin,k,k],
// bias: optional [Cout]. Output spatial extent = floor((H + 2*pad - k)/stride) + 1.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride, int pad);

// Accumulates into any of gx/gw/gb that are non-null. gx/gw/gb must be pre-sized.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gw,
                     Tensor<T>* gb, int stride, int pad);

// x: [N,in], w: [out,in], bias: optional [out] -> [N,out]
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gw,
                     Tensor<T>* gb);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& gy, Tensor<T>& gx);

template <typename T>
Tensor<T> add_forward(const Tensor<T>& a, const Tensor<T>& b);

// Pooling over NCHW with square window, no padding. argmax, when non-null,
// receives the flat input index chosen per output element.
template <typename T>
Tensor<T> maxpool2d_forward(const Tensor<T>& x, int k, int stride, std::vector<std::int64_t>* argmax);

template <typename T>
void maxpool2d_backward(const std::vector<std::int64_t>& argmax, const Tensor<T>& gy, Tensor<T>& gx);

template <typename T>
Tensor<T> avgpool2d_forward(const Tensor<T>& x, int k, int stride);

template <typename T>
void avgpool2d_backward(const Shape& x_shape, int k, int stride, const Tensor<T>& gy, Tensor<T>& gx);

// [N,C,H,W] -> [N, C*H*W]
template <typename T>
Tensor<T> flatten_forward(const Tensor<T>& x);

// Per-channel mean and biased variance over N*H*W.
template <typename T>
void batch_moments(const Tensor<T>& x, Tensor<T>& mean, Tensor<T>& var);

// y = gamma * (x - mean) * rsqrt(var + eps) + beta, per channel.
template <typename T>
Tensor<T> batchnorm2d_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                              const Tensor<T>& mean, const Tensor<T>& var, double eps);

// stats_from_batch flags, per channel, whether mean/var came from the batch
// (training-mode backward through the statistics) or are fixed running stats
// (eval-style backward). Channels with frozen statistics train in eval style.
template <typename T>
void batchnorm2d_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& mean, const Tensor<T>& var,
                          double eps, const std::vector<std::uint8_t>& stats_from_batch, const Tensor<T>& gy,
                          Tensor<T>* gx, Tensor<T>* ggamma, Tensor<T>* gbeta);

// Mean over the batch of -log softmax(logits)[label], computed with max-subtraction.
// When dlogits is non-null it receives (softmax - onehot)/N.
template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>* dlogits);

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, std::nullptr_t, int stride, int pad) {
  return conv2d_forward(x, w, static_cast<const Tensor<T>*>(nullptr), stride, pad);
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, std::nullptr_t) {
  return linear_forward(x, w, static_cast<const Tensor<T>*>(nullptr));
}

template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, std::nullptr_t) {
  return softmax_cross_entropy(logits, labels, static_cast<Tensor<T>*>(nullptr));
}

inline int pooled_extent(int in, int k, int stride, int pad, const char* what) {
  if (k < 1) throw ValueError(std::string(what) + ": kernel size must be >= 1, got " + std::to_string(k));
  if (stride < 1) throw ValueError(std::string(what) + ": stride must be >= 1, got " + std::to_string(stride));
  int out = (in + 2 * pad - k) / stride + 1;
  if (in + 2 * pad < k || out < 1)
    throw ShapeError(std::string(what) + ": window " + std::to_string(k) + " exceeds padded input extent " +
                     std::to_string(in + 2 * pad));
  return out;
}

}  // namespace ecnn::ops

#endif
