#include "ecnn/ops.hpp"

#include <cmath>
#include <limits>

namespace ecnn::ops {
namespace {

// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_acc(const T* A, const T* B, T* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* a_row = A + static_cast<std::size_t>(i) * K;
    T* c_row = C + static_cast<std::size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      T a = a_row[k];
      const T* b_row = B + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// C[M x N] += A[M x K] * B[N x K]^T
template <typename T>
void gemm_abt_acc(const T* A, const T* B, T* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* a_row = A + static_cast<std::size_t>(i) * K;
    T* c_row = C + static_cast<std::size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const T* b_row = B + static_cast<std::size_t>(j) * K;
      T s = 0;
      for (int k = 0; k < K; ++k) s += a_row[k] * b_row[k];
      c_row[j] += s;
    }
  }
}

// C[M x N] += A[K x M]^T * B[K x N]
template <typename T>
void gemm_atb_acc(const T* A, const T* B, T* C, int M, int K, int N) {
  for (int k = 0; k < K; ++k) {
    const T* a_row = A + static_cast<std::size_t>(k) * M;
    const T* b_row = B + static_cast<std::size_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      T a = a_row[i];
      T* c_row = C + static_cast<std::size_t>(i) * N;
      for (int j = 0; j < N; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// One sample: x [C,H,W] -> cols [C*k*k, Hout*Wout], zero padding.
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Hout, int Wout, T* cols) {
  const int P = Hout * Wout;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * P;
        for (int oh = 0; oh < Hout; ++oh) {
          int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) {
            for (int ow = 0; ow < Wout; ++ow) dst[oh * Wout + ow] = T(0);
            continue;
          }
          const T* src_row = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wout; ++ow) {
            int iw = ow * stride - pad + kj;
            dst[oh * Wout + ow] = (iw >= 0 && iw < W) ? src_row[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* cols, int C, int H, int W, int k, int stride, int pad, int Hout, int Wout, T* gx) {
  const int P = Hout * Wout;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * P;
        for (int oh = 0; oh < Hout; ++oh) {
          int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          T* dst_row = gx + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wout; ++ow) {
            int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < W) dst_row[iw] += src[oh * Wout + ow];
          }
        }
      }
    }
  }
}

void check_4d(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + ": expected 4-d NCHW tensor, got " + shape_str(s));
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride, int pad) {
  check_4d(x.shape, "conv2d input");
  check_4d(w.shape, "conv2d weight");
  if (w.shape[2] != w.shape[3])
    throw ShapeError("conv2d: kernel must be square, got " + std::to_string(w.shape[2]) + "x" +
                     std::to_string(w.shape[3]));
  if (pad < 0) throw ValueError("conv2d: negative padding " + std::to_string(pad));
  const int N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Cout = w.shape[0], k = w.shape[2];
  if (w.shape[1] != Cin)
    throw ShapeError("conv2d: input channels " + std::to_string(Cin) + " != weight in-channels " +
                     std::to_string(w.shape[1]));
  if (bias && bias->numel() != Cout)
    throw ShapeError("conv2d: bias length " + std::to_string(bias->numel()) + " != out-channels " +
                     std::to_string(Cout));
  const int Hout = pooled_extent(H, k, stride, pad, "conv2d");
  const int Wout = pooled_extent(W, k, stride, pad, "conv2d");
  const int R = Cin * k * k, P = Hout * Wout;

  Tensor<T> y({N, Cout, Hout, Wout});
  std::vector<T> cols(static_cast<std::size_t>(R) * P);
  for (int n = 0; n < N; ++n) {
    im2col(x.ptr() + static_cast<std::size_t>(n) * Cin * H * W, Cin, H, W, k, stride, pad, Hout, Wout, cols.data());
    T* y_n = y.ptr() + static_cast<std::size_t>(n) * Cout * P;
    gemm_acc(w.ptr(), cols.data(), y_n, Cout, R, P);
    if (bias) {
      for (int m = 0; m < Cout; ++m) {
        T b = bias->data[m];
        T* row = y_n + static_cast<std::size_t>(m) * P;
        for (int p = 0; p < P; ++p) row[p] += b;
      }
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gw,
                     Tensor<T>* gb, int stride, int pad) {
  const int N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Cout = w.shape[0], k = w.shape[2];
  const int Hout = gy.shape[2], Wout = gy.shape[3];
  const int R = Cin * k * k, P = Hout * Wout;

  if (gb) {
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < Cout; ++m) {
        const T* row = gy.ptr() + (static_cast<std::size_t>(n) * Cout + m) * P;
        T s = 0;
        for (int p = 0; p < P; ++p) s += row[p];
        gb->data[m] += s;
      }
  }
  if (!gx && !gw) return;

  std::vector<T> cols(static_cast<std::size_t>(R) * P);
  std::vector<T> gcols;
  if (gx) gcols.resize(static_cast<std::size_t>(R) * P);
  for (int n = 0; n < N; ++n) {
    const T* gy_n = gy.ptr() + static_cast<std::size_t>(n) * Cout * P;
    if (gw) {
      im2col(x.ptr() + static_cast<std::size_t>(n) * Cin * H * W, Cin, H, W, k, stride, pad, Hout, Wout, cols.data());
      gemm_abt_acc(gy_n, cols.data(), gw->ptr(), Cout, P, R);
    }
    if (gx) {
      std::fill(gcols.begin(), gcols.end(), T(0));
      gemm_atb_acc(w.ptr(), gy_n, gcols.data(), R, Cout, P);
      col2im_acc(gcols.data(), Cin, H, W, k, stride, pad, Hout, Wout,
                 gx->ptr() + static_cast<std::size_t>(n) * Cin * H * W);
    }
  }
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  if (x.ndim() != 2) throw ShapeError("linear: expected 2-d input, got " + shape_str(x.shape));
  const int N = x.shape[0], In = x.shape[1], Out = w.shape[0];
  if (w.shape[1] != In)
    throw ShapeError("linear: input features " + std::to_string(In) + " != weight in-features " +
                     std::to_string(w.shape[1]));
  if (bias && bias->numel() != Out)
    throw ShapeError("linear: bias length " + std::to_string(bias->numel()) + " != out-features " +
                     std::to_string(Out));
  Tensor<T> y({N, Out});
  gemm_abt_acc(x.ptr(), w.ptr(), y.ptr(), N, In, Out);
  if (bias)
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < Out; ++o) y.at2(n, o) += bias->data[o];
  return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gw,
                     Tensor<T>* gb) {
  const int N = x.shape[0], In = x.shape[1], Out = w.shape[0];
  if (gx) gemm_acc(gy.ptr(), w.ptr(), gx->ptr(), N, Out, In);
  if (gw) gemm_atb_acc(gy.ptr(), x.ptr(), gw->ptr(), Out, N, In);
  if (gb)
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < Out; ++o) gb->data[o] += gy.at2(n, o);
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return y;
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& gy, Tensor<T>& gx) {
  for (std::size_t i = 0; i < x.data.size(); ++i)
    if (x.data[i] > T(0)) gx.data[i] += gy.data[i];
}

template <typename T>
Tensor<T> add_forward(const Tensor<T>& a, const Tensor<T>& b) {
  if (!shape_eq(a.shape, b.shape))
    throw ShapeError("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<T> y(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
  return y;
}

template <typename T>
Tensor<T> maxpool2d_forward(const Tensor<T>& x, int k, int stride, std::vector<std::int64_t>* argmax) {
  check_4d(x.shape, "maxpool2d input");
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Hout = pooled_extent(H, k, stride, 0, "maxpool2d");
  const int Wout = pooled_extent(W, k, stride, 0, "maxpool2d");
  Tensor<T> y({N, C, Hout, Wout});
  if (argmax) argmax->assign(y.data.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < Hout; ++oh)
        for (int ow = 0; ow < Wout; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
              int ih = oh * stride + ki, iw = ow * stride + kj;
              std::int64_t idx = ((static_cast<std::int64_t>(n) * C + c) * H + ih) * W + iw;
              T v = x.data[static_cast<std::size_t>(idx)];
              if (v > best) {
                best = v;
                best_idx = idx;
              }
            }
          y.data[o] = best;
          if (argmax) (*argmax)[o] = best_idx;
        }
  return y;
}

template <typename T>
void maxpool2d_backward(const std::vector<std::int64_t>& argmax, const Tensor<T>& gy, Tensor<T>& gx) {
  for (std::size_t o = 0; o < gy.data.size(); ++o) gx.data[static_cast<std::size_t>(argmax[o])] += gy.data[o];
}

template <typename T>
Tensor<T> avgpool2d_forward(const Tensor<T>& x, int k, int stride) {
  check_4d(x.shape, "avgpool2d input");
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Hout = pooled_extent(H, k, stride, 0, "avgpool2d");
  const int Wout = pooled_extent(W, k, stride, 0, "avgpool2d");
  Tensor<T> y({N, C, Hout, Wout});
  const T inv = T(1) / static_cast<T>(k * k);
  std::size_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < Hout; ++oh)
        for (int ow = 0; ow < Wout; ++ow, ++o) {
          T s = 0;
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) s += x.at4(n, c, oh * stride + ki, ow * stride + kj);
          y.data[o] = s * inv;
        }
  return y;
}

template <typename T>
void avgpool2d_backward(const Shape& x_shape, int k, int stride, const Tensor<T>& gy, Tensor<T>& gx) {
  const int N = gy.shape[0], C = gy.shape[1], Hout = gy.shape[2], Wout = gy.shape[3];
  const int H = x_shape[2], W = x_shape[3];
  const T inv = T(1) / static_cast<T>(k * k);
  std::size_t o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < Hout; ++oh)
        for (int ow = 0; ow < Wout; ++ow, ++o) {
          T g = gy.data[o] * inv;
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
              std::size_t idx = ((static_cast<std::size_t>(n) * C + c) * H + oh * stride + ki) * W + ow * stride + kj;
              gx.data[idx] += g;
            }
        }
}

template <typename T>
Tensor<T> flatten_forward(const Tensor<T>& x) {
  check_4d(x.shape, "flatten input");
  Tensor<T> y;
  y.shape = {x.shape[0], x.shape[1] * x.shape[2] * x.shape[3]};
  y.data = x.data;
  return y;
}

template <typename T>
void batch_moments(const Tensor<T>& x, Tensor<T>& mean, Tensor<T>& var) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::int64_t M = static_cast<std::int64_t>(N) * H * W;
  mean = Tensor<T>({C});
  var = Tensor<T>({C});
  for (int c = 0; c < C; ++c) {
    T s = 0;
    for (int n = 0; n < N; ++n) {
      const T* p = x.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H * W; ++i) s += p[i];
    }
    mean.data[c] = s / static_cast<T>(M);
  }
  for (int c = 0; c < C; ++c) {
    T mu = mean.data[c], s = 0;
    for (int n = 0; n < N; ++n) {
      const T* p = x.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H * W; ++i) {
        T d = p[i] - mu;
        s += d * d;
      }
    }
    var.data[c] = s / static_cast<T>(M);
  }
}

template <typename T>
Tensor<T> batchnorm2d_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                              const Tensor<T>& mean, const Tensor<T>& var, double eps) {
  check_4d(x.shape, "batchnorm2d input");
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  if (gamma.numel() != C || beta.numel() != C || mean.numel() != C || var.numel() != C)
    throw ShapeError("batchnorm2d: channel-count mismatch, input has " + std::to_string(C) + " channels but gamma has " +
                     std::to_string(gamma.numel()));
  Tensor<T> y(x.shape);
  for (int c = 0; c < C; ++c) {
    T invstd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var.data[c]) + eps));
    T g = gamma.data[c] * invstd, b = beta.data[c], mu = mean.data[c];
    for (int n = 0; n < N; ++n) {
      const T* px = x.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
      T* py = y.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H * W; ++i) py[i] = (px[i] - mu) * g + b;
    }
  }
  return y;
}

template <typename T>
void batchnorm2d_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& mean, const Tensor<T>& var,
                          double eps, const std::vector<std::uint8_t>& stats_from_batch, const Tensor<T>& gy,
                          Tensor<T>* gx, Tensor<T>* ggamma, Tensor<T>* gbeta) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::int64_t M = static_cast<std::int64_t>(N) * H * W;
  if (static_cast<int>(stats_from_batch.size()) != C)
    throw ShapeError("batchnorm2d backward: " + std::to_string(stats_from_batch.size()) + " stat flags for " +
                     std::to_string(C) + " channels");
  for (int c = 0; c < C; ++c) {
    T mu = mean.data[c];
    T invstd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var.data[c]) + eps));
    T sum_gy = 0, sum_gy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const T* px = x.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
      const T* pg = gy.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H * W; ++i) {
        sum_gy += pg[i];
        sum_gy_xhat += pg[i] * (px[i] - mu) * invstd;
      }
    }
    if (gbeta) gbeta->data[c] += sum_gy;
    if (ggamma) ggamma->data[c] += sum_gy_xhat;
    if (!gx) continue;
    T g = gamma.data[c] * invstd;
    if (stats_from_batch[static_cast<std::size_t>(c)]) {
      T inv_m = T(1) / static_cast<T>(M);
      for (int n = 0; n < N; ++n) {
        const T* px = x.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
        const T* pg = gy.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
        T* pgx = gx->ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
        for (int i = 0; i < H * W; ++i) {
          T xhat = (px[i] - mu) * invstd;
          pgx[i] += g * (pg[i] - sum_gy * inv_m - xhat * sum_gy_xhat * inv_m);
        }
      }
    } else {
      for (int n = 0; n < N; ++n) {
        const T* pg = gy.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
        T* pgx = gx->ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
        for (int i = 0; i < H * W; ++i) pgx[i] += g * pg[i];
      }
    }
  }
}

template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>* dlogits) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: expected [N,C] logits, got " + shape_str(logits.shape));
  const int N = logits.shape[0], C = logits.shape[1];
  if (static_cast<int>(labels.size()) != N)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(N));
  T loss = 0;
  const T inv_n = T(1) / static_cast<T>(N);
  for (int n = 0; n < N; ++n) {
    int label = labels[n];
    if (label < 0 || label >= C)
      throw ValueError("cross_entropy: label " + std::to_string(label) + " out of range [0," + std::to_string(C) + ")");
    const T* row = logits.ptr() + static_cast<std::size_t>(n) * C;
    T m = row[0];
    for (int c = 1; c < C; ++c)
      if (row[c] > m) m = row[c];
    T sum = 0;
    for (int c = 0; c < C; ++c) sum += std::exp(row[c] - m);
    T lse = m + std::log(sum);
    loss += (lse - row[label]) * inv_n;
    if (dlogits) {
      T* drow = dlogits->ptr() + static_cast<std::size_t>(n) * C;
      for (int c = 0; c < C; ++c) drow[c] = std::exp(row[c] - lse) * inv_n;
      drow[label] -= inv_n;
    }
  }
  return loss;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const int N = logits.shape[0], C = logits.shape[1];
  Tensor<T> y(logits.shape);
  for (int n = 0; n < N; ++n) {
    const T* row = logits.ptr() + static_cast<std::size_t>(n) * C;
    T* out = y.ptr() + static_cast<std::size_t>(n) * C;
    T m = row[0];
    for (int c = 1; c < C; ++c)
      if (row[c] > m) m = row[c];
    T sum = 0;
    for (int c = 0; c < C; ++c) {
      out[c] = std::exp(row[c] - m);
      sum += out[c];
    }
    for (int c = 0; c < C; ++c) out[c] /= sum;
  }
  return y;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const int N = logits.shape[0], C = logits.shape[1];
  std::vector<int> out(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    const T* row = logits.ptr() + static_cast<std::size_t>(n) * C;
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (row[c] > row[best]) best = c;
    out[n] = best;
  }
  return out;
}

#define ECNN_INSTANTIATE_OPS(T)                                                                                      \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int, int);             \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*,    \
                                   Tensor<T>*, int, int);                                                           \
  template Tensor<T> linear_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                       \
  template void linear_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*,    \
                                   Tensor<T>*);                                                                     \
  template Tensor<T> relu_forward<T>(const Tensor<T>&);                                                             \
  template void relu_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                                   \
  template Tensor<T> add_forward<T>(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> maxpool2d_forward<T>(const Tensor<T>&, int, int, std::vector<std::int64_t>*);                  \
  template void maxpool2d_backward<T>(const std::vector<std::int64_t>&, const Tensor<T>&, Tensor<T>&);              \
  template Tensor<T> avgpool2d_forward<T>(const Tensor<T>&, int, int);                                              \
  template void avgpool2d_backward<T>(const Shape&, int, int, const Tensor<T>&, Tensor<T>&);                        \
  template Tensor<T> flatten_forward<T>(const Tensor<T>&);                                                          \
  template void batch_moments<T>(const Tensor<T>&, Tensor<T>&, Tensor<T>&);                                         \
  template Tensor<T> batchnorm2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                            const Tensor<T>&, double);                                              \
  template void batchnorm2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                        double, const std::vector<std::uint8_t>&, const Tensor<T>&, Tensor<T>*,     \
                                        Tensor<T>*, Tensor<T>*);                                                    \
  template T softmax_cross_entropy<T>(const Tensor<T>&, const std::vector<int>&, Tensor<T>*);                       \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                                                  \
  template std::vector<int> argmax_rows<T>(const Tensor<T>&);

ECNN_INSTANTIATE_OPS(float)
ECNN_INSTANTIATE_OPS(double)

}  // namespace ecnn::ops
