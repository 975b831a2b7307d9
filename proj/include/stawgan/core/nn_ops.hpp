#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "stawgan/core/autodiff.hpp"
#include "stawgan/core/tensor.hpp"
#include "stawgan/errors.hpp"

namespace stawgan::core {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                                 std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// im2col for one sample. x: [C,H,W] slice; col: [C*kh*kw, Ho*Wo] row-major.
template <typename T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t kh,
            std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t Ho,
            std::int64_t Wo, T* col) {
  const std::int64_t M = Ho * Wo;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t r = 0; r < kh; ++r) {
      for (std::int64_t s = 0; s < kw; ++s) {
        T* dst = col + ((c * kh + r) * kw + s) * M;
        for (std::int64_t ho = 0; ho < Ho; ++ho) {
          const std::int64_t hi = ho * stride - pad + r;
          if (hi < 0 || hi >= H) {
            for (std::int64_t wo = 0; wo < Wo; ++wo) dst[ho * Wo + wo] = T(0);
            continue;
          }
          const T* src = x + (c * H + hi) * W;
          for (std::int64_t wo = 0; wo < Wo; ++wo) {
            const std::int64_t wi = wo * stride - pad + s;
            dst[ho * Wo + wo] = (wi >= 0 && wi < W) ? src[wi] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add col back into x.
template <typename T>
void col2im(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t kh,
            std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t Ho,
            std::int64_t Wo, T* x) {
  const std::int64_t M = Ho * Wo;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t r = 0; r < kh; ++r) {
      for (std::int64_t s = 0; s < kw; ++s) {
        const T* src = col + ((c * kh + r) * kw + s) * M;
        for (std::int64_t ho = 0; ho < Ho; ++ho) {
          const std::int64_t hi = ho * stride - pad + r;
          if (hi < 0 || hi >= H) continue;
          T* dst = x + (c * H + hi) * W;
          for (std::int64_t wo = 0; wo < Wo; ++wo) {
            const std::int64_t wi = wo * stride - pad + s;
            if (wi >= 0 && wi < W) dst[wi] += src[ho * Wo + wo];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, weight [Co,Ci,kh,kw], optional bias [Co].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::int64_t stride,
              std::int64_t pad) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  if (xv.c() != wv.c())
    throw ShapeError("conv2d: input channels " + std::to_string(xv.c()) + " != weight channels " +
                     std::to_string(wv.c()));
  const std::int64_t N = xv.n(), Ci = xv.c(), H = xv.h(), W = xv.w();
  const std::int64_t Co = wv.n(), kh = wv.h(), kw = wv.w();
  const std::int64_t Ho = detail::conv_out_dim(H, kh, stride, pad);
  const std::int64_t Wo = detail::conv_out_dim(W, kw, stride, pad);
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: output dims collapse to zero");
  const std::int64_t K = Ci * kh * kw, M = Ho * Wo;

  Tensor<T> out(Shape4{N, Co, Ho, Wo});
  const bool has_bias = bias.defined();
  {
    Eigen::Map<const MatRM<T>> Wm(wv.data(), Co, K);
#pragma omp parallel
    {
      std::vector<T> col(static_cast<std::size_t>(K * M));
#pragma omp for schedule(static)
      for (std::int64_t n = 0; n < N; ++n) {
        detail::im2col(xv.data() + n * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                       col.data());
        Eigen::Map<const MatRM<T>> colm(col.data(), K, M);
        Eigen::Map<MatRM<T>> outm(out.data() + n * Co * M, Co, M);
        outm.noalias() = Wm * colm;
        if (has_bias) {
          const auto& bv = bias.value();
          for (std::int64_t co = 0; co < Co; ++co) outm.row(co).array() += bv[co];
        }
      }
    }
  }

  std::vector<std::shared_ptr<Node<T>>> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_op<T>(std::move(out), std::move(parents),
                    [N, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo, K, M, has_bias](Node<T>& self) {
                      auto& px = *self.parents[0];
                      auto& pw = *self.parents[1];
                      const auto& xv = px.value;
                      const auto& wv = pw.value;
                      Eigen::Map<const MatRM<T>> Wm(wv.data(), Co, K);
                      if (px.requires_grad) px.ensure_grad();
                      if (pw.requires_grad) pw.ensure_grad();

                      int nthreads = 1;
#ifdef _OPENMP
                      nthreads = omp_get_max_threads();
#endif
                      std::vector<Tensor<T>> dw_part;
                      if (pw.requires_grad)
                        dw_part.assign(static_cast<std::size_t>(nthreads),
                                       Tensor<T>::zeros(wv.shape()));
#pragma omp parallel
                      {
                        int tid = 0;
#ifdef _OPENMP
                        tid = omp_get_thread_num();
#endif
                        std::vector<T> col(static_cast<std::size_t>(K * M));
                        std::vector<T> dcol(static_cast<std::size_t>(K * M));
#pragma omp for schedule(static)
                        for (std::int64_t n = 0; n < N; ++n) {
                          Eigen::Map<const MatRM<T>> doutm(self.grad.data() + n * Co * M, Co, M);
                          if (pw.requires_grad) {
                            detail::im2col(xv.data() + n * Ci * H * W, Ci, H, W, kh, kw, stride,
                                           pad, Ho, Wo, col.data());
                            Eigen::Map<const MatRM<T>> colm(col.data(), K, M);
                            Eigen::Map<MatRM<T>> dwm(dw_part[static_cast<std::size_t>(tid)].data(),
                                                     Co, K);
                            dwm.noalias() += doutm * colm.transpose();
                          }
                          if (px.requires_grad) {
                            Eigen::Map<MatRM<T>> dcolm(dcol.data(), K, M);
                            dcolm.noalias() = Wm.transpose() * doutm;
                            detail::col2im(dcol.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                                           px.grad.data() + n * Ci * H * W);
                          }
                        }
                      }
                      if (pw.requires_grad)
                        for (const auto& part : dw_part)
                          for (std::int64_t i = 0; i < wv.numel(); ++i) pw.grad[i] += part[i];
                      if (has_bias) {
                        auto& pb = *self.parents[2];
                        if (pb.requires_grad) {
                          pb.ensure_grad();
                          for (std::int64_t n = 0; n < N; ++n)
                            for (std::int64_t co = 0; co < Co; ++co) {
                              T acc = T(0);
                              const T* g = self.grad.data() + (n * Co + co) * M;
                              for (std::int64_t m = 0; m < M; ++m) acc += g[m];
                              pb.grad[co] += acc;
                            }
                        }
                      }
                    });
}

// Transposed 2-D convolution (exact adjoint of conv2d with the same
// geometry). Weight [Ci,Co,kh,kw], optional bias [Co].
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        std::int64_t stride, std::int64_t pad) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  if (xv.c() != wv.n())
    throw ShapeError("conv_transpose2d: input channels " + std::to_string(xv.c()) +
                     " != weight in-channels " + std::to_string(wv.n()));
  const std::int64_t N = xv.n(), Ci = xv.c(), Hi = xv.h(), Wi = xv.w();
  const std::int64_t Co = wv.c(), kh = wv.h(), kw = wv.w();
  const std::int64_t Ho = (Hi - 1) * stride - 2 * pad + kh;
  const std::int64_t Wo = (Wi - 1) * stride - 2 * pad + kw;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv_transpose2d: output dims collapse to zero");
  const std::int64_t K = Co * kh * kw, Mi = Hi * Wi;

  Tensor<T> out(Shape4{N, Co, Ho, Wo});
  const bool has_bias = bias.defined();
  {
    Eigen::Map<const MatRM<T>> Wm(wv.data(), Ci, K);
#pragma omp parallel
    {
      std::vector<T> col(static_cast<std::size_t>(K * Mi));
#pragma omp for schedule(static)
      for (std::int64_t n = 0; n < N; ++n) {
        Eigen::Map<const MatRM<T>> xm(xv.data() + n * Ci * Mi, Ci, Mi);
        Eigen::Map<MatRM<T>> colm(col.data(), K, Mi);
        colm.noalias() = Wm.transpose() * xm;
        T* dst = out.data() + n * Co * Ho * Wo;
        std::fill(dst, dst + Co * Ho * Wo, T(0));
        detail::col2im(col.data(), Co, Ho, Wo, kh, kw, stride, pad, Hi, Wi, dst);
        if (has_bias) {
          const auto& bv = bias.value();
          for (std::int64_t co = 0; co < Co; ++co)
            for (std::int64_t j = 0; j < Ho * Wo; ++j) dst[co * Ho * Wo + j] += bv[co];
        }
      }
    }
  }

  std::vector<std::shared_ptr<Node<T>>> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_op<T>(
      std::move(out), std::move(parents),
      [N, Ci, Hi, Wi, Co, kh, kw, stride, pad, Ho, Wo, K, Mi, has_bias](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const auto& xv = px.value;
        const auto& wv = pw.value;
        Eigen::Map<const MatRM<T>> Wm(wv.data(), Ci, K);
        if (px.requires_grad) px.ensure_grad();
        if (pw.requires_grad) pw.ensure_grad();

        int nthreads = 1;
#ifdef _OPENMP
        nthreads = omp_get_max_threads();
#endif
        std::vector<Tensor<T>> dw_part;
        if (pw.requires_grad)
          dw_part.assign(static_cast<std::size_t>(nthreads), Tensor<T>::zeros(wv.shape()));
#pragma omp parallel
        {
          int tid = 0;
#ifdef _OPENMP
          tid = omp_get_thread_num();
#endif
          std::vector<T> gcol(static_cast<std::size_t>(K * Mi));
#pragma omp for schedule(static)
          for (std::int64_t n = 0; n < N; ++n) {
            // im2col over the output gradient mirrors the forward col2im.
            detail::im2col(self.grad.data() + n * Co * Ho * Wo, Co, Ho, Wo, kh, kw, stride, pad,
                           Hi, Wi, gcol.data());
            Eigen::Map<const MatRM<T>> gcolm(gcol.data(), K, Mi);
            if (px.requires_grad) {
              Eigen::Map<MatRM<T>> dxm(px.grad.data() + n * Ci * Mi, Ci, Mi);
              dxm.noalias() += Wm * gcolm;
            }
            if (pw.requires_grad) {
              Eigen::Map<const MatRM<T>> xm(xv.data() + n * Ci * Mi, Ci, Mi);
              Eigen::Map<MatRM<T>> dwm(dw_part[static_cast<std::size_t>(tid)].data(), Ci, K);
              dwm.noalias() += xm * gcolm.transpose();
            }
          }
        }
        if (pw.requires_grad)
          for (const auto& part : dw_part)
            for (std::int64_t i = 0; i < wv.numel(); ++i) pw.grad[i] += part[i];
        if (has_bias) {
          auto& pb = *self.parents[2];
          if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::int64_t n = 0; n < N; ++n)
              for (std::int64_t co = 0; co < Co; ++co) {
                T acc = T(0);
                const T* g = self.grad.data() + (n * Co + co) * Ho * Wo;
                for (std::int64_t j = 0; j < Ho * Wo; ++j) acc += g[j];
                pb.grad[co] += acc;
              }
          }
        }
      });
}

// Instance normalization with affine parameters gamma/beta, both [C].
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const auto& xv = x.value();
  const std::int64_t N = xv.n(), C = xv.c(), HW = xv.h() * xv.w();
  if (gamma.value().numel() != C || beta.value().numel() != C)
    throw ShapeError("instance_norm: affine parameter size mismatch");
  Tensor<T> out(xv.shape());
  Tensor<T> mu(Shape4{N, C, 1, 1}), rstd(Shape4{N, C, 1, 1});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + nc * HW;
    T m = T(0);
    for (std::int64_t j = 0; j < HW; ++j) m += src[j];
    m /= static_cast<T>(HW);
    T v = T(0);
    for (std::int64_t j = 0; j < HW; ++j) {
      const T d = src[j] - m;
      v += d * d;
    }
    v /= static_cast<T>(HW);
    const T r = T(1) / std::sqrt(v + eps);
    mu[nc] = m;
    rstd[nc] = r;
    const T g = gamma.value()[nc % C], b = beta.value()[nc % C];
    T* dst = out.data() + nc * HW;
    for (std::int64_t j = 0; j < HW; ++j) dst[j] = g * (src[j] - m) * r + b;
  }
  return make_op<T>(
      std::move(out), {x.node(), gamma.node(), beta.node()},
      [N, C, HW, mu, rstd](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& xv = px.value;
        if (px.requires_grad) px.ensure_grad();
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
          const std::int64_t c = nc % C;
          const T* src = xv.data() + nc * HW;
          const T* dy = self.grad.data() + nc * HW;
          const T m = mu[nc], r = rstd[nc];
          const T g = pg.value[c];
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (std::int64_t j = 0; j < HW; ++j) {
            const T xhat = (src[j] - m) * r;
            sum_dy += dy[j];
            sum_dy_xhat += dy[j] * xhat;
          }
          if (pg.requires_grad) pg.grad[c] += sum_dy_xhat;
          if (pb.requires_grad) pb.grad[c] += sum_dy;
          if (px.requires_grad) {
            const T inv = T(1) / static_cast<T>(HW);
            T* dx = px.grad.data() + nc * HW;
            for (std::int64_t j = 0; j < HW; ++j) {
              const T xhat = (src[j] - m) * r;
              dx[j] += g * r * (dy[j] - sum_dy * inv - xhat * sum_dy_xhat * inv);
            }
          }
        }
      });
}

// 2x2 max pooling with stride 2.
template <typename T>
Var<T> maxpool2(const Var<T>& x) {
  const auto& xv = x.value();
  const std::int64_t N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
  if (H % 2 != 0 || W % 2 != 0) throw ShapeError("maxpool2 expects even spatial dims");
  const std::int64_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape4{N, C, Ho, Wo});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + nc * H * W;
    T* dst = out.data() + nc * Ho * Wo;
    for (std::int64_t ho = 0; ho < Ho; ++ho)
      for (std::int64_t wo = 0; wo < Wo; ++wo) {
        std::int64_t best = (2 * ho) * W + 2 * wo;
        T bv = src[best];
        for (std::int64_t dh = 0; dh < 2; ++dh)
          for (std::int64_t dw = 0; dw < 2; ++dw) {
            const std::int64_t idx = (2 * ho + dh) * W + 2 * wo + dw;
            if (src[idx] > bv) {
              bv = src[idx];
              best = idx;
            }
          }
        dst[ho * Wo + wo] = bv;
        argmax[static_cast<std::size_t>(nc * Ho * Wo + ho * Wo + wo)] = best;
      }
  }
  return make_op<T>(std::move(out), {x.node()},
                    [N, C, H, W, Ho, Wo, argmax = std::move(argmax)](Node<T>& self) {
                      auto& p = *self.parents[0];
                      if (!p.requires_grad) return;
                      p.ensure_grad();
                      for (std::int64_t nc = 0; nc < N * C; ++nc) {
                        T* dx = p.grad.data() + nc * H * W;
                        const T* g = self.grad.data() + nc * Ho * Wo;
                        for (std::int64_t j = 0; j < Ho * Wo; ++j)
                          dx[argmax[static_cast<std::size_t>(nc * Ho * Wo + j)]] += g[j];
                      }
                    });
}

// Nearest-neighbor 2x upsampling.
template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
  const auto& xv = x.value();
  const std::int64_t N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
  Tensor<T> out(Shape4{N, C, 2 * H, 2 * W});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + nc * H * W;
    T* dst = out.data() + nc * 4 * H * W;
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t w = 0; w < W; ++w) {
        const T v = src[h * W + w];
        dst[(2 * h) * 2 * W + 2 * w] = v;
        dst[(2 * h) * 2 * W + 2 * w + 1] = v;
        dst[(2 * h + 1) * 2 * W + 2 * w] = v;
        dst[(2 * h + 1) * 2 * W + 2 * w + 1] = v;
      }
  }
  return make_op<T>(std::move(out), {x.node()}, [N, C, H, W](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
      T* dx = p.grad.data() + nc * H * W;
      const T* g = self.grad.data() + nc * 4 * H * W;
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w)
          dx[h * W + w] += g[(2 * h) * 2 * W + 2 * w] + g[(2 * h) * 2 * W + 2 * w + 1] +
                           g[(2 * h + 1) * 2 * W + 2 * w] + g[(2 * h + 1) * 2 * W + 2 * w + 1];
    }
  });
}

// Fully connected layer; x [N,F,1,1], weight [O,F], bias [O] -> [N,O,1,1].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const std::int64_t N = xv.n(), F = xv.c() * xv.h() * xv.w();
  const std::int64_t O = wv.n(), Fw = wv.c() * wv.h() * wv.w();
  if (F != Fw)
    throw ShapeError("linear: input features " + std::to_string(F) + " != weight features " +
                     std::to_string(Fw));
  Tensor<T> out(Shape4{N, O, 1, 1});
  Eigen::Map<const MatRM<T>> xm(xv.data(), N, F);
  Eigen::Map<const MatRM<T>> wm(wv.data(), O, F);
  Eigen::Map<MatRM<T>> om(out.data(), N, O);
  om.noalias() = xm * wm.transpose();
  if (bias.defined())
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t o = 0; o < O; ++o) out[n * O + o] += bias.value()[o];

  std::vector<std::shared_ptr<Node<T>>> parents{x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  const bool has_bias = bias.defined();
  return make_op<T>(std::move(out), std::move(parents), [N, F, O, has_bias](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    Eigen::Map<const MatRM<T>> gm(self.grad.data(), N, O);
    if (px.requires_grad) {
      px.ensure_grad();
      Eigen::Map<const MatRM<T>> wm(pw.value.data(), O, F);
      Eigen::Map<MatRM<T>> dxm(px.grad.data(), N, F);
      dxm.noalias() += gm * wm;
    }
    if (pw.requires_grad) {
      pw.ensure_grad();
      Eigen::Map<const MatRM<T>> xm(px.value.data(), N, F);
      Eigen::Map<MatRM<T>> dwm(pw.grad.data(), O, F);
      dwm.noalias() += gm.transpose() * xm;
    }
    if (has_bias) {
      auto& pb = *self.parents[2];
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t o = 0; o < O; ++o) pb.grad[o] += self.grad[n * O + o];
      }
    }
  });
}

// Depthwise valid-mode correlation with one fixed [kh,kw] kernel shared by
// all channels (SSIM window machinery). The kernel carries no gradient.
template <typename T>
Var<T> window_conv_valid(const Var<T>& x, const Tensor<T>& kernel) {
  const auto& xv = x.value();
  const std::int64_t N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
  const std::int64_t kh = kernel.h(), kw = kernel.w();
  if (H < kh || W < kw)
    throw ValidationError("window_conv_valid: image " + std::to_string(H) + "x" +
                          std::to_string(W) + " smaller than window " + std::to_string(kh) + "x" +
                          std::to_string(kw));
  const std::int64_t Ho = H - kh + 1, Wo = W - kw + 1;
  Tensor<T> out(Shape4{N, C, Ho, Wo});
#pragma omp parallel for schedule(static)
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + nc * H * W;
    T* dst = out.data() + nc * Ho * Wo;
    for (std::int64_t ho = 0; ho < Ho; ++ho)
      for (std::int64_t wo = 0; wo < Wo; ++wo) {
        T acc = T(0);
        for (std::int64_t r = 0; r < kh; ++r)
          for (std::int64_t s = 0; s < kw; ++s)
            acc += kernel[r * kw + s] * src[(ho + r) * W + wo + s];
        dst[ho * Wo + wo] = acc;
      }
  }
  return make_op<T>(std::move(out), {x.node()}, [N, C, H, W, kh, kw, Ho, Wo, kernel](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
#pragma omp parallel for schedule(static)
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
      T* dx = p.grad.data() + nc * H * W;
      const T* g = self.grad.data() + nc * Ho * Wo;
      for (std::int64_t ho = 0; ho < Ho; ++ho)
        for (std::int64_t wo = 0; wo < Wo; ++wo) {
          const T gv = g[ho * Wo + wo];
          for (std::int64_t r = 0; r < kh; ++r)
            for (std::int64_t s = 0; s < kw; ++s)
              dx[(ho + r) * W + wo + s] += gv * kernel[r * kw + s];
        }
    }
  });
}

// 3x3 box blur; border pixels average their in-bounds neighbors, so constant
// images are fixed points. Backward is the exact transpose.
template <typename T>
Var<T> boxblur3(const Var<T>& x) {
  const auto& xv = x.value();
  const std::int64_t N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
  Tensor<T> out(xv.shape());
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + nc * H * W;
    T* dst = out.data() + nc * H * W;
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t w = 0; w < W; ++w) {
        T acc = T(0);
        int cnt = 0;
        for (std::int64_t dh = -1; dh <= 1; ++dh)
          for (std::int64_t dw = -1; dw <= 1; ++dw) {
            const std::int64_t hh = h + dh, ww = w + dw;
            if (hh >= 0 && hh < H && ww >= 0 && ww < W) {
              acc += src[hh * W + ww];
              ++cnt;
            }
          }
        dst[h * W + w] = acc / static_cast<T>(cnt);
      }
  }
  return make_op<T>(std::move(out), {x.node()}, [N, C, H, W](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
      T* dx = p.grad.data() + nc * H * W;
      const T* g = self.grad.data() + nc * H * W;
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w) {
          int cnt = 0;
          for (std::int64_t dh = -1; dh <= 1; ++dh)
            for (std::int64_t dw = -1; dw <= 1; ++dw) {
              const std::int64_t hh = h + dh, ww = w + dw;
              if (hh >= 0 && hh < H && ww >= 0 && ww < W) ++cnt;
            }
          const T gv = g[h * W + w] / static_cast<T>(cnt);
          for (std::int64_t dh = -1; dh <= 1; ++dh)
            for (std::int64_t dw = -1; dw <= 1; ++dw) {
              const std::int64_t hh = h + dh, ww = w + dw;
              if (hh >= 0 && hh < H && ww >= 0 && ww < W) dx[hh * W + ww] += gv;
            }
        }
    }
  });
}

// Mean negative log-likelihood of integer labels under softmax(logits).
// logits [N,K,1,1].
template <typename T>
Var<T> nll_logits(const Var<T>& logits, const std::vector<int>& labels) {
  const auto& lv = logits.value();
  const std::int64_t N = lv.n(), K = lv.c() * lv.h() * lv.w();
  if (static_cast<std::int64_t>(labels.size()) != N)
    throw ShapeError("nll_logits: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= K) throw ValidationError("nll_logits: label out of range");
  Tensor<T> probs(Shape4{N, K, 1, 1});
  T loss = T(0);
  for (std::int64_t n = 0; n < N; ++n) {
    const T* z = lv.data() + n * K;
    T zmax = z[0];
    for (std::int64_t k = 1; k < K; ++k) zmax = std::max(zmax, z[k]);
    T se = T(0);
    for (std::int64_t k = 0; k < K; ++k) se += std::exp(z[k] - zmax);
    const T lse = zmax + std::log(se);
    for (std::int64_t k = 0; k < K; ++k) probs[n * K + k] = std::exp(z[k] - lse);
    loss += lse - z[labels[static_cast<std::size_t>(n)]];
  }
  loss /= static_cast<T>(N);
  return make_op<T>(Tensor<T>::scalar(loss), {logits.node()},
                    [N, K, labels, probs = std::move(probs)](Node<T>& self) {
                      auto& p = *self.parents[0];
                      if (!p.requires_grad) return;
                      p.ensure_grad();
                      const T g = self.grad[0] / static_cast<T>(N);
                      for (std::int64_t n = 0; n < N; ++n)
                        for (std::int64_t k = 0; k < K; ++k) {
                          T d = probs[n * K + k];
                          if (k == labels[static_cast<std::size_t>(n)]) d -= T(1);
                          p.grad[n * K + k] += g * d;
                        }
                    });
}

// ---- spectral normalization ------------------------------------------------

namespace detail {
template <typename T>
void l2_normalize(std::vector<T>& v) {
  T n = T(0);
  for (T x : v) n += x * x;
  n = std::sqrt(n) + T(1e-12);
  for (T& x : v) x /= n;
}
}  // namespace detail

// State for one spectrally normalized weight: the persistent left singular
// vector estimate.
template <typename T>
struct SpectralState {
  std::vector<T> u;
};

// W / sigma_max(W), sigma estimated by power iteration on the [rows, cols]
// reshape. u is persisted across calls when update is true; gradients treat
// u, v as constants (d sigma / dW = u v^T).
template <typename T>
Var<T> spectral_normalize(const Var<T>& weight, SpectralState<T>& state, int power_iterations,
                          bool update) {
  const auto& wv = weight.value();
  const std::int64_t rows = wv.n();
  const std::int64_t cols = wv.c() * wv.h() * wv.w();
  Eigen::Map<const MatRM<T>> Wm(wv.data(), rows, cols);

  if (state.u.size() != static_cast<std::size_t>(rows)) {
    // Deterministic init from the weight itself.
    state.u.assign(static_cast<std::size_t>(rows), T(0));
    for (std::int64_t r = 0; r < rows; ++r) state.u[static_cast<std::size_t>(r)] = wv[r * cols] + T(1e-3) * static_cast<T>(r + 1);
    detail::l2_normalize(state.u);
  }

  std::vector<T> u = state.u;
  std::vector<T> v(static_cast<std::size_t>(cols));
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> um(u.data(), rows);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> vm(v.data(), cols);
  const int iters = std::max(1, power_iterations);
  for (int it = 0; it < iters; ++it) {
    vm.noalias() = Wm.transpose() * um;
    detail::l2_normalize(v);
    um.noalias() = Wm * vm;
    detail::l2_normalize(u);
  }
  if (update) state.u = u;
  const T sigma = um.dot(Wm * vm);

  Tensor<T> out(wv.shape());
  const T inv_sigma = T(1) / sigma;
  for (std::int64_t i = 0; i < wv.numel(); ++i) out[i] = wv[i] * inv_sigma;
  return make_op<T>(std::move(out), {weight.node()},
                    [rows, cols, inv_sigma, u = std::move(u), v = std::move(v)](Node<T>& self) {
                      auto& p = *self.parents[0];
                      if (!p.requires_grad) return;
                      p.ensure_grad();
                      // dW = (g - <g, Wbar> u v^T) / sigma
                      T dot = T(0);
                      for (std::int64_t i = 0; i < self.value.numel(); ++i)
                        dot += self.grad[i] * self.value[i];
                      for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t c = 0; c < cols; ++c) {
                          const std::int64_t i = r * cols + c;
                          p.grad[i] += (self.grad[i] -
                                        dot * u[static_cast<std::size_t>(r)] *
                                            v[static_cast<std::size_t>(c)]) *
                                       inv_sigma;
                        }
                    });
}

}  // namespace stawgan::core
