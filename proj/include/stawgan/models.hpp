#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stawgan/core/autodiff.hpp"
#include "stawgan/core/nn_ops.hpp"
#include "stawgan/core/optim.hpp"
#include "stawgan/core/serialize.hpp"
#include "stawgan/core/tensor.hpp"
#include "stawgan/dataset.hpp"
#include "stawgan/errors.hpp"

namespace stawgan::models {

using core::Rng;
using core::Shape4;
using core::Tensor;
using core::Var;

// One-hot target-modality code over {IR, RGB}.
struct DomainCode {
  std::array<float, 2> t{1.0f, 0.0f};

  static DomainCode of(data::Domain d) {
    DomainCode c;
    c.t = d == data::Domain::IR ? std::array<float, 2>{1.0f, 0.0f}
                                : std::array<float, 2>{0.0f, 1.0f};
    return c;
  }
  void validate() const {
    const bool ok = (t[0] == 1.0f && t[1] == 0.0f) || (t[0] == 0.0f && t[1] == 1.0f);
    if (!ok) throw ValidationError("domain code must be one-hot over {IR, RGB}");
  }
  int index() const { return t[0] == 1.0f ? 0 : 1; }
};

template <typename T>
Var<T> domain_code_tensor(const DomainCode& code, std::int64_t batch) {
  code.validate();
  Tensor<T> t(Shape4{batch, 2, 1, 1});
  for (std::int64_t n = 0; n < batch; ++n) {
    t.at(n, 0, 0, 0) = static_cast<T>(code.t[0]);
    t.at(n, 1, 0, 0) = static_cast<T>(code.t[1]);
  }
  return core::constant(std::move(t));
}

// Architecture knobs. Defaults target 256x256; the toy runs shrink widths.
struct ModelConfig {
  int image_size = 256;
  int gen_width = 64;
  int gen_shared_blocks = 4;
  int shape_width = 32;
  int contrast_width = 8;
  int disc_width = 64;
  int disc_blocks = 0;  // 0: choose so the critic map is 4x4
  int sn_power_iterations = 1;

  int resolved_disc_blocks() const {
    if (disc_blocks > 0) return disc_blocks;
    int n = 0, s = image_size;
    while (s > 4) {
      s /= 2;
      ++n;
    }
    return n;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "image_size=" << image_size << "\n"
       << "gen_width=" << gen_width << "\n"
       << "gen_shared_blocks=" << gen_shared_blocks << "\n"
       << "shape_width=" << shape_width << "\n"
       << "contrast_width=" << contrast_width << "\n"
       << "disc_width=" << disc_width << "\n"
       << "disc_blocks=" << disc_blocks << "\n"
       << "sn_power_iterations=" << sn_power_iterations << "\n";
    return os.str();
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string k = line.substr(0, eq);
      const int v = std::stoi(line.substr(eq + 1));
      if (k == "image_size") cfg.image_size = v;
      else if (k == "gen_width") cfg.gen_width = v;
      else if (k == "gen_shared_blocks") cfg.gen_shared_blocks = v;
      else if (k == "shape_width") cfg.shape_width = v;
      else if (k == "contrast_width") cfg.contrast_width = v;
      else if (k == "disc_width") cfg.disc_width = v;
      else if (k == "disc_blocks") cfg.disc_blocks = v;
      else if (k == "sn_power_iterations") cfg.sn_power_iterations = v;
      else throw ConfigError("unknown model config key: " + k);
    }
    return cfg;
  }
};

// ---- layers ------------------------------------------------------------------

namespace layers {

using core::ParamSet;

template <typename T>
Tensor<T> conv_init(Shape4 shape, Rng& rng) {
  return core::random_normal<T>(shape, rng, 0.0, 0.02);
}

template <typename T>
struct Conv2d {
  Var<T> w, b;
  std::int64_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamSet<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
         std::int64_t k, std::int64_t stride_, std::int64_t pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    w = ps.add(name + ".w", conv_init<T>(Shape4{cout, cin, k, k}, rng));
    b = ps.add(name + ".b", Tensor<T>::zeros(Shape4{1, cout, 1, 1}));
  }
  Var<T> operator()(const Var<T>& x) const { return core::conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct ConvTranspose2d {
  Var<T> w, b;
  std::int64_t stride = 2, pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParamSet<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
                  std::int64_t k, std::int64_t stride_, std::int64_t pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    w = ps.add(name + ".w", conv_init<T>(Shape4{cin, cout, k, k}, rng));
    b = ps.add(name + ".b", Tensor<T>::zeros(Shape4{1, cout, 1, 1}));
  }
  Var<T> operator()(const Var<T>& x) const {
    return core::conv_transpose2d(x, w, b, stride, pad);
  }
};

template <typename T>
struct InstanceNorm {
  Var<T> gamma, beta;

  InstanceNorm() = default;
  InstanceNorm(ParamSet<T>& ps, const std::string& name, std::int64_t channels) {
    gamma = ps.add(name + ".gamma", Tensor<T>::full(Shape4{1, channels, 1, 1}, T(1)));
    beta = ps.add(name + ".beta", Tensor<T>::zeros(Shape4{1, channels, 1, 1}));
  }
  Var<T> operator()(const Var<T>& x) const { return core::instance_norm(x, gamma, beta); }
};

// conv + instance norm + LeakyReLU, the workhorse block
template <typename T>
struct ConvBlock {
  Conv2d<T> conv;
  InstanceNorm<T> norm;

  ConvBlock() = default;
  ConvBlock(ParamSet<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
            std::int64_t k, std::int64_t stride, std::int64_t pad, Rng& rng)
      : conv(ps, name + ".conv", cin, cout, k, stride, pad, rng),
        norm(ps, name + ".norm", cout) {}
  Var<T> operator()(const Var<T>& x) const { return core::leaky_relu(norm(conv(x)), T(0.2)); }
};

// nearest-neighbor upsample + conv block
template <typename T>
struct UpBlock {
  ConvBlock<T> block;

  UpBlock() = default;
  UpBlock(ParamSet<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout, Rng& rng)
      : block(ps, name, cin, cout, 3, 1, 1, rng) {}
  Var<T> operator()(const Var<T>& x) const { return block(core::upsample_nearest2(x)); }
};

// transposed-conv upsample block (shape controller decoder)
template <typename T>
struct UpTransposeBlock {
  ConvTranspose2d<T> conv;
  InstanceNorm<T> norm;

  UpTransposeBlock() = default;
  UpTransposeBlock(ParamSet<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
                   Rng& rng)
      : conv(ps, name + ".conv", cin, cout, 4, 2, 1, rng), norm(ps, name + ".norm", cout) {}
  Var<T> operator()(const Var<T>& x) const { return core::leaky_relu(norm(conv(x)), T(0.2)); }
};

// spectrally normalized convolution
template <typename T>
struct SNConv2d {
  Var<T> w, b;
  std::shared_ptr<core::SpectralState<T>> state = std::make_shared<core::SpectralState<T>>();
  std::int64_t stride = 1, pad = 0;
  int power_iterations = 1;

  SNConv2d() = default;
  SNConv2d(ParamSet<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
           std::int64_t k, std::int64_t stride_, std::int64_t pad_, int power_iters, Rng& rng)
      : stride(stride_), pad(pad_), power_iterations(power_iters) {
    w = ps.add(name + ".w", conv_init<T>(Shape4{cout, cin, k, k}, rng));
    b = ps.add(name + ".b", Tensor<T>::zeros(Shape4{1, cout, 1, 1}));
  }
  Var<T> normalized_weight(bool update) const {
    return core::spectral_normalize(w, *state, power_iterations, update);
  }
  Var<T> operator()(const Var<T>& x, bool update_sn) const {
    return core::conv2d(x, normalized_weight(update_sn), b, stride, pad);
  }
};

template <typename T>
struct LinearLayer {
  Var<T> w, b;

  LinearLayer() = default;
  LinearLayer(ParamSet<T>& ps, const std::string& name, std::int64_t fin, std::int64_t fout,
              Rng& rng) {
    w = ps.add(name + ".w", core::random_normal<T>(Shape4{fout, fin, 1, 1}, rng, 0.0, 0.02));
    b = ps.add(name + ".b", Tensor<T>::zeros(Shape4{1, fout, 1, 1}));
  }
  Var<T> operator()(const Var<T>& x) const { return core::linear(x, w, b); }
};

}  // namespace layers

// Shifted softplus whose value at 0 is exactly 1 and which stays positive.
template <typename T>
struct SoftplusOne {
  static T shift() {
    static const T z0 = [] {
      T z = std::log(std::exp(T(1)) - T(1));
      while (core::softplus_scalar(z) > T(1)) z = std::nextafter(z, T(0));
      return z;
    }();
    return z0;
  }
  static T offset() { return T(1) - core::softplus_scalar(shift()); }

  static Var<T> apply(const Var<T>& z) {
    return core::add_scalar(core::softplus_(core::add_scalar(z, shift())), offset());
  }
};

// ---- generator -----------------------------------------------------------------

template <typename T>
struct TranslationOutput {
  Var<T> x_t;  // [N,3,H,W] in (-1,1)
  Var<T> r_t;  // [N,1,H,W] in (-1,1)
};

// Dual-flow encoder/decoder with shared bottleneck blocks. Both flows are
// conditioned on the broadcast one-hot target code; the bottleneck fuses the
// two feature stacks with 1x1 convolutions and feeds a shared residual
// update back into each flow.
template <typename T>
class Generator {
 public:
  Generator() = default;
  Generator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const std::int64_t w = cfg.gen_width;
    x_stem_ = layers::ConvBlock<T>(params_, "x.stem", 3 + 2, w, 7, 1, 3, rng);
    x_down1_ = layers::ConvBlock<T>(params_, "x.down1", w, 2 * w, 4, 2, 1, rng);
    x_down2_ = layers::ConvBlock<T>(params_, "x.down2", 2 * w, 4 * w, 4, 2, 1, rng);
    r_stem_ = layers::ConvBlock<T>(params_, "r.stem", 1 + 2, w, 7, 1, 3, rng);
    r_down1_ = layers::ConvBlock<T>(params_, "r.down1", w, 2 * w, 4, 2, 1, rng);
    r_down2_ = layers::ConvBlock<T>(params_, "r.down2", 2 * w, 4 * w, 4, 2, 1, rng);
    for (int i = 0; i < cfg.gen_shared_blocks; ++i) {
      const std::string name = "shared." + std::to_string(i);
      shared_.push_back(SharedBlock{
          layers::ConvBlock<T>(params_, name + ".fuse", 8 * w, 4 * w, 1, 1, 0, rng),
          layers::Conv2d<T>(params_, name + ".mix.conv", 4 * w, 4 * w, 3, 1, 1, rng),
          layers::InstanceNorm<T>(params_, name + ".mix.norm", 4 * w)});
    }
    x_up1_ = layers::UpBlock<T>(params_, "x.up1", 4 * w, 2 * w, rng);
    x_up2_ = layers::UpBlock<T>(params_, "x.up2", 2 * w, w, rng);
    x_head_ = layers::Conv2d<T>(params_, "x.head", w, 3, 7, 1, 3, rng);
    r_up1_ = layers::UpBlock<T>(params_, "r.up1", 4 * w, 2 * w, rng);
    r_up2_ = layers::UpBlock<T>(params_, "r.up2", 2 * w, w, rng);
    r_head_ = layers::Conv2d<T>(params_, "r.head", w, 1, 7, 1, 3, rng);
  }

  // x_s [N,3,H,W], r_s [N,1,H,W], both in [-1,1]; H,W divisible by 4.
  TranslationOutput<T> forward(const Var<T>& x_s, const Var<T>& r_s, const Var<T>& t) const {
    const auto& xs = x_s.value();
    if (xs.c() != 3) throw ShapeError("generator image flow expects 3 channels");
    if (r_s.value().c() != 1) throw ShapeError("generator target flow expects 1 channel");
    if (xs.h() != r_s.value().h() || xs.w() != r_s.value().w() || xs.n() != r_s.value().n())
      throw ShapeError("generator flows must share batch and spatial shape");
    if (xs.h() % 4 != 0 || xs.w() % 4 != 0)
      throw ShapeError("generator input size must be divisible by 4");

    auto code = core::broadcast_hw(t, xs.h(), xs.w());
    auto fx = x_down2_(x_down1_(x_stem_(core::concat_ch(x_s, code))));
    auto fr = r_down2_(r_down1_(r_stem_(core::concat_ch(r_s, code))));
    for (const auto& blk : shared_) {
      auto h = blk.fuse(core::concat_ch(fx, fr));
      auto res = blk.mix_norm(blk.mix(h));
      fx = core::leaky_relu(core::add(fx, res), T(0.2));
      fr = core::leaky_relu(core::add(fr, res), T(0.2));
    }
    TranslationOutput<T> out;
    out.x_t = core::tanh_(x_head_(x_up2_(x_up1_(fx))));
    out.r_t = core::tanh_(r_head_(r_up2_(r_up1_(fr))));
    return out;
  }

  // Segmentation branch: run the generator with the channel-mean of x as the
  // target-flow input and keep only the r output.
  Var<T> seg(const Var<T>& x, const Var<T>& t) const {
    return forward(x, core::mean_channels(x), t).r_t;
  }

  core::ParamSet<T>& params() { return params_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  struct SharedBlock {
    layers::ConvBlock<T> fuse;
    layers::Conv2d<T> mix;
    layers::InstanceNorm<T> mix_norm;
  };

  ModelConfig cfg_;
  core::ParamSet<T> params_;
  layers::ConvBlock<T> x_stem_, x_down1_, x_down2_;
  layers::ConvBlock<T> r_stem_, r_down1_, r_down2_;
  std::vector<SharedBlock> shared_;
  layers::UpBlock<T> x_up1_, x_up2_;
  layers::UpBlock<T> r_up1_, r_up2_;
  layers::Conv2d<T> x_head_, r_head_;
};

// ---- shape controller ----------------------------------------------------------

// Downsampling conv blocks, then transposed-convolution upsampling back to
// input size; sigmoid head gives a soft foreground mask.
template <typename T>
class ShapeController {
 public:
  ShapeController() = default;
  ShapeController(const ModelConfig& cfg, Rng& rng) {
    const std::int64_t w = cfg.shape_width;
    down1_ = layers::ConvBlock<T>(params_, "down1", 1, w, 4, 2, 1, rng);
    down2_ = layers::ConvBlock<T>(params_, "down2", w, 2 * w, 4, 2, 1, rng);
    mid_ = layers::ConvBlock<T>(params_, "mid", 2 * w, 2 * w, 3, 1, 1, rng);
    up1_ = layers::UpTransposeBlock<T>(params_, "up1", 2 * w, w, rng);
    up2_ = layers::UpTransposeBlock<T>(params_, "up2", w, w, rng);
    head_ = layers::Conv2d<T>(params_, "head", w, 1, 3, 1, 1, rng);
  }

  Var<T> forward(const Var<T>& r_t) const {
    if (r_t.value().c() != 1) throw ShapeError("shape controller expects 1 channel");
    if (r_t.value().h() % 4 != 0 || r_t.value().w() % 4 != 0)
      throw ShapeError("shape controller input size must be divisible by 4");
    return core::sigmoid_(head_(up2_(up1_(mid_(down2_(down1_(r_t)))))));
  }

  core::ParamSet<T>& params() { return params_; }

 private:
  core::ParamSet<T> params_;
  layers::ConvBlock<T> down1_, down2_, mid_;
  layers::UpTransposeBlock<T> up1_, up2_;
  layers::Conv2d<T> head_;
};

// ---- contrast network ------------------------------------------------------------

// conv -> max pool -> conv -> three fully connected layers; heads map to
// (contrast, sharpness, gamma) with identity (1,0,1) at zero parameters.
template <typename T>
class ContrastNet {
 public:
  ContrastNet() = default;
  ContrastNet(const ModelConfig& cfg, Rng& rng) : image_size_(cfg.image_size) {
    const std::int64_t w = cfg.contrast_width;
    const std::int64_t s = cfg.image_size / 8;  // conv s2, pool s2, conv s2
    if (s < 1) throw ConfigError("contrast net needs image_size >= 8");
    conv1_ = layers::Conv2d<T>(params_, "conv1", 3, w, 4, 2, 1, rng);
    conv2_ = layers::Conv2d<T>(params_, "conv2", w, 2 * w, 4, 2, 1, rng);
    flat_dim_ = 2 * w * s * s;
    fc1_ = layers::LinearLayer<T>(params_, "fc1", flat_dim_, 64, rng);
    fc2_ = layers::LinearLayer<T>(params_, "fc2", 64, 32, rng);
    fc3_ = layers::LinearLayer<T>(params_, "fc3", 32, 3, rng);
  }

  // x_t [N,3,S,S] -> factors [N,3,1,1]: (contrast, sharpness, gamma)
  Var<T> forward(const Var<T>& x_t) const {
    const auto& xv = x_t.value();
    if (xv.c() != 3) throw ShapeError("contrast net expects 3 channels");
    if (xv.h() != image_size_ || xv.w() != image_size_)
      throw ShapeError("contrast net configured for " + std::to_string(image_size_) + "x" +
                       std::to_string(image_size_) + ", got " + std::to_string(xv.h()) + "x" +
                       std::to_string(xv.w()));
    auto h = core::leaky_relu(conv1_(x_t), T(0.2));
    h = core::maxpool2(h);
    h = core::leaky_relu(conv2_(h), T(0.2));
    h = core::reshape(h, Shape4{xv.n(), flat_dim_, 1, 1});
    h = core::leaky_relu(fc1_(h), T(0.2));
    h = core::leaky_relu(fc2_(h), T(0.2));
    auto z = fc3_(h);
    auto contrast = SoftplusOne<T>::apply(core::slice_ch(z, 0, 1));
    auto sharpness = core::relu(core::slice_ch(z, 1, 1));
    auto gamma = SoftplusOne<T>::apply(core::slice_ch(z, 2, 1));
    return core::concat_ch(core::concat_ch(contrast, sharpness), gamma);
  }

  core::ParamSet<T>& params() { return params_; }

 private:
  std::int64_t image_size_ = 0;
  std::int64_t flat_dim_ = 0;
  core::ParamSet<T> params_;
  layers::Conv2d<T> conv1_, conv2_;
  layers::LinearLayer<T> fc1_, fc2_, fc3_;
};

// Contrast recentering around the per-sample mean, then gamma on the [0,1]
// scale, then unsharp masking; clipped back to [-1,1]. Differentiable a.e.
// in both the image and the factors. Each stage is written in delta form,
// u + (factor-dependent delta), so identity factors reproduce the input
// bit-exactly instead of accumulating remap rounding.
template <typename T>
Var<T> apply_enhancement(const Var<T>& x, const Var<T>& factors) {
  if (factors.value().c() != 3 || factors.value().n() != x.value().n())
    throw ShapeError("apply_enhancement expects per-sample (contrast, sharpness, gamma)");
  auto contrast = core::slice_ch(factors, 0, 1);
  auto sharpness = core::slice_ch(factors, 1, 1);
  auto gamma = core::slice_ch(factors, 2, 1);

  // contrast: u <- mean + c*(u - mean), as u + (c-1)*(u - mean)
  auto m = core::mean_per_sample(x);
  auto h = core::add(x, core::mul(core::add_scalar(contrast, T(-1)), core::sub(x, m)));
  // gamma on the [0,1] scale: u <- clip(u)^g, applied as a delta
  auto u = core::affine(h, T(0.5), T(0.5));
  auto v = core::pow_(core::clamp(u, T(1e-4), T(1)), gamma);
  h = core::add(h, core::mul_scalar(core::sub(v, u), T(2)));
  // unsharp masking: u <- u + s*(u - blur(u))
  h = core::add(h, core::mul(sharpness, core::sub(h, core::boxblur3(h))));
  return core::clamp(h, T(-1), T(1));
}

// ---- discriminators -----------------------------------------------------------

template <typename T>
struct DiscriminatorOutput {
  Var<T> adv;     // [N,1,h,w] critic map
  Var<T> logits;  // [N,2,1,1] modality logits
};

// Stack of spectrally normalized stride-2 convolutions with LeakyReLU. The
// critic head is a 3x3 stride-1 convolution; the modality head collapses the
// remaining spatial extent with a kernel of that exact size.
template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const ModelConfig& cfg, std::int64_t in_channels, Rng& rng)
      : in_channels_(in_channels) {
    const int blocks = cfg.resolved_disc_blocks();
    const std::int64_t w = cfg.disc_width;
    std::int64_t cin = in_channels;
    std::int64_t size = cfg.image_size;
    for (int i = 0; i < blocks; ++i) {
      const std::int64_t cout = std::min<std::int64_t>(w << i, 8 * w);
      blocks_.push_back(layers::SNConv2d<T>(params_, "block" + std::to_string(i), cin, cout, 4, 2,
                                            1, cfg.sn_power_iterations, rng));
      cin = cout;
      size /= 2;
    }
    if (size < 1) throw ConfigError("discriminator depth collapses the input");
    map_size_ = size;
    adv_head_ = layers::SNConv2d<T>(params_, "adv", cin, 1, 3, 1, 1, cfg.sn_power_iterations, rng);
    cls_head_ = layers::SNConv2d<T>(params_, "cls", cin, 2, size, 1, 0, cfg.sn_power_iterations,
                                    rng);
  }

  DiscriminatorOutput<T> forward(const Var<T>& z, bool update_sn) const {
    if (z.value().c() != in_channels_)
      throw ShapeError("discriminator expects " + std::to_string(in_channels_) +
                       " channels, got " + std::to_string(z.value().c()));
    auto h = z;
    for (const auto& blk : blocks_) h = core::leaky_relu(blk(h, update_sn), T(0.2));
    DiscriminatorOutput<T> out;
    out.adv = adv_head_(h, update_sn);
    out.logits = cls_head_(h, update_sn);
    return out;
  }

  std::int64_t critic_map_size() const { return map_size_; }
  core::ParamSet<T>& params() { return params_; }

  // Every spectrally normalized kernel, for the SVD oracle in tests.
  std::vector<const layers::SNConv2d<T>*> sn_layers() const {
    std::vector<const layers::SNConv2d<T>*> out;
    for (const auto& blk : blocks_) out.push_back(&blk);
    out.push_back(&adv_head_);
    out.push_back(&cls_head_);
    return out;
  }

 private:
  std::int64_t in_channels_ = 3;
  std::int64_t map_size_ = 0;
  core::ParamSet<T> params_;
  std::vector<layers::SNConv2d<T>> blocks_;
  layers::SNConv2d<T> adv_head_, cls_head_;
};

// ---- model bundle -----------------------------------------------------------

// The four networks plus their configuration, built from one seed.
template <typename T>
struct Networks {
  ModelConfig cfg;
  Generator<T> G;
  ShapeController<T> S;
  ContrastNet<T> C;
  Discriminator<T> Dx;  // image flow, 3 channels
  Discriminator<T> Dr;  // target flow, 1 channel

  Networks() = default;
  Networks(const ModelConfig& cfg_, std::uint64_t seed) : cfg(cfg_) {
    Rng rng(core::Rng::derive(seed, 0xA11CE));
    G = Generator<T>(cfg, rng);
    S = ShapeController<T>(cfg, rng);
    C = ContrastNet<T>(cfg, rng);
    Dx = Discriminator<T>(cfg, 3, rng);
    Dr = Discriminator<T>(cfg, 1, rng);
  }

  // IR images are stored 1-channel; the image flow always runs 3-channel.
  static Var<T> to_image_flow(const Var<T>& image) {
    if (image.value().c() == 3) return image;
    if (image.value().c() != 1) throw ShapeError("image must have 1 or 3 channels");
    return core::concat_ch(core::concat_ch(image, image), image);
  }
};

namespace detail {

template <typename T>
void save_params(core::TensorStore& store, const std::string& prefix, core::ParamSet<T>& ps) {
  for (auto& [name, var] : ps.items) store.put(prefix + name, var.value().template cast<float>());
}

template <typename T>
void load_params(const core::TensorStore& store, const std::string& prefix,
                 core::ParamSet<T>& ps) {
  for (auto& [name, var] : ps.items) {
    const auto& t = store.require(prefix + name);
    if (t.shape() != var.value().shape())
      throw IoError("checkpoint tensor shape mismatch for " + prefix + name);
    var.value() = t.template cast<T>();
  }
}

template <typename T>
void save_sn(core::TensorStore& store, const std::string& prefix, const Discriminator<T>& d) {
  int i = 0;
  for (const auto* layer : d.sn_layers()) {
    if (!layer->state->u.empty()) {
      Tensor<float> u(Shape4{static_cast<std::int64_t>(layer->state->u.size()), 1, 1, 1});
      for (std::size_t j = 0; j < layer->state->u.size(); ++j)
        u[static_cast<std::int64_t>(j)] = static_cast<float>(layer->state->u[j]);
      store.put(prefix + "sn_u." + std::to_string(i), std::move(u));
    }
    ++i;
  }
}

template <typename T>
void load_sn(const core::TensorStore& store, const std::string& prefix, Discriminator<T>& d) {
  int i = 0;
  for (const auto* layer : d.sn_layers()) {
    if (const auto* u = store.find(prefix + "sn_u." + std::to_string(i))) {
      layer->state->u.resize(static_cast<std::size_t>(u->numel()));
      for (std::int64_t j = 0; j < u->numel(); ++j)
        layer->state->u[static_cast<std::size_t>(j)] = static_cast<T>((*u)[j]);
    }
    ++i;
  }
}

}  // namespace detail

inline constexpr char kCheckpointSchema[] = "stawgan-checkpoint-v1";

template <typename T>
void save_networks(core::TensorStore& store, Networks<T>& nets) {
  store.meta["schema"] = kCheckpointSchema;
  store.meta["model_config"] = nets.cfg.to_text();
  store.meta["config_hash"] = std::to_string(core::fnv1a(nets.cfg.to_text()));
  detail::save_params(store, "G.", nets.G.params());
  detail::save_params(store, "S.", nets.S.params());
  detail::save_params(store, "C.", nets.C.params());
  detail::save_params(store, "Dx.", nets.Dx.params());
  detail::save_params(store, "Dr.", nets.Dr.params());
  detail::save_sn(store, "Dx.", nets.Dx);
  detail::save_sn(store, "Dr.", nets.Dr);
}

template <typename T>
Networks<T> load_networks(const core::TensorStore& store) {
  auto it = store.meta.find("schema");
  if (it == store.meta.end() || it->second != kCheckpointSchema)
    throw IoError("checkpoint schema mismatch (expected " + std::string(kCheckpointSchema) + ")");
  ModelConfig cfg = ModelConfig::from_text(store.meta.at("model_config"));
  Networks<T> nets(cfg, 0);
  detail::load_params(store, "G.", nets.G.params());
  detail::load_params(store, "S.", nets.S.params());
  detail::load_params(store, "C.", nets.C.params());
  detail::load_params(store, "Dx.", nets.Dx.params());
  detail::load_params(store, "Dr.", nets.Dr.params());
  detail::load_sn(store, "Dx.", nets.Dx);
  detail::load_sn(store, "Dr.", nets.Dr);
  return nets;
}

}  // namespace stawgan::models
