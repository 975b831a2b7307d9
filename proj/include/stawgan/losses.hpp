#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stawgan/core/autodiff.hpp"
#include "stawgan/core/nn_ops.hpp"
#include "stawgan/core/tensor.hpp"
#include "stawgan/errors.hpp"

namespace stawgan::losses {

using core::Shape4;
using core::Tensor;
using core::Var;

// All lambda hyperparameters of the composite objective. lambda_ssim is the
// configured weight; the training schedule zeroes it before the DSSIM start
// epoch.
struct LossWeights {
  double lambda_u = 1.0;
  double lambda_cls_r = 1.0;
  double lambda_cls_f = 1.0;
  double lambda_rec = 10.0;
  double lambda_cross = 25.0;
  double lambda_l1 = 1.0;
  double lambda_ssim = 1.0;
  double lambda_shape = 1.0;

  void validate() const {
    for (double v : {lambda_u, lambda_cls_r, lambda_cls_f, lambda_rec, lambda_cross, lambda_l1,
                     lambda_ssim, lambda_shape})
      if (v < 0.0 || !std::isfinite(v))
        throw ValidationError("loss weights must be finite and non-negative");
  }
};

enum class AdvMode { Wasserstein, Hinge, BCE };

inline const char* adv_mode_name(AdvMode m) {
  switch (m) {
    case AdvMode::Wasserstein: return "wasserstein";
    case AdvMode::Hinge: return "hinge";
    case AdvMode::BCE: return "bce";
  }
  return "wasserstein";
}

inline AdvMode adv_mode_from_name(const std::string& s) {
  if (s == "wasserstein") return AdvMode::Wasserstein;
  if (s == "hinge") return AdvMode::Hinge;
  if (s == "bce") return AdvMode::BCE;
  throw ConfigError("unknown adversarial mode: " + s);
}

// Critic objective L_adv = mean(D_real) - mean(D_fake). The discriminator
// minimizes its negation; Lipschitz control is delegated to spectral
// normalization.
template <typename T>
Var<T> adv_critic_value(const Var<T>& d_real, const Var<T>& d_fake) {
  core::check_same_shape(d_real.value().shape(), d_fake.value().shape(), "adv_critic_value");
  return core::sub(core::mean_all(d_real), core::mean_all(d_fake));
}

// (discriminator term, generator term) for the configured adversarial mode.
// The discriminator minimizes .first, the generator minimizes .second; the
// generator term uses only the fake half.
template <typename T>
std::pair<Var<T>, Var<T>> adv_losses(const Var<T>& d_real, const Var<T>& d_fake,
                                     AdvMode mode = AdvMode::Wasserstein) {
  core::check_same_shape(d_real.value().shape(), d_fake.value().shape(), "adv_losses");
  switch (mode) {
    case AdvMode::Wasserstein: {
      auto critic = adv_critic_value(d_real, d_fake);
      return {core::neg(critic), core::neg(core::mean_all(d_fake))};
    }
    case AdvMode::Hinge: {
      auto d = core::add(core::mean_all(core::relu(core::affine(d_real, T(-1), T(1)))),
                         core::mean_all(core::relu(core::add_scalar(d_fake, T(1)))));
      return {d, core::neg(core::mean_all(d_fake))};
    }
    case AdvMode::BCE: {
      auto d = core::add(core::mean_all(core::softplus_(core::neg(d_real))),
                         core::mean_all(core::softplus_(d_fake)));
      return {d, core::mean_all(core::softplus_(core::neg(d_fake)))};
    }
  }
  throw ConfigError("unreachable adversarial mode");
}

// Modality classification loss on real inputs plus the lambda_u-weighted
// term on translated inputs labeled with their source domain.
template <typename T>
Var<T> cls_loss_real(const Var<T>& logits_real, const std::vector<int>& s,
                     const Var<T>& logits_translated, const std::vector<int>& s_source,
                     T lambda_u) {
  auto real_term = core::nll_logits(logits_real, s);
  if (lambda_u == T(0)) return real_term;
  auto translated_term = core::nll_logits(logits_translated, s_source);
  return core::add(real_term, core::mul_scalar(translated_term, lambda_u));
}

// Modality classification loss on translated samples labeled with the
// target domain; the generator's side.
template <typename T>
Var<T> cls_loss_fake(const Var<T>& logits_fake, const std::vector<int>& t) {
  return core::nll_logits(logits_fake, t);
}

// Mean squared error between the foreground mask and the shape-controller
// output.
template <typename T>
Var<T> shape_loss(const Var<T>& b_x, const Var<T>& s_out) {
  core::check_same_shape(b_x.value().shape(), s_out.value().shape(), "shape_loss");
  return core::mse_loss(b_x, s_out);
}

// ---- SSIM ---------------------------------------------------------------------

template <typename T>
Tensor<T> gaussian_window(std::int64_t window, double sigma) {
  if (window < 3 || window % 2 == 0)
    throw ValidationError("SSIM window must be odd and >= 3, got " + std::to_string(window));
  Tensor<T> k(Shape4{1, 1, window, window});
  const double c = (window - 1) / 2.0;
  double sum = 0;
  for (std::int64_t i = 0; i < window; ++i)
    for (std::int64_t j = 0; j < window; ++j) {
      const double d2 = (i - c) * (i - c) + (j - c) * (j - c);
      const double v = std::exp(-d2 / (2.0 * sigma * sigma));
      k[i * window + j] = static_cast<T>(v);
      sum += v;
    }
  for (std::int64_t i = 0; i < window * window; ++i)
    k[i] = static_cast<T>(static_cast<double>(k[i]) / sum);
  return k;
}

struct SsimOptions {
  std::int64_t window = 11;
  double sigma = 1.5;
  double data_range = 2.0;  // images live in [-1,1]
};

// Gaussian-weighted SSIM over valid windows, averaged over windows and
// channels. Differentiable in both images.
template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b, const SsimOptions& opts = {}) {
  core::check_same_shape(a.value().shape(), b.value().shape(), "ssim");
  const Tensor<T> win = gaussian_window<T>(opts.window, opts.sigma);
  const T c1 = static_cast<T>(std::pow(0.01 * opts.data_range, 2));
  const T c2 = static_cast<T>(std::pow(0.03 * opts.data_range, 2));

  auto mu_a = core::window_conv_valid(a, win);
  auto mu_b = core::window_conv_valid(b, win);
  auto mu_aa = core::mul(mu_a, mu_a);
  auto mu_bb = core::mul(mu_b, mu_b);
  auto mu_ab = core::mul(mu_a, mu_b);
  auto var_a = core::sub(core::window_conv_valid(core::mul(a, a), win), mu_aa);
  auto var_b = core::sub(core::window_conv_valid(core::mul(b, b), win), mu_bb);
  auto cov = core::sub(core::window_conv_valid(core::mul(a, b), win), mu_ab);

  auto num = core::mul(core::add_scalar(core::mul_scalar(mu_ab, T(2)), c1),
                       core::add_scalar(core::mul_scalar(cov, T(2)), c2));
  auto den = core::mul(core::add_scalar(core::add(mu_aa, mu_bb), c1),
                       core::add_scalar(core::add(var_a, var_b), c2));
  return core::mean_all(core::div(num, den));
}

// Plain-number SSIM for evaluation; same implementation underneath.
template <typename T>
double ssim_value(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& opts = {}) {
  return static_cast<double>(ssim(core::constant(a), core::constant(b), opts).item());
}

// Structural dissimilarity (1 - SSIM)/2 between the paired ground truth and
// the translated image. Pairing availability is the caller's contract.
template <typename T>
Var<T> dssim_loss(const Var<T>& x_paired, const Var<T>& x_t, const SsimOptions& opts = {}) {
  return core::affine(ssim(x_paired, x_t, opts), T(-0.5), T(0.5));
}

// Cycle reconstruction: mean absolute error plus the optional DSSIM term
// (image flow only).
template <typename T>
Var<T> rec_loss(const Var<T>& z_s, const Var<T>& z_s_reconstructed,
                std::optional<Var<T>> ssim_term = std::nullopt, T lambda_ssim = T(0)) {
  core::check_same_shape(z_s.value().shape(), z_s_reconstructed.value().shape(), "rec_loss");
  auto l1 = core::l1_loss(z_s, z_s_reconstructed);
  if (!ssim_term.has_value() || lambda_ssim == T(0)) return l1;
  return core::add(l1, core::mul_scalar(*ssim_term, lambda_ssim));
}

// Crossing loss: ties the masked translated image (channel-mean) to the
// target-flow output.
template <typename T>
Var<T> cross_loss(const Var<T>& x_t, const Var<T>& r_t, const Var<T>& y) {
  const auto& xs = x_t.value().shape();
  const auto& rs = r_t.value().shape();
  const auto& ys = y.value().shape();
  if (xs[0] != rs[0] || xs[2] != rs[2] || xs[3] != rs[3] || rs[1] != 1)
    throw ShapeError("cross_loss: r_t must be [N,1,H,W] matching x_t");
  if (ys != rs) throw ShapeError("cross_loss: y must match r_t's shape");
  auto masked = core::mul(core::mean_channels(x_t), y);
  return core::l1_loss(masked, r_t);
}

// L1 between the enhanced fake and the paired ground truth; shared by the
// generator and contrast-network objectives.
template <typename T>
Var<T> l1_enhancement_loss(const Var<T>& enhanced_fake, const Var<T>& x_paired) {
  core::check_same_shape(enhanced_fake.value().shape(), x_paired.value().shape(),
                         "l1_enhancement_loss");
  return core::l1_loss(enhanced_fake, x_paired);
}

// ---- composition ----------------------------------------------------------------

// Aggregated component values for one step. adv_x/adv_r hold the critic
// objective whose negation the discriminator minimizes; adv_g holds the term
// the generator minimizes. rec aggregates both flows.
struct LossComponents {
  std::optional<double> adv_x, adv_r;        // critic values per discriminator
  std::optional<double> cls_r_x, cls_r_r;    // classification on reals per discriminator
  std::optional<double> adv_g;               // generator-side adversarial term
  std::optional<double> cls_f;               // classification on fakes (generator side)
  std::optional<double> rec;                 // cycle reconstruction, flows summed
  std::optional<double> cross;
  std::optional<double> l1;
  std::optional<double> shape;
};

struct ObjectiveTotals {
  std::optional<double> loss_d_x, loss_d_r, loss_g, loss_gs, loss_c;
};

namespace detail {
inline double req(const std::optional<double>& v, const char* name) {
  if (!v.has_value()) throw CompositionError(std::string("missing loss component: ") + name);
  return *v;
}
}  // namespace detail

// The four composite objectives. Target-flow terms participate only when the
// flow is active; the enhancement L1 only when pairing provides it.
inline ObjectiveTotals compose_objectives(const LossComponents& c, const LossWeights& w,
                                          bool target_flow_active = true, bool paired = true) {
  w.validate();
  ObjectiveTotals t;
  t.loss_d_x = -detail::req(c.adv_x, "adv_x") + w.lambda_cls_r * detail::req(c.cls_r_x, "cls_r_x");
  if (target_flow_active)
    t.loss_d_r =
        -detail::req(c.adv_r, "adv_r") + w.lambda_cls_r * detail::req(c.cls_r_r, "cls_r_r");

  double g = detail::req(c.adv_g, "adv_g") + w.lambda_cls_f * detail::req(c.cls_f, "cls_f") +
             w.lambda_rec * detail::req(c.rec, "rec");
  if (target_flow_active) g += w.lambda_cross * detail::req(c.cross, "cross");
  if (paired) g += w.lambda_l1 * detail::req(c.l1, "l1");
  t.loss_g = g;

  if (target_flow_active) t.loss_gs = w.lambda_shape * detail::req(c.shape, "shape");
  if (paired) t.loss_c = w.lambda_l1 * detail::req(c.l1, "l1");
  return t;
}

// Per-step record of every computed term plus the composed totals. Absent
// terms (inactive flow, unpaired data) stay unset and are omitted from logs.
struct LossReport {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::string direction;  // "ir2rgb" or "rgb2ir"
  std::optional<double> adv_x, adv_r, cls_r, cls_f, rec_x, rec_r, ssim, shape, cross, l1;
  std::optional<double> loss_d_x, loss_d_r, loss_g, loss_gs, loss_c;

  std::string to_line() const {
    std::ostringstream os;
    os << "step=" << step << " epoch=" << epoch << " dir=" << direction;
    auto put = [&os](const char* k, const std::optional<double>& v) {
      if (v.has_value()) os << " " << k << "=" << *v;
    };
    put("adv_x", adv_x);
    put("adv_r", adv_r);
    put("cls_r", cls_r);
    put("cls_f", cls_f);
    put("rec_x", rec_x);
    put("rec_r", rec_r);
    put("ssim", ssim);
    put("shape", shape);
    put("cross", cross);
    put("l1", l1);
    put("loss_d_x", loss_d_x);
    put("loss_d_r", loss_d_r);
    put("loss_g", loss_g);
    put("loss_gs", loss_gs);
    put("loss_c", loss_c);
    return os.str();
  }
};

}  // namespace stawgan::losses
