#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stawgan/core/nn_ops.hpp"
#include "stawgan/core/tensor.hpp"
#include "stawgan/dataset.hpp"
#include "stawgan/errors.hpp"
#include "stawgan/losses.hpp"
#include "stawgan/models.hpp"

namespace stawgan::metrics {

using core::Shape4;
using core::Tensor;

// ---- feature statistics and FID ---------------------------------------------

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  // Unbiased covariance over feature rows (N x D, N >= 2).
  static FeatureStats from_features(const std::vector<std::vector<double>>& rows) {
    if (rows.size() < 2) throw ValidationError("FeatureStats needs at least 2 samples");
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = static_cast<Eigen::Index>(rows[0].size());
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != d)
        throw ValidationError("inconsistent feature dimensions");
      for (Eigen::Index j = 0; j < d; ++j)
        x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    FeatureStats s;
    s.mean = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
    s.cov = centered.transpose() * centered / static_cast<double>(n - 1);
    return s;
  }
};

namespace detail {

// Symmetric PSD square root via eigendecomposition; small negative
// eigenvalues from roundoff are clamped to zero.
inline Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd sym = (m + m.transpose()) / 2.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

// Frechet distance between two Gaussian fits:
// |mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).
inline double fid(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size() != b.mean.size())
    throw ValidationError("fid: feature dimension mismatch " + std::to_string(a.mean.size()) +
                          " vs " + std::to_string(b.mean.size()));
  const double mean_term = (a.mean - b.mean).squaredNorm();
  // Tr((S1 S2)^{1/2}) computed through the symmetric form A S2 A, A = S1^{1/2}
  Eigen::MatrixXd root_a = detail::sqrtm_psd(a.cov);
  Eigen::MatrixXd inner = root_a * b.cov * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig((inner + inner.transpose()) / 2.0);
  const double tr_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
}

// ---- scalar metrics -----------------------------------------------------------

// exp(mean_n KL(p(y|x_n) || p(y))), p(y) the row mean.
inline double inception_score(const std::vector<std::vector<double>>& class_probs) {
  if (class_probs.empty()) throw ValidationError("inception_score: no rows");
  const std::size_t c = class_probs[0].size();
  std::vector<double> marginal(c, 0.0);
  for (const auto& row : class_probs) {
    if (row.size() != c) throw ValidationError("inception_score: ragged rows");
    double sum = 0;
    for (double p : row) {
      if (p < 0) throw ValidationError("inception_score: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-5)
      throw ValidationError("inception_score: row sums to " + std::to_string(sum));
    for (std::size_t j = 0; j < c; ++j) marginal[j] += row[j];
  }
  for (double& m : marginal) m /= static_cast<double>(class_probs.size());

  double mean_kl = 0;
  for (const auto& row : class_probs) {
    double kl = 0;
    for (std::size_t j = 0; j < c; ++j)
      if (row[j] > 0) kl += row[j] * std::log(row[j] / marginal[j]);
    mean_kl += kl;
  }
  mean_kl /= static_cast<double>(class_probs.size());
  return std::exp(mean_kl);
}

// 10 log10(R^2 / MSE); identical images report the +infinity sentinel.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double data_range) {
  core::check_same_shape(a.shape(), b.shape(), "psnr");
  double mse = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

// Dice similarity coefficient in percent; two empty masks agree perfectly.
template <typename T>
double dsc(const Tensor<T>& pred, const Tensor<T>& truth) {
  core::check_same_shape(pred.shape(), truth.shape(), "dsc");
  double inter = 0, size_a = 0, size_b = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const bool pa = pred[i] > T(0.5), pb = truth[i] > T(0.5);
    inter += (pa && pb) ? 1 : 0;
    size_a += pa ? 1 : 0;
    size_b += pb ? 1 : 0;
  }
  if (size_a + size_b == 0) return 100.0;
  return 100.0 * 2.0 * inter / (size_a + size_b);
}

// Mean absolute error between masks on the [0,1] scale.
template <typename T>
double mae(const Tensor<T>& pred, const Tensor<T>& truth) {
  core::check_same_shape(pred.shape(), truth.shape(), "mae");
  double acc = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i)
    acc += std::abs(static_cast<double>(pred[i]) - static_cast<double>(truth[i]));
  return acc / static_cast<double>(pred.numel());
}

template <typename T>
Tensor<T> binarize(const Tensor<T>& x, T threshold) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > threshold ? T(1) : T(0);
  return out;
}

// Segmentation score: DSC between the binarized segmentation branch output
// on the translated image and the ground-truth mask.
template <typename T>
double s_score(const models::Generator<T>& g, const Tensor<T>& x_t, const Tensor<T>& truth,
               const models::DomainCode& t) {
  auto x = models::Networks<T>::to_image_flow(core::constant(x_t));
  auto seg = g.seg(x, domain_code_tensor<T>(t, x_t.n()));
  return dsc(binarize(seg.value(), T(0)), truth);
}

// ---- pluggable backbones -------------------------------------------------------

// Feature extractor / classifier over [1,3,S,S] images in [-1,1].
using FeatureExtractor = std::function<std::vector<double>(const Tensor<float>&)>;
using Classifier = std::function<std::vector<double>(const Tensor<float>&)>;

// Fixed-seed random CNN: three stride-2 convolutions with LeakyReLU and a
// global average pool. Deterministic, needs no downloads; FID/IS values in
// this feature space are comparable only within one build of this library.
class RandomFeatureNet {
 public:
  RandomFeatureNet(std::uint64_t seed, int input_size, int feature_dim = 32)
      : input_size_(input_size), feature_dim_(feature_dim) {
    core::Rng rng(core::Rng::derive(seed, 0xFEA7));
    w1_ = core::random_normal<float>(Shape4{8, 3, 4, 4}, rng, 0.0, 0.2);
    w2_ = core::random_normal<float>(Shape4{16, 8, 4, 4}, rng, 0.0, 0.2);
    w3_ = core::random_normal<float>(Shape4{feature_dim, 16, 4, 4}, rng, 0.0, 0.2);
    cls_w_ = core::random_normal<float>(Shape4{data::kNumClasses, feature_dim, 1, 1}, rng, 0.0,
                                        0.6);
  }

  std::vector<double> features(const Tensor<float>& image) const {
    Tensor<float> x = prepare(image);
    auto v = core::constant(x);
    auto none = core::Var<float>();
    auto h = core::leaky_relu(core::conv2d(v, core::constant(w1_), none, 2, 1), 0.2f);
    h = core::leaky_relu(core::conv2d(h, core::constant(w2_), none, 2, 1), 0.2f);
    h = core::leaky_relu(core::conv2d(h, core::constant(w3_), none, 2, 1), 0.2f);
    const auto& t = h.value();
    std::vector<double> out(static_cast<std::size_t>(t.c()), 0.0);
    const std::int64_t hw = t.h() * t.w();
    for (std::int64_t c = 0; c < t.c(); ++c) {
      double acc = 0;
      for (std::int64_t j = 0; j < hw; ++j) acc += t[c * hw + j];
      out[static_cast<std::size_t>(c)] = acc / static_cast<double>(hw);
    }
    return out;
  }

  std::vector<double> class_probs(const Tensor<float>& image) const {
    auto f = features(image);
    std::vector<double> logits(data::kNumClasses, 0.0);
    for (int k = 0; k < data::kNumClasses; ++k)
      for (std::size_t j = 0; j < f.size(); ++j)
        logits[static_cast<std::size_t>(k)] +=
            static_cast<double>(cls_w_.at(k, static_cast<std::int64_t>(j), 0, 0)) * f[j];
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (double& z : logits) {
      z = std::exp(z - zmax);
      sum += z;
    }
    for (double& z : logits) z /= sum;
    return logits;
  }

 private:
  Tensor<float> prepare(const Tensor<float>& image) const {
    Tensor<float> x = image;
    if (x.c() == 1) {
      Tensor<float> r(Shape4{1, 3, x.h(), x.w()});
      for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t j = 0; j < x.h() * x.w(); ++j) r[c * x.h() * x.w() + j] = x[j];
      x = std::move(r);
    }
    if (x.h() != input_size_ || x.w() != input_size_) {
      data::ImageU8 img = data::to_image_raw(data::denormalize(x));
      img = data::resize_bilinear(img, input_size_, input_size_);
      x = data::normalize(data::to_tensor_raw(img));
    }
    return x;
  }

  int input_size_;
  int feature_dim_;
  Tensor<float> w1_, w2_, w3_, cls_w_;
};

// ---- evaluation ----------------------------------------------------------------

struct MetricReport {
  double fid = 0;
  double is_mean = 0;
  double psnr_db = 0;
  double ssim = 0;
  double dsc_percent = 0;
  double s_score_percent = 0;
  double mae = 0;

  std::string to_table() const {
    std::ostringstream os;
    os << "metric            value\n"
       << "FID               " << fid << "\n"
       << "IS                " << is_mean << "\n"
       << "PSNR (dB)         " << psnr_db << "\n"
       << "SSIM              " << ssim << "\n"
       << "DSC (%)           " << dsc_percent << "\n"
       << "S-score (%)       " << s_score_percent << "\n"
       << "MAE               " << mae << "\n";
    return os.str();
  }

  std::string to_keyvalues() const {
    std::ostringstream os;
    os << "fid=" << fid << "\nis_mean=" << is_mean << "\npsnr_db=" << psnr_db
       << "\nssim=" << ssim << "\ndsc_percent=" << dsc_percent
       << "\ns_score_percent=" << s_score_percent << "\nmae=" << mae << "\n";
    return os.str();
  }

  void save(const std::string& path) const {
    namespace fs = std::filesystem;
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write metric report: " + path);
    os << to_keyvalues();
  }
};

// One translation result: the translated image (3-channel), its target-flow
// output, and the segmentation of the translated image.
struct Translation {
  Tensor<float> x_t;  // [1,3,S,S]
  Tensor<float> r_t;  // [1,1,S,S]
  Tensor<float> seg;  // [1,1,S,S]
};

using TranslateFn =
    std::function<Translation(const data::ImageSample&, data::Domain target)>;

struct EvalOptions {
  int image_size = 256;
  losses::SsimOptions ssim;
};

// Runs every validation record through both translation directions and
// aggregates all seven metrics. Deterministic given weights and manifest
// order. Requires a paired manifest (PSNR/SSIM/FID need real counterparts).
inline MetricReport evaluate(const TranslateFn& translate, const data::DatasetManifest& manifest,
                             const FeatureExtractor& extractor, const Classifier& classifier,
                             const EvalOptions& opts = {}) {
  if (manifest.records.empty()) throw ValidationError("evaluate: empty manifest");
  if (!manifest.paired) throw ConfigError("evaluate requires a paired manifest");

  std::vector<std::vector<double>> real_feats[2], fake_feats[2];
  std::vector<std::vector<double>> probs;
  std::vector<double> psnrs, ssims, dscs, sscores, maes;

  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    for (data::Domain source : {data::Domain::IR, data::Domain::RGB}) {
      const data::Domain target = data::other_domain(source);
      data::LoadOptions lo;
      lo.image_size = opts.image_size;
      lo.source = source;
      auto sample = data::load_pair(manifest, i, lo);
      Translation tr = translate(sample, target);

      const auto ti = static_cast<int>(target);
      fake_feats[ti].push_back(extractor(tr.x_t));
      real_feats[ti].push_back(extractor(*sample.paired_image));
      probs.push_back(classifier(tr.x_t));

      // fidelity against the paired ground truth, in the target domain's
      // native channel count
      Tensor<float> want = *sample.paired_image;
      Tensor<float> got = tr.x_t;
      if (want.c() == 1) got = core::mean_channels(core::constant(got)).value();
      psnrs.push_back(psnr(got, want, 2.0));
      ssims.push_back(losses::ssim_value(got, want, opts.ssim));

      auto pred_mask = binarize(tr.r_t, 0.0f);
      dscs.push_back(dsc(pred_mask, sample.target_label));
      maes.push_back(mae(pred_mask, sample.target_label));
      sscores.push_back(dsc(binarize(tr.seg, 0.0f), sample.target_label));
    }
  }

  auto mean_of = [](const std::vector<double>& v) {
    double acc = 0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
  };

  MetricReport rep;
  double fid_sum = 0;
  int fid_n = 0;
  for (int d = 0; d < 2; ++d) {
    if (real_feats[d].size() >= 2) {
      fid_sum += fid(FeatureStats::from_features(real_feats[d]),
                     FeatureStats::from_features(fake_feats[d]));
      ++fid_n;
    }
  }
  rep.fid = fid_n > 0 ? fid_sum / fid_n : 0.0;
  rep.is_mean = inception_score(probs);
  rep.psnr_db = mean_of(psnrs);
  rep.ssim = mean_of(ssims);
  rep.dsc_percent = mean_of(dscs);
  rep.s_score_percent = mean_of(sscores);
  rep.mae = mean_of(maes);
  return rep;
}

// The generator-backed translator used by the CLI and trainer validation.
template <typename T>
TranslateFn make_translator(const models::Networks<T>& nets) {
  return [&nets](const data::ImageSample& sample, data::Domain target) {
    auto x = models::Networks<T>::to_image_flow(core::constant(sample.image.template cast<T>()));
    auto r = core::constant(sample.target_mask.template cast<T>());
    auto code = models::DomainCode::of(target);
    auto t = models::domain_code_tensor<T>(code, 1);
    auto out = nets.G.forward(x, r, t);
    Translation tr;
    tr.x_t = out.x_t.value().template cast<float>();
    tr.r_t = out.r_t.value().template cast<float>();
    tr.seg = nets.G.seg(core::constant(out.x_t.value()), t).value().template cast<float>();
    return tr;
  };
}

}  // namespace stawgan::metrics
