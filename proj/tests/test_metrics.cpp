#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "stawgan/metrics.hpp"
#include "test_helpers.hpp"

using namespace stawgan;
using namespace stawgan::metrics;
using core::Rng;
using core::Shape4;
using core::Tensor;

namespace {

FeatureStats stats1d(double mean, double var) {
  FeatureStats s;
  s.mean = Eigen::VectorXd::Constant(1, mean);
  s.cov = Eigen::MatrixXd::Constant(1, 1, var);
  return s;
}

std::string tmpdir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("fid identities and closed forms") {
  Rng rng(3);
  SECTION("self distance is zero") {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 20; ++i) {
      std::vector<double> r(6);
      for (auto& v : r) v = rng.uniform(-2.0, 2.0);
      rows.push_back(r);
    }
    auto s = FeatureStats::from_features(rows);
    REQUIRE(std::abs(fid(s, s)) < 1e-6);
  }
  SECTION("one-dimensional Gaussian case") {
    REQUIRE(fid(stats1d(0.0, 1.0), stats1d(1.0, 1.0)) == Catch::Approx(1.0).margin(1e-6));
  }
  SECTION("diagonal covariances match the per-dimension closed form") {
    const int d = 4;
    FeatureStats a, b;
    a.mean = Eigen::VectorXd::Zero(d);
    b.mean = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd da(d), db(d);
    double want = 0;
    for (int i = 0; i < d; ++i) {
      da(i) = rng.uniform(0.2, 3.0);
      db(i) = rng.uniform(0.2, 3.0);
      a.mean(i) = rng.uniform(-1.0, 1.0);
      b.mean(i) = rng.uniform(-1.0, 1.0);
      const double dm = a.mean(i) - b.mean(i);
      want += dm * dm + da(i) + db(i) - 2.0 * std::sqrt(da(i) * db(i));
    }
    a.cov = da.asDiagonal();
    b.cov = db.asDiagonal();
    REQUIRE(fid(a, b) == Catch::Approx(want).margin(1e-9));
  }
  SECTION("symmetry") {
    std::vector<std::vector<double>> ra, rb;
    for (int i = 0; i < 15; ++i) {
      std::vector<double> x(5), y(5);
      for (auto& v : x) v = rng.uniform(-1.0, 1.0);
      for (auto& v : y) v = rng.uniform(-1.0, 2.0);
      ra.push_back(x);
      rb.push_back(y);
    }
    auto sa = FeatureStats::from_features(ra);
    auto sb = FeatureStats::from_features(rb);
    REQUIRE(fid(sa, sb) == Catch::Approx(fid(sb, sa)).margin(1e-6));
    REQUIRE(fid(sa, sb) >= -1e-9);
  }
  SECTION("dimension mismatch throws") {
    REQUIRE_THROWS_AS(fid(stats1d(0, 1), FeatureStats::from_features({{0.0, 1.0}, {1.0, 0.0},
                                                                      {0.5, 0.5}})),
                      ValidationError);
  }
}

TEST_CASE("inception score") {
  SECTION("uniform rows give exactly one") {
    std::vector<std::vector<double>> rows(7, std::vector<double>(5, 0.2));
    REQUIRE(inception_score(rows) == Catch::Approx(1.0).margin(1e-9));
  }
  SECTION("one-hot rows covering each class give the class count") {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 5; ++i) {
      std::vector<double> r(5, 0.0);
      r[static_cast<std::size_t>(i)] = 1.0;
      rows.push_back(r);
    }
    REQUIRE(inception_score(rows) == Catch::Approx(5.0).margin(1e-4));
  }
  SECTION("duplicating the dataset leaves the score unchanged") {
    Rng rng(5);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 6; ++i) {
      std::vector<double> r(5);
      double sum = 0;
      for (auto& v : r) {
        v = rng.uniform(0.01, 1.0);
        sum += v;
      }
      for (auto& v : r) v /= sum;
      rows.push_back(r);
    }
    auto doubled = rows;
    doubled.insert(doubled.end(), rows.begin(), rows.end());
    REQUIRE(inception_score(doubled) == Catch::Approx(inception_score(rows)).margin(1e-12));
  }
  SECTION("rows must sum to one") {
    REQUIRE_THROWS_AS(inception_score({{0.5, 0.4}}), ValidationError);
    REQUIRE_THROWS_AS(inception_score({{1.2, -0.2}}), ValidationError);
  }
  SECTION("score stays within [1, C]") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<std::vector<double>> rows;
      for (int i = 0; i < 8; ++i) {
        std::vector<double> r(4);
        double sum = 0;
        for (auto& v : r) {
          v = rng.uniform(0.0, 1.0);
          sum += v;
        }
        for (auto& v : r) v /= sum;
        rows.push_back(r);
      }
      const double is = inception_score(rows);
      REQUIRE(is >= 1.0 - 1e-9);
      REQUIRE(is <= 4.0 + 1e-9);
    }
  }
}

TEST_CASE("psnr values") {
  SECTION("identical images give the infinity sentinel") {
    Tensor<float> a(Shape4{1, 1, 4, 4}, 0.3f);
    REQUIRE(std::isinf(psnr(a, a, 2.0)));
  }
  SECTION("unit difference on the 8-bit range") {
    Tensor<float> a(Shape4{1, 1, 8, 8}, 10.0f);
    Tensor<float> b(Shape4{1, 1, 8, 8}, 11.0f);
    REQUIRE(psnr(a, b, 255.0) == Catch::Approx(48.1308).margin(0.01));
  }
  SECTION("halving the difference adds about 6.02 dB") {
    Tensor<float> a(Shape4{1, 1, 8, 8}, 10.0f);
    Tensor<float> b(Shape4{1, 1, 8, 8}, 11.0f);
    Tensor<float> c(Shape4{1, 1, 8, 8}, 10.5f);
    REQUIRE(psnr(a, c, 255.0) - psnr(a, b, 255.0) == Catch::Approx(6.0206).margin(1e-3));
  }
  SECTION("psnr strictly decreases as mse increases") {
    Tensor<float> a(Shape4{1, 1, 8, 8}, 0.0f);
    double prev = std::numeric_limits<double>::infinity();
    for (float d : {0.1f, 0.2f, 0.4f, 0.8f}) {
      Tensor<float> b(Shape4{1, 1, 8, 8}, d);
      const double v = psnr(a, b, 2.0);
      REQUIRE(v < prev);
      prev = v;
    }
  }
}

TEST_CASE("dice similarity coefficient") {
  Tensor<float> empty(Shape4{1, 1, 4, 4}, 0.0f);
  Tensor<float> full(Shape4{1, 1, 4, 4}, 1.0f);
  SECTION("equal non-empty masks give 100") { REQUIRE(dsc(full, full) == 100.0); }
  SECTION("disjoint non-empty masks give 0") {
    Tensor<float> a(Shape4{1, 1, 4, 4}, 0.0f), b(Shape4{1, 1, 4, 4}, 0.0f);
    a[0] = 1.0f;
    b[5] = 1.0f;
    REQUIRE(dsc(a, b) == 0.0);
  }
  SECTION("half overlap gives exactly 50") {
    // |A| = |B| = 4, overlap 2 -> 100 * 2*2/8 = 50
    Tensor<float> a(Shape4{1, 1, 4, 4}, 0.0f), b(Shape4{1, 1, 4, 4}, 0.0f);
    for (int i = 0; i < 4; ++i) a[i] = 1.0f;
    for (int i = 2; i < 6; ++i) b[i] = 1.0f;
    REQUIRE(dsc(a, b) == 50.0);
  }
  SECTION("both empty gives 100 by convention") { REQUIRE(dsc(empty, empty) == 100.0); }
  SECTION("symmetry and range") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor<float> a(Shape4{1, 1, 6, 6}), b(Shape4{1, 1, 6, 6});
      for (std::int64_t i = 0; i < 36; ++i) {
        a[i] = rng.coin() ? 1.0f : 0.0f;
        b[i] = rng.coin() ? 1.0f : 0.0f;
      }
      const double ab = dsc(a, b);
      REQUIRE(ab == dsc(b, a));
      REQUIRE(ab >= 0.0);
      REQUIRE(ab <= 100.0);
    }
  }
}

TEST_CASE("mask mean absolute error") {
  Tensor<float> a(Shape4{1, 1, 4, 4}, 1.0f);
  SECTION("identical masks give 0") { REQUIRE(mae(a, a) == 0.0); }
  SECTION("complementary masks give 1") {
    Tensor<float> b(Shape4{1, 1, 4, 4}, 0.0f);
    REQUIRE(mae(a, b) == 1.0);
  }
  SECTION("half the pixels flipped gives 0.5") {
    Tensor<float> b = a;
    for (int i = 0; i < 8; ++i) b[i] = 0.0f;
    REQUIRE(mae(a, b) == 0.5);
  }
}

TEST_CASE("random feature net is deterministic") {
  RandomFeatureNet net_a(42, 32), net_b(42, 32);
  Rng rng(13);
  auto img = testutil::rand_tensor<float>(Shape4{1, 3, 32, 32}, rng, -1.0, 1.0);
  auto fa = net_a.features(img);
  auto fb = net_b.features(img);
  REQUIRE(fa == fb);
  auto pa = net_a.class_probs(img);
  double sum = 0;
  for (double p : pa) sum += p;
  REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
  // single-channel input goes through the replication path
  auto ir = testutil::rand_tensor<float>(Shape4{1, 1, 48, 48}, rng, -1.0, 1.0);
  REQUIRE(net_a.features(ir).size() == 32);
}

TEST_CASE("evaluate on ground truth reproduces the identity report") {
  const std::string root = tmpdir("stawgan_eval_identity");
  auto ds = data::make_toy_dataset(root, 30, 32, 17);
  REQUIRE(ds.val.records.size() == 3);

  // identity translator: emit the paired ground truth and the true mask
  TranslateFn identity = [](const data::ImageSample& sample, data::Domain) {
    Translation tr;
    Tensor<float> paired = *sample.paired_image;
    if (paired.c() == 1)
      tr.x_t = models::Networks<float>::to_image_flow(core::constant(paired)).value();
    else
      tr.x_t = paired;
    tr.r_t = sample.target_mask;
    tr.seg = sample.target_mask;
    return tr;
  };
  RandomFeatureNet backbone(2024, 32);
  EvalOptions opts;
  opts.image_size = 32;
  auto rep = evaluate(
      identity, ds.val, [&](const Tensor<float>& x) { return backbone.features(x); },
      [&](const Tensor<float>& x) { return backbone.class_probs(x); }, opts);

  REQUIRE(std::isinf(rep.psnr_db));
  REQUIRE(rep.ssim == Catch::Approx(1.0).margin(1e-6));
  REQUIRE(std::abs(rep.fid) < 1e-6);
  REQUIRE(rep.mae == 0.0);
  REQUIRE(rep.dsc_percent == 100.0);
  REQUIRE(rep.s_score_percent == 100.0);
  REQUIRE(rep.is_mean >= 1.0);

  SECTION("report serialization") {
    const std::string path = root + "/report.txt";
    rep.save(path);
    std::ifstream is(path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    REQUIRE(text.find("dsc_percent=100") != std::string::npos);
    REQUIRE(text.find("mae=0") != std::string::npos);
  }
}

TEST_CASE("evaluate with a random-weight generator stays finite") {
  const std::string root = tmpdir("stawgan_eval_random");
  auto ds = data::make_toy_dataset(root, 20, 32, 23);
  models::ModelConfig cfg;
  cfg.image_size = 32;
  cfg.gen_width = 8;
  cfg.gen_shared_blocks = 2;
  cfg.shape_width = 8;
  cfg.contrast_width = 4;
  cfg.disc_width = 8;
  models::Networks<float> nets(cfg, 31);
  RandomFeatureNet backbone(2024, 32);
  EvalOptions opts;
  opts.image_size = 32;
  auto rep = evaluate(
      make_translator(nets), ds.val, [&](const Tensor<float>& x) { return backbone.features(x); },
      [&](const Tensor<float>& x) { return backbone.class_probs(x); }, opts);
  REQUIRE(std::isfinite(rep.fid));
  REQUIRE(std::isfinite(rep.is_mean));
  REQUIRE(std::isfinite(rep.ssim));
  REQUIRE(std::isfinite(rep.dsc_percent));
  REQUIRE(std::isfinite(rep.s_score_percent));
  REQUIRE(std::isfinite(rep.mae));
  REQUIRE(rep.fid >= -1e-6);

  SECTION("deterministic across calls") {
    auto rep2 = evaluate(make_translator(nets), ds.val,
                         [&](const Tensor<float>& x) { return backbone.features(x); },
                         [&](const Tensor<float>& x) { return backbone.class_probs(x); }, opts);
    REQUIRE(rep.ssim == rep2.ssim);
    REQUIRE(rep.fid == rep2.fid);
    REQUIRE(rep.dsc_percent == rep2.dsc_percent);
  }
}

TEST_CASE("evaluate rejects empty and unpaired manifests") {
  data::DatasetManifest empty;
  empty.paired = true;
  TranslateFn nop = [](const data::ImageSample&, data::Domain) { return Translation{}; };
  RandomFeatureNet backbone(1, 32);
  auto fx = [&](const Tensor<float>& x) { return backbone.features(x); };
  auto cx = [&](const Tensor<float>& x) { return backbone.class_probs(x); };
  REQUIRE_THROWS_AS(evaluate(nop, empty, fx, cx), ValidationError);

  const std::string root = tmpdir("stawgan_eval_unpaired");
  auto ds = data::make_toy_dataset(root, 10, 32, 3);
  ds.val.paired = false;
  EvalOptions opts;
  opts.image_size = 32;
  REQUIRE_THROWS_AS(evaluate(nop, ds.val, fx, cx, opts), ConfigError);
}
