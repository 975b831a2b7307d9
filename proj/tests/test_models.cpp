#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "stawgan/models.hpp"
#include "test_helpers.hpp"

using namespace stawgan;
using namespace stawgan::models;
using core::Rng;
using core::Shape4;
using core::Tensor;
using core::Var;

namespace {

ModelConfig tiny_config(int size = 32) {
  ModelConfig cfg;
  cfg.image_size = size;
  cfg.gen_width = 8;
  cfg.gen_shared_blocks = 2;
  cfg.shape_width = 8;
  cfg.contrast_width = 4;
  cfg.disc_width = 8;
  return cfg;
}

template <typename T>
Var<T> rand_image(Shape4 shape, Rng& rng, double lo = -0.9, double hi = 0.9) {
  return Var<T>::leaf(testutil::rand_tensor<T>(shape, rng, lo, hi));
}

template <typename T>
double top_singular_value(const Tensor<T>& w) {
  const auto rows = w.n(), cols = w.c() * w.h() * w.w();
  Eigen::MatrixXd m(rows, cols);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) m(r, c) = static_cast<double>(w[r * cols + c]);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

}  // namespace

TEST_CASE("domain codes are one-hot") {
  auto ir = DomainCode::of(data::Domain::IR);
  auto rgb = DomainCode::of(data::Domain::RGB);
  REQUIRE(ir.index() == 0);
  REQUIRE(rgb.index() == 1);
  DomainCode bad;
  bad.t = {0.5f, 0.5f};
  REQUIRE_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("generator is shape preserving and bounded") {
  Rng rng(3);
  Networks<float> nets(tiny_config(32), 99);
  for (std::int64_t size : {32, 64}) {
    auto x = rand_image<float>(Shape4{2, 3, size, size}, rng);
    auto r = rand_image<float>(Shape4{2, 1, size, size}, rng);
    auto t = domain_code_tensor<float>(DomainCode::of(data::Domain::RGB), 2);
    auto out = nets.G.forward(x, r, t);
    REQUIRE(out.x_t.value().shape() == Shape4{2, 3, size, size});
    REQUIRE(out.r_t.value().shape() == Shape4{2, 1, size, size});
    REQUIRE(out.x_t.value().min() > -1.0f);
    REQUIRE(out.x_t.value().max() < 1.0f);
    REQUIRE(out.r_t.value().min() > -1.0f);
    REQUIRE(out.r_t.value().max() < 1.0f);
  }
  SECTION("mismatched flows throw") {
    auto x = rand_image<float>(Shape4{2, 3, 32, 32}, rng);
    auto r = rand_image<float>(Shape4{2, 1, 16, 16}, rng);
    auto t = domain_code_tensor<float>(DomainCode::of(data::Domain::IR), 2);
    REQUIRE_THROWS_AS(nets.G.forward(x, r, t), ShapeError);
  }
  SECTION("deterministic in inference") {
    auto x = rand_image<float>(Shape4{1, 3, 32, 32}, rng);
    auto r = rand_image<float>(Shape4{1, 1, 32, 32}, rng);
    auto t = domain_code_tensor<float>(DomainCode::of(data::Domain::IR), 1);
    auto a = nets.G.forward(x, r, t);
    auto b = nets.G.forward(x, r, t);
    for (std::int64_t i = 0; i < a.x_t.value().numel(); ++i)
      REQUIRE(a.x_t.value()[i] == b.x_t.value()[i]);
  }
}

TEST_CASE("seg branch emits a 1-channel map") {
  Rng rng(5);
  Networks<float> nets(tiny_config(32), 11);
  auto x = rand_image<float>(Shape4{2, 3, 32, 32}, rng);
  auto t = domain_code_tensor<float>(DomainCode::of(data::Domain::IR), 2);
  auto seg = nets.G.seg(x, t);
  REQUIRE(seg.value().shape() == Shape4{2, 1, 32, 32});
  REQUIRE(seg.value().min() > -1.0f);
  REQUIRE(seg.value().max() < 1.0f);
}

TEST_CASE("shape controller outputs soft masks in (0,1)") {
  Rng rng(7);
  Networks<float> nets(tiny_config(32), 5);
  auto r = rand_image<float>(Shape4{2, 1, 32, 32}, rng);
  auto m = nets.S.forward(r);
  REQUIRE(m.value().shape() == Shape4{2, 1, 32, 32});
  REQUIRE(m.value().min() > 0.0f);
  REQUIRE(m.value().max() < 1.0f);
  // thresholding yields a usable binary mask
  std::int64_t ones = 0;
  for (std::int64_t i = 0; i < m.value().numel(); ++i)
    if (m.value()[i] > 0.5f) ++ones;
  REQUIRE(ones >= 0);
}

TEST_CASE("contrast network factor ranges") {
  Rng rng(9);
  Networks<float> nets(tiny_config(32), 21);
  SECTION("random weights give positive contrast and gamma") {
    for (int trial = 0; trial < 5; ++trial) {
      auto x = rand_image<float>(Shape4{3, 3, 32, 32}, rng);
      auto f = nets.C.forward(x);
      REQUIRE(f.value().shape() == Shape4{3, 3, 1, 1});
      for (std::int64_t n = 0; n < 3; ++n) {
        REQUIRE(std::isfinite(f.value().at(n, 0, 0, 0)));
        REQUIRE(f.value().at(n, 0, 0, 0) > 0.0f);   // contrast
        REQUIRE(f.value().at(n, 1, 0, 0) >= 0.0f);  // sharpness
        REQUIRE(f.value().at(n, 2, 0, 0) > 0.0f);   // gamma
      }
    }
  }
  SECTION("zero weights give exactly the identity factors") {
    Networks<float> zero(tiny_config(32), 77);
    for (auto& [name, p] : zero.C.params().items) p.value().fill(0.0f);
    auto x = rand_image<float>(Shape4{2, 3, 32, 32}, rng);
    auto f = zero.C.forward(x);
    for (std::int64_t n = 0; n < 2; ++n) {
      REQUIRE(f.value().at(n, 0, 0, 0) == 1.0f);
      REQUIRE(f.value().at(n, 1, 0, 0) == 0.0f);
      REQUIRE(f.value().at(n, 2, 0, 0) == 1.0f);
    }
  }
  SECTION("wrong input size throws") {
    auto x = rand_image<float>(Shape4{1, 3, 16, 16}, rng);
    REQUIRE_THROWS_AS(nets.C.forward(x), ShapeError);
  }
}

TEST_CASE("apply_enhancement identities and arithmetic") {
  Rng rng(13);
  SECTION("identity factors reproduce the input exactly") {
    auto x = rand_image<float>(Shape4{2, 3, 8, 8}, rng, -0.9, 0.9);
    Tensor<float> f(Shape4{2, 3, 1, 1});
    for (std::int64_t n = 0; n < 2; ++n) {
      f.at(n, 0, 0, 0) = 1.0f;
      f.at(n, 1, 0, 0) = 0.0f;
      f.at(n, 2, 0, 0) = 1.0f;
    }
    auto y = apply_enhancement(x, Var<float>::leaf(f));
    for (std::int64_t i = 0; i < y.value().numel(); ++i)
      REQUIRE(y.value()[i] == x.value()[i]);
  }
  SECTION("gamma two squares a constant half image") {
    // u = 0.5 on the [0,1] scale is x = 0; gamma 2 gives u = 0.25, x = -0.5
    auto x = Var<float>::leaf(Tensor<float>(Shape4{1, 1, 6, 6}, 0.0f));
    Tensor<float> f(Shape4{1, 3, 1, 1});
    f[0] = 1.0f;
    f[1] = 0.0f;
    f[2] = 2.0f;
    auto y = apply_enhancement(x, Var<float>::leaf(f));
    for (std::int64_t i = 0; i < y.value().numel(); ++i)
      REQUIRE(y.value()[i] == Catch::Approx(-0.5).margin(1e-6));
  }
  SECTION("sharpness leaves constant images unchanged") {
    auto x = Var<float>::leaf(Tensor<float>(Shape4{1, 3, 5, 5}, 0.2f));
    Tensor<float> f(Shape4{1, 3, 1, 1});
    f[0] = 1.0f;
    f[1] = 3.5f;
    f[2] = 1.0f;
    auto y = apply_enhancement(x, Var<float>::leaf(f));
    for (std::int64_t i = 0; i < y.value().numel(); ++i)
      REQUIRE(y.value()[i] == Catch::Approx(0.2f).margin(1e-6));
  }
  SECTION("output stays in [-1,1]") {
    auto x = rand_image<float>(Shape4{2, 3, 8, 8}, rng, -1.0, 1.0);
    Tensor<float> f(Shape4{2, 3, 1, 1});
    for (std::int64_t n = 0; n < 2; ++n) {
      f.at(n, 0, 0, 0) = 3.0f;
      f.at(n, 1, 0, 0) = 2.0f;
      f.at(n, 2, 0, 0) = 0.4f;
    }
    auto y = apply_enhancement(x, Var<float>::leaf(f));
    REQUIRE(y.value().min() >= -1.0f);
    REQUIRE(y.value().max() <= 1.0f);
  }
}

TEST_CASE("discriminator heads and depth") {
  Rng rng(17);
  auto cfg = tiny_config(64);
  Networks<float> nets(cfg, 41);
  REQUIRE(cfg.resolved_disc_blocks() == 4);  // 64 -> 4x4
  {
    ModelConfig c256 = cfg;
    c256.image_size = 256;
    REQUIRE(c256.resolved_disc_blocks() == 6);  // 256 -> 4x4 via 6 stride-2 blocks
  }
  auto x = rand_image<float>(Shape4{2, 3, 64, 64}, rng);
  auto out = nets.Dx.forward(x, true);
  REQUIRE(out.adv.value().shape() == Shape4{2, 1, 4, 4});
  REQUIRE(out.logits.value().shape() == Shape4{2, 2, 1, 1});
  for (std::int64_t i = 0; i < out.logits.value().numel(); ++i)
    REQUIRE(std::isfinite(out.logits.value()[i]));

  auto r = rand_image<float>(Shape4{2, 1, 64, 64}, rng);
  auto out_r = nets.Dr.forward(r, true);
  REQUIRE(out_r.adv.value().shape() == Shape4{2, 1, 4, 4});

  SECTION("wrong channel count throws") {
    REQUIRE_THROWS_AS(nets.Dx.forward(r, true), ShapeError);
    REQUIRE_THROWS_AS(nets.Dr.forward(x, true), ShapeError);
  }
}

TEST_CASE("spectral normalization bounds every discriminator kernel") {
  Rng rng(19);
  auto cfg = tiny_config(32);
  Networks<float> nets(cfg, 55);
  // settle the power-iteration state; random conv kernels have clustered
  // top singular values and need a few hundred iterations to resolve
  for (const auto* layer : nets.Dx.sn_layers()) {
    for (int i = 0; i < 400; ++i) layer->normalized_weight(true);
    auto wbar = layer->normalized_weight(false);
    const double sv = top_singular_value(wbar.value());
    REQUIRE(sv > 0.99);
    REQUIRE(sv < 1.01);
  }
}

TEST_CASE("gradients reach every generator and shape-controller parameter") {
  Rng rng(23);
  Networks<float> nets(tiny_config(16), 7);
  auto x = rand_image<float>(Shape4{2, 3, 16, 16}, rng);
  auto r = rand_image<float>(Shape4{2, 1, 16, 16}, rng);
  auto t = domain_code_tensor<float>(DomainCode::of(data::Domain::RGB), 2);
  auto out = nets.G.forward(x, r, t);
  auto s_mask = nets.S.forward(out.r_t);
  auto f = nets.C.forward(out.x_t);
  auto enhanced = apply_enhancement(out.x_t, f);
  auto loss = core::add(core::add(core::mean_all(core::square(out.x_t)),
                                  core::mean_all(core::square(out.r_t))),
                        core::add(core::mean_all(core::square(s_mask)),
                                  core::mean_all(core::square(enhanced))));
  core::backward(loss);
  auto all_nonzero = [](core::ParamSet<float>& ps) {
    std::size_t nonzero = 0;
    for (auto& [name, p] : ps.items) {
      double norm = 0;
      if (!p.grad().empty())
        for (std::int64_t i = 0; i < p.grad().numel(); ++i)
          norm += static_cast<double>(p.grad()[i]) * p.grad()[i];
      if (norm > 0) ++nonzero;
    }
    return std::make_pair(nonzero, ps.items.size());
  };
  auto [g_nz, g_total] = all_nonzero(nets.G.params());
  REQUIRE(g_nz == g_total);
  auto [s_nz, s_total] = all_nonzero(nets.S.params());
  REQUIRE(s_nz == s_total);
  // The sharpness head sits behind a ReLU gate, so individual rows may be
  // inactive; the network as a whole must still receive gradient.
  auto [c_nz, c_total] = all_nonzero(nets.C.params());
  REQUIRE(c_nz > 0);
}

TEST_CASE("checkpoint store round trips all networks bit-exactly") {
  Networks<float> nets(tiny_config(32), 1234);
  // move the SN state off its initial value
  Rng rng(29);
  auto x = rand_image<float>(Shape4{1, 3, 32, 32}, rng);
  nets.Dx.forward(x, true);

  core::TensorStore store;
  save_networks(store, nets);
  const std::string path = "/tmp/stawgan_models_ckpt.bin";
  core::save_store(store, path);
  auto loaded_store = core::load_store(path);
  auto loaded = load_networks<float>(loaded_store);

  auto compare = [](core::ParamSet<float>& a, core::ParamSet<float>& b) {
    REQUIRE(a.items.size() == b.items.size());
    for (std::size_t i = 0; i < a.items.size(); ++i) {
      const auto& ta = a.items[i].second.value();
      const auto& tb = b.items[i].second.value();
      REQUIRE(ta.shape() == tb.shape());
      REQUIRE(std::memcmp(ta.data(), tb.data(),
                          sizeof(float) * static_cast<std::size_t>(ta.numel())) == 0);
    }
  };
  compare(nets.G.params(), loaded.G.params());
  compare(nets.S.params(), loaded.S.params());
  compare(nets.C.params(), loaded.C.params());
  compare(nets.Dx.params(), loaded.Dx.params());
  compare(nets.Dr.params(), loaded.Dr.params());

  // identical forward after reload, including spectral state
  auto a = nets.Dx.forward(x, false);
  auto b = loaded.Dx.forward(x, false);
  for (std::int64_t i = 0; i < a.adv.value().numel(); ++i)
    REQUIRE(a.adv.value()[i] == b.adv.value()[i]);

  SECTION("schema mismatch rejected") {
    core::TensorStore bad = loaded_store;
    bad.meta["schema"] = "something-else";
    REQUIRE_THROWS_AS(load_networks<float>(bad), IoError);
  }
}

TEST_CASE("IR replication to the image flow") {
  Rng rng(31);
  auto ir = rand_image<float>(Shape4{2, 1, 8, 8}, rng);
  auto x3 = Networks<float>::to_image_flow(ir);
  REQUIRE(x3.value().shape() == Shape4{2, 3, 8, 8});
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t j = 0; j < 64; ++j) {
      const float v = ir.value()[n * 64 + j];
      REQUIRE(x3.value().at(n, 0, j / 8, j % 8) == v);
      REQUIRE(x3.value().at(n, 1, j / 8, j % 8) == v);
      REQUIRE(x3.value().at(n, 2, j / 8, j % 8) == v);
    }
  auto rgb = rand_image<float>(Shape4{2, 3, 8, 8}, rng);
  REQUIRE(Networks<float>::to_image_flow(rgb).value().shape() == Shape4{2, 3, 8, 8});
}
