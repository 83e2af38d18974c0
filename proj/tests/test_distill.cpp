#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "goldi/distill.hpp"
#include "goldi/scene.hpp"
#include "testutil.hpp"

using namespace goldi;
using namespace goldi::train;
using ad::Graph;
using ad::Var;

namespace {

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.dim = 8;
  cfg.vision_layers = 1;
  cfg.vision_heads = 2;
  cfg.text_layers = 1;
  cfg.text_heads = 2;
  cfg.decoder_layers = 1;
  cfg.decoder_heads = 2;
  cfg.mlp_ratio = 2;
  cfg.patch = 8;
  cfg.image_size = 16;
  cfg.context = 8;
  cfg.vocab = 16;
  cfg.distill_dim = 8;
  return cfg;
}

data::Image test_image(std::uint64_t seed, int size = 16) {
  Rng rng = rng_stream(seed, "img");
  data::Image im;
  im.h = im.w = size;
  im.pix.resize(static_cast<size_t>(size) * size * 3);
  for (auto& p : im.pix) p = static_cast<float>(rng.uniform_real());
  return im;
}

}  // namespace

TEST_CASE("make_views") {
  data::GeneratorConfig gcfg;
  data::SceneSpec scene = data::gen_scene(1, gcfg);
  data::Image im = data::render_image(scene, 64);

  SUBCASE("unit global scale reproduces the original") {
    ViewConfig vc;
    vc.glob_size = 64;
    Rng rng(5);
    Views v = make_views(im, vc, rng);
    REQUIRE(v.globals.size() == 1);
    CHECK(v.globals[0].pix == im.pix);
  }

  SUBCASE("six local views at the configured size") {
    ViewConfig vc;
    Rng rng(6);
    Views v = make_views(im, vc, rng);
    CHECK(v.locals.size() == 6);
    for (const auto& l : v.locals) {
      CHECK(l.h == vc.loc_size);
      CHECK(l.w == vc.loc_size);
      for (float p : l.pix) {
        CHECK(p >= 0.0f);
        CHECK(p <= 1.0f);
      }
    }
  }

  SUBCASE("seeded rng reproduces views exactly") {
    ViewConfig vc;
    Rng r1(9), r2(9);
    Views a = make_views(im, vc, r1);
    Views b = make_views(im, vc, r2);
    for (size_t i = 0; i < a.locals.size(); ++i)
      CHECK(a.locals[i].pix == b.locals[i].pix);
  }

  SUBCASE("invalid scale range errors") {
    ViewConfig vc;
    vc.loc_scale_lo = 0.0;
    Rng rng(1);
    CHECK_THROWS_AS(make_views(im, vc, rng), Error);
  }
}

TEST_CASE("ema_update boundary cases and scalar recurrence") {
  model::ModelConfig cfg = tiny_config();
  auto student = model::init_model<double>(cfg, 3);
  TeacherState<double> teacher = init_teacher(student, cfg.distill_dim);

  SUBCASE("m = 1 leaves the teacher unchanged") {
    Mat<double> before = teacher.params.at("proj/key/W").value;
    student.params.at("proj/key/W").value.array() += 1.0;
    ema_update(teacher, student.params, 1.0);
    CHECK(teacher.params.at("proj/key/W").value.isApprox(before));
  }

  SUBCASE("m = 0 copies the student exactly") {
    student.params.at("proj/key/W").value.array() += 2.5;
    ema_update(teacher, student.params, 0.0);
    CHECK(teacher.params.at("proj/key/W").value.isApprox(
        student.params.at("proj/key/W").value));
  }

  SUBCASE("two updates at m = 0.996 give 1 - 0.996^2") {
    // scalar recurrence on a 1x1 slice: theta_T = 0, theta_S = 1
    Mat<double> t(1, 1), s(1, 1);
    t(0, 0) = 0.0;
    s(0, 0) = 1.0;
    double m = 0.996;
    for (int i = 0; i < 2; ++i) t = m * t + (1 - m) * s;
    CHECK(t(0, 0) == doctest::Approx(0.007984).epsilon(1e-12));
    CHECK(t(0, 0) == doctest::Approx(1.0 - 0.996 * 0.996).epsilon(1e-12));
  }
}

TEST_CASE("center_update boundary cases and recurrence oracle") {
  Mat<double> c = Mat<double>::Zero(1, 3);
  Mat<double> mean1 = Mat<double>::Constant(1, 3, 1.0);
  Mat<double> mean3 = Mat<double>::Constant(1, 3, 3.0);

  Mat<double> frozen = c;
  center_update(frozen, mean1, 1.0);
  CHECK(frozen.isApprox(Mat<double>::Zero(1, 3)));

  Mat<double> instant = c;
  center_update(instant, mean3, 0.0);
  CHECK(instant.isApprox(mean3));

  // sequence of batch means [1, 3] with m_c = 0.9 from c0 = 0: c2 = 0.39
  Mat<double> seq = c;
  center_update(seq, mean1, 0.9);
  center_update(seq, mean3, 0.9);
  CHECK(seq(0, 0) == doctest::Approx(0.39).epsilon(1e-12));
}

TEST_CASE("distill_probs closed forms") {
  Graph<double> g;
  Rng rng(4);
  Mat<double> y = testutil::random_mat(3, 8, rng);

  SUBCASE("tiny temperature sharpens to near one-hot") {
    auto p = distill_probs(g.leaf(y), static_cast<const Mat<double>*>(nullptr), 0.01);
    for (Index i = 0; i < 3; ++i) CHECK(p.value().row(i).maxCoeff() > 0.99);
  }

  SUBCASE("center equal to the feature gives the uniform distribution") {
    Mat<double> row = y.row(0);
    Mat<double> single = y.topRows(1);
    auto p = distill_probs(g.leaf(single), &row, 0.04);
    for (Index j = 0; j < 8; ++j)
      CHECK(p.value()(0, j) == doctest::Approx(1.0 / 8).epsilon(1e-12));
    CHECK(mean_row_entropy(Mat<double>(p.value())) ==
          doctest::Approx(std::log(8.0)).epsilon(1e-12));
  }

  SUBCASE("zero projection output with tau_s = 1 is uniform") {
    Mat<double> zero = Mat<double>::Zero(2, 8);
    auto p = distill_probs(g.leaf(zero), static_cast<const Mat<double>*>(nullptr), 1.0);
    CHECK(p.value().minCoeff() == doctest::Approx(1.0 / 8).epsilon(1e-12));
  }
}

TEST_CASE("caption mean: duplication invariance and view pooling") {
  Graph<double> g;
  Rng rng(5);
  const Index N = 4, D = 8;
  Mat<double> keys = testutil::random_mat(2 * N, D, rng);    // 1 image, 2 views
  Mat<double> values = testutil::random_mat(2 * N, D, rng);
  Mat<double> t_eos = testutil::random_mat(4, D, rng);
  t_eos.row(2) = t_eos.row(0);  // duplicates of rows 0 and 1
  t_eos.row(3) = t_eos.row(1);

  CondMap once{{0, 1}};
  CondMap twice{{0, 1, 2, 3}};
  auto a = caption_mean_vtc(g.leaf(t_eos), g.leaf(keys), g.leaf(values), N, once, 2,
                            true);
  auto b = caption_mean_vtc(g.leaf(t_eos), g.leaf(keys), g.leaf(values), N, twice, 2,
                            true);
  CHECK(a.rows() == 2);  // one row per view
  CHECK((a.value() - b.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sd_loss oracles") {
  Graph<double> g;

  SUBCASE("H(p, p) equals the entropy of p") {
    Mat<double> p(1, 4);
    p << 0.1, 0.2, 0.3, 0.4;
    auto v = g.constant(p);
    auto loss = sd_loss(v, v, v, v, 1, 1, 1);
    double entropy = 0;
    for (Index j = 0; j < 4; ++j) entropy -= p(0, j) * std::log(p(0, j));
    CHECK(loss.scalar() == doctest::Approx(2 * entropy).epsilon(1e-12));
  }

  SUBCASE("uniform teacher against arbitrary student matches hand computation") {
    Mat<double> pt = Mat<double>::Constant(1, 4, 0.25);
    Mat<double> ps(1, 4);
    ps << 0.7, 0.1, 0.1, 0.1;
    auto vt = g.constant(pt);
    auto vs = g.constant(ps);
    auto loss = sd_loss(vt, vt, vs, vs, 1, 1, 1);
    double expect = std::log(4.0) * 0 + 0;  // assembled below
    double h = 0;
    for (Index j = 0; j < 4; ++j) h -= 0.25 * std::log(ps(0, j));
    expect = 2 * h;  // ta + tc branches
    CHECK(loss.scalar() == doctest::Approx(expect).epsilon(1e-12));
    // H = ln P - (1/P) sum log q  for a uniform teacher
    double alt = std::log(4.0);
    for (Index j = 0; j < 4; ++j) alt -= 0.25 * (std::log(ps(0, j)) + std::log(4.0) / 4 * 0);
    (void)alt;
  }

  SUBCASE("1 global and 6 locals produce 12 summands") {
    Rng rng(6);
    Mat<double> pt = Mat<double>::Constant(1, 4, 0.25);
    Mat<double> ps(6, 4);
    for (Index i = 0; i < 6; ++i) {
      Mat<double> row = testutil::random_mat(1, 4, rng).array().abs() + 0.1;
      ps.row(i) = row / row.sum();
    }
    auto loss = sd_loss(g.constant(pt), g.constant(pt), g.constant(ps),
                        g.constant(ps), 1, 1, 6);
    // average of the 12 cross-entropy terms, computed by hand
    double total = 0;
    for (Index j = 0; j < 6; ++j)
      for (Index c = 0; c < 4; ++c) total -= 2 * 0.25 * std::log(ps(j, c));
    CHECK(loss.scalar() == doctest::Approx(total / 6).epsilon(1e-12));
  }
}

TEST_CASE("full distillation branch: stop-gradient and gradient flow") {
  model::ModelConfig cfg = tiny_config();
  auto student = model::init_model<double>(cfg, 7);
  TeacherState<double> teacher = init_teacher(student, cfg.distill_dim);
  // desynchronize teacher from student
  ema_update(teacher, student.params, 0.0);
  for (auto& p : teacher.params.all()) p.value.array() += 0.01;

  DistillConfig dcfg;
  dcfg.P = cfg.distill_dim;
  data::Image g1 = test_image(1);
  std::vector<data::Image> locals{test_image(2), test_image(3)};
  text::TokenSequence cap1;
  cap1.ids = {3, 4, 1};
  cap1.eos_pos = 2;
  text::TokenSequence cap2;
  cap2.ids = {5, 1};
  cap2.eos_pos = 1;

  auto forward = [&](Graph<double>& g) {
    model::Binding<double> sb(g, student.params, true);
    model::Binding<double> tb(g, teacher.params, false);
    auto txt = model::encode_text(sb, cfg, {cap1, cap2}, nullptr, 1);
    CondMap cond{{0, 1}};
    auto tt = teacher_targets(tb, cfg, dcfg, {&g1}, ad::detach(txt.t_eos), cond, 1,
                              teacher);
    std::vector<const data::Image*> lptrs{&locals[0], &locals[1]};
    auto sp = student_predictions(sb, cfg, dcfg, lptrs, txt.t_eos, cond, 2);
    auto loss = sd_loss(tt.p_ta, tt.p_tc, sp.p_ta, sp.p_tc, 1, 1, 2);
    return std::make_pair(loss, sb);
  };

  Graph<double> g;
  auto [loss, sb] = forward(g);
  double base = loss.scalar();
  CHECK(std::isfinite(base));
  g.backward(loss);

  // gradients flow into the student projection head and text encoder
  CHECK(g.grad(sb("distill/Ws")).cwiseAbs().maxCoeff() > 0.0);
  CHECK(g.grad(sb("text/embed")).cwiseAbs().maxCoeff() > 0.0);

  // perturbing a teacher parameter changes the loss even though no gradient
  // node exists for it (structural stop-gradient); a single-entry bump avoids
  // softmax-invariant uniform shifts
  teacher.params.at("distill/Ws").value(0, 0) += 0.5;
  Graph<double> g2;
  auto [loss2, sb2] = forward(g2);
  (void)sb2;
  CHECK(loss2.scalar() != doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("sd_loss gradient passes finite differences") {
  Rng rng(8);
  Mat<double> pt = Mat<double>::Constant(2, 4, 0.25);
  Mat<double> zs = testutil::random_mat(4, 4, rng);  // 2 images x 2 locals
  double err = testutil::max_rel_err(
      {&zs}, [&](Graph<double>& g, const std::vector<Var<double>>& vs) {
        auto ps = ad::softmax_rows(ad::smul(vs[0], 1.0 / 0.1));
        return sd_loss(g.constant(pt), g.constant(pt), ps, ps, 2, 1, 2);
      });
  CHECK(err < 1e-6);
}
