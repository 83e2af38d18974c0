#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "goldi/contrastive.hpp"
#include "goldi/dataset.hpp"
#include "testutil.hpp"

using namespace goldi;
using namespace goldi::train;
using ad::Graph;
using ad::Var;

namespace {

// Brute-force scalar evaluation of the two-term loss, written independently
// of the graph implementation: explicit loops, its own softmax and cosine.
struct ScalarOracle {
  int B, K, N, D;
  std::vector<Mat<double>> keys, values;  // per image, [N x D]
  Mat<double> v_ta;                       // [B x D]
  Mat<double> t_eos;                      // [B*K x D]
  const PairBatch* pb;
  double t, b;
  bool sink;

  static double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return a.dot(b) / (a.norm() * b.norm());
  }

  Eigen::RowVectorXd pool(int image, const Eigen::RowVectorXd& query) const {
    int n = N + (sink ? 1 : 0);
    std::vector<double> logit(static_cast<size_t>(n), 0.0);
    double scale = 1.0 / std::sqrt(static_cast<double>(D));
    for (int i = 0; i < N; ++i)
      logit[static_cast<size_t>(i)] =
          query.dot(keys[static_cast<size_t>(image)].row(i)) * scale;
    double mx = *std::max_element(logit.begin(), logit.end());
    double z = 0;
    for (double& l : logit) {
      l = std::exp(l - mx);
      z += l;
    }
    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(D);
    for (int i = 0; i < N; ++i)
      out += (logit[static_cast<size_t>(i)] / z) *
             values[static_cast<size_t>(image)].row(i);
    return out;  // sink contributes a zero value
  }

  double pair_term(double sim, int y) const {
    return 1.0 / (1.0 + std::exp(y * (t * sim - b)));
  }

  void eval(double& l_ta, double& l_tc) const {
    double sum_ta = 0;
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < B; ++j)
        for (int k = 0; k < K; ++k) {
          double sim = cosine(v_ta.row(i), t_eos.row(j * K + k));
          sum_ta += pair_term(sim, pair_label(i, j, k));
        }
    l_ta = sum_ta / (static_cast<double>(B) * B * K);

    double sum_tc = 0;
    int count = 0;
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < B; ++j)
        for (int k = 0; k < K; ++k) {
          bool retained = j == i || k == pb->neg_caption[static_cast<size_t>(i) * B + j];
          if (!retained) continue;
          Eigen::RowVectorXd vtc = pool(i, t_eos.row(j * K + k));
          double sim = cosine(vtc, t_eos.row(j * K + k));
          sum_tc += pair_term(sim, pair_label(i, j, k));
          ++count;
        }
    l_tc = sum_tc / count;
  }
};

ScalarOracle make_problem(int B, int K, int N, int D, Rng& rng, PairBatch& pb,
                          double t, double b, bool sink) {
  pb.B = B;
  pb.K = K;
  pb.neg_caption.assign(static_cast<size_t>(B) * B, 0);
  for (auto& k : pb.neg_caption) k = static_cast<int>(rng.uniform(K));
  ScalarOracle o;
  o.B = B;
  o.K = K;
  o.N = N;
  o.D = D;
  o.t = t;
  o.b = b;
  o.sink = sink;
  o.pb = &pb;
  for (int i = 0; i < B; ++i) {
    o.keys.push_back(testutil::random_mat(N, D, rng));
    o.values.push_back(testutil::random_mat(N, D, rng));
  }
  o.v_ta = testutil::random_mat(B, D, rng);
  o.t_eos = testutil::random_mat(B * K, D, rng);
  return o;
}

RetrievalLoss<double> run_graph(Graph<double>& g, const ScalarOracle& o,
                                const PairBatch& pb) {
  Mat<double> keys(o.B * o.N, o.D), values(o.B * o.N, o.D);
  for (int i = 0; i < o.B; ++i) {
    keys.middleRows(i * o.N, o.N) = o.keys[static_cast<size_t>(i)];
    values.middleRows(i * o.N, o.N) = o.values[static_cast<size_t>(i)];
  }
  Mat<double> t_log(1, 1), bias(1, 1);
  t_log(0, 0) = std::log(o.t);
  bias(0, 0) = o.b;
  return retrieval_loss(g.leaf(o.v_ta), g.leaf(keys), g.leaf(values),
                        static_cast<Index>(o.N), g.leaf(o.t_eos), pb,
                        g.leaf(t_log), g.leaf(bias), o.sink);
}

}  // namespace

TEST_CASE("pair labels") {
  CHECK(pair_label(3, 3, 5) == 1);
  CHECK(pair_label(3, 4, 0) == -1);
  // exactly K positive labels among B*K captions for one anchor
  int B = 4, K = 3, pos = 0;
  for (int j = 0; j < B; ++j)
    for (int k = 0; k < K; ++k) pos += pair_label(2, j, k) == 1;
  CHECK(pos == K);
}

TEST_CASE("sigmoid pair loss closed forms") {
  // zero margin: t*sim == b
  CHECK(sigmoid_pair_loss(0.5, +1, 2.0, 1.0) == doctest::Approx(0.5).epsilon(1e-15));

  // sim=1, y=+1, t=10, b=-10: the margin is +20, loss = 1/(1+e^20).
  // Oracle computed with independent long double arithmetic.
  long double oracle = 1.0L / (1.0L + std::exp(20.0L));
  double got = sigmoid_pair_loss(1.0, +1, 10.0, -10.0);
  CHECK(got == doctest::Approx(static_cast<double>(oracle)).epsilon(1e-12));
  CHECK(got < 3e-9);
  CHECK(got > 0.0);

  // y = -1 mirrors the y = +1 value
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    double sim = rng.uniform_real(-1, 1), t = rng.uniform_real(0.1, 20),
           b = rng.uniform_real(-12, 12);
    double lp = sigmoid_pair_loss(sim, +1, t, b);
    double lm = sigmoid_pair_loss(sim, -1, t, b);
    CHECK(lp + lm == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(lp > 0.0);
    CHECK(lp < 1.0);
  }

  // extreme margins stay finite and ordered
  CHECK(sigmoid_pair_loss(1.0, +1, 1000.0, -1000.0) >= 0.0);
  CHECK(sigmoid_pair_loss(1.0, -1, 1000.0, -1000.0) <= 1.0);
}

TEST_CASE("caption sampling") {
  text::Lexicon lex = text::default_lexicon();
  data::GeneratorConfig cfg;

  SUBCASE("pool of one sentence repeats it K times") {
    data::AnnotationSet ann;
    ann.captions_short = {"a red circle", "a red circle", "a red circle"};
    ann.captions_long = {"a red circle", "a red circle", "a red circle"};
    Rng rng(1);
    auto caps = sample_positive_captions(ann, 8, 32, lex, rng);
    REQUIRE(caps.size() == 8);
    for (const auto& c : caps) CHECK(c == "a red circle");
  }

  SUBCASE("empty pool errors") {
    data::AnnotationSet ann;
    Rng rng(1);
    CHECK_THROWS_AS(sample_positive_captions(ann, 4, 32, lex, rng), Error);
  }

  SUBCASE("every sampled positive fits the context length") {
    for (int seed = 0; seed < 100; ++seed) {
      data::SceneSpec s = data::gen_scene(seed, cfg);
      data::AnnotationSet ann = data::gen_annotations(s, cfg.image_size);
      Rng rng(seed);
      for (const auto& c : sample_positive_captions(ann, 8, 32, lex, rng)) {
        auto seq = text::tokenize(c, lex);
        CHECK(seq.length() <= 32);
      }
    }
  }

  SUBCASE("seeded rng reproduces caption sets") {
    data::SceneSpec s = data::gen_scene(11, cfg);
    data::AnnotationSet ann = data::gen_annotations(s, cfg.image_size);
    Rng r1(7), r2(7);
    CHECK(sample_positive_captions(ann, 8, 32, lex, r1) ==
          sample_positive_captions(ann, 8, 32, lex, r2));
  }
}

TEST_CASE("B=1: zero-margin positives give exactly 0.5") {
  // craft embeddings whose cosine similarity s satisfies t*s == b
  Rng rng(5);
  PairBatch pb;
  ScalarOracle o = make_problem(1, 2, 3, 4, rng, pb, 2.0, 0.0, false);
  // force zero similarity between v_ta and both captions: orthogonal rows
  o.v_ta << 1, 0, 0, 0;
  o.t_eos.row(0) << 0, 1, 0, 0;
  o.t_eos.row(1) << 0, 0, 1, 0;
  // with b = 0 and sim = 0 the ta margin is zero for every positive
  Graph<double> g;
  auto loss = run_graph(g, o, pb);
  CHECK(loss.ta.scalar() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("graph loss matches the scalar oracle to 1e-10") {
  Rng rng(6);
  PairBatch pb;
  for (bool sink : {false, true}) {
    ScalarOracle o = make_problem(2, 1, 4, 6, rng, pb, 10.0, -10.0, sink);
    double ota, otc;
    o.eval(ota, otc);
    Graph<double> g;
    auto loss = run_graph(g, o, pb);
    CAPTURE(sink);
    CHECK(loss.ta.scalar() == doctest::Approx(ota).epsilon(1e-10));
    CHECK(loss.tc.scalar() == doctest::Approx(otc).epsilon(1e-10));
    CHECK(loss.total.scalar() == doctest::Approx(ota + otc).epsilon(1e-10));
  }
}

TEST_CASE("temperature sweep tracks the oracle") {
  Rng rng(7);
  PairBatch pb;
  ScalarOracle o = make_problem(3, 2, 4, 5, rng, pb, 1.0, 0.5, true);
  for (double t : {1.0, 2.0, 10.0}) {
    o.t = t;
    double ota, otc;
    o.eval(ota, otc);
    Graph<double> g;
    auto loss = run_graph(g, o, pb);
    CHECK(loss.total.scalar() == doctest::Approx(ota + otc).epsilon(1e-10));
  }
}

TEST_CASE("permuting image order leaves the loss unchanged") {
  Rng rng(8);
  PairBatch pb;
  ScalarOracle o = make_problem(3, 2, 4, 5, rng, pb, 4.0, -1.0, true);
  Graph<double> g;
  double base = run_graph(g, o, pb).total.scalar();

  // apply permutation p to images, captions and the negative map
  std::vector<int> perm{2, 0, 1};
  ScalarOracle po = o;
  PairBatch ppb = pb;
  for (int i = 0; i < 3; ++i) {
    po.keys[static_cast<size_t>(perm[i])] = o.keys[static_cast<size_t>(i)];
    po.values[static_cast<size_t>(perm[i])] = o.values[static_cast<size_t>(i)];
    po.v_ta.row(perm[i]) = o.v_ta.row(i);
    for (int k = 0; k < 2; ++k)
      po.t_eos.row(perm[i] * 2 + k) = o.t_eos.row(i * 2 + k);
    for (int j = 0; j < 3; ++j)
      ppb.neg_caption[static_cast<size_t>(perm[i]) * 3 + perm[j]] =
          pb.neg_caption[static_cast<size_t>(i) * 3 + j];
  }
  po.pb = &ppb;
  Graph<double> g2;
  double permuted = run_graph(g2, po, ppb).total.scalar();
  CHECK(permuted == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("retrieval loss gradients pass finite differences") {
  Rng rng(9);
  PairBatch pb;
  ScalarOracle o = make_problem(2, 2, 3, 4, rng, pb, 3.0, -0.5, true);
  Mat<double> keys(o.B * o.N, o.D), values(o.B * o.N, o.D);
  for (int i = 0; i < o.B; ++i) {
    keys.middleRows(i * o.N, o.N) = o.keys[static_cast<size_t>(i)];
    values.middleRows(i * o.N, o.N) = o.values[static_cast<size_t>(i)];
  }
  Mat<double> t_log(1, 1), bias(1, 1);
  t_log(0, 0) = std::log(o.t);
  bias(0, 0) = o.b;
  double err = testutil::max_rel_err(
      {&o.v_ta, &keys, &values, &o.t_eos, &t_log, &bias},
      [&](Graph<double>& g, const std::vector<Var<double>>& vs) {
        return retrieval_loss(vs[0], vs[1], vs[2], static_cast<Index>(o.N), vs[3],
                              pb, vs[4], vs[5], true)
            .total;
      });
  CHECK(err < 1e-6);
}

TEST_CASE("batch construction covers the corpus contract") {
  text::Lexicon lex = text::default_lexicon();
  data::GeneratorConfig cfg;
  data::Corpus corpus = data::make_corpus(1, 4, cfg);
  std::vector<const data::AnnotationSet*> anns;
  for (const auto& r : corpus.records) anns.push_back(&r.ann);
  PairBatch pb = build_pair_batch(anns, 8, 32, lex, 99, 0);
  CHECK(pb.captions.size() == 32);
  CHECK(pb.neg_caption.size() == 16);
  PairBatch again = build_pair_batch(anns, 8, 32, lex, 99, 0);
  CHECK(pb.caption_strings == again.caption_strings);
  CHECK(pb.neg_caption == again.neg_caption);
  PairBatch other_step = build_pair_batch(anns, 8, 32, lex, 99, 1);
  CHECK(pb.caption_strings != other_step.caption_strings);
}
