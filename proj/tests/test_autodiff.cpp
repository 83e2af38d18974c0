#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "goldi/attention_ops.hpp"
#include "goldi/autodiff.hpp"
#include "testutil.hpp"

using namespace goldi;
using ad::Blocks;
using ad::Graph;
using ad::PoolGroup;
using ad::Var;
using testutil::max_rel_err;
using testutil::random_mat;

namespace {
constexpr double kTol = 1e-6;
}

TEST_CASE("quadratic probe matches analytic gradient to machine precision") {
  Rng rng(1);
  Mat<double> x = random_mat(3, 4, rng);
  double err = max_rel_err({&x}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
    return ad::sum_all(ad::mul(v[0], v[0]));
  });
  CHECK(err < 1e-9);
}

TEST_CASE("arithmetic ops") {
  Rng rng(2);
  Mat<double> a = random_mat(3, 5, rng), b = random_mat(3, 5, rng);
  CHECK(max_rel_err({&a, &b}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ad::mean_all(ad::mul(ad::add(v[0], v[1]), ad::sub(v[0], v[1])));
        }) < kTol);

  Mat<double> s(1, 1);
  s(0, 0) = 0.7;
  CHECK(max_rel_err({&a, &s}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ad::sum_all(ad::vs_add(ad::vs_mul(v[0], v[1]), v[1]));
        }) < kTol);
}

TEST_CASE("matmul all transpose combinations") {
  Rng rng(3);
  Mat<double> a = random_mat(4, 3, rng), b = random_mat(3, 5, rng);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      Mat<double> aa = ta ? Mat<double>(a.transpose()) : a;
      Mat<double> bb = tb ? Mat<double>(b.transpose()) : b;
      double err = max_rel_err(
          {&aa, &bb}, [ta, tb](Graph<double>& g, const std::vector<Var<double>>& v) {
            return ad::mean_all(ad::matmul(v[0], v[1], ta != 0, tb != 0));
          });
      CAPTURE(ta);
      CAPTURE(tb);
      CHECK(err < kTol);
    }
}

TEST_CASE("elementwise nonlinearities") {
  Rng rng(4);
  Mat<double> x = random_mat(2, 6, rng);
  CHECK(max_rel_err({&x}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ad::mean_all(ad::gelu(v[0]));
        }) < kTol);
  CHECK(max_rel_err({&x}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ad::mean_all(ad::sigmoid(v[0]));
        }) < kTol);
  CHECK(max_rel_err({&x}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ad::mean_all(ad::exp_(ad::smul(v[0], 0.3)));
        }) < kTol);
  Mat<double> pos = (x.array().abs() + 0.5).matrix();
  CHECK(max_rel_err({&pos}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ad::mean_all(ad::log_clamped(v[0], 1e-12));
        }) < kTol);
}

TEST_CASE("softmax, layernorm, normalize") {
  Rng rng(5);
  Mat<double> x = random_mat(4, 6, rng);
  Mat<double> w = random_mat(6, 1, rng);
  CHECK(max_rel_err({&x, &w}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ad::mean_all(ad::matmul(ad::softmax_rows(v[0]), v[1]));
        }) < kTol);

  Mat<double> gamma = random_mat(1, 6, rng, 0.5);
  gamma.array() += 1.0;
  Mat<double> beta = random_mat(1, 6, rng, 0.2);
  CHECK(max_rel_err({&x, &gamma, &beta},
                    [](Graph<double>& g, const std::vector<Var<double>>& v) {
                      return ad::mean_all(ad::mul(
                          ad::layer_norm_rows(v[0], v[1], v[2]), v[0]));
                    }) < kTol);

  CHECK(max_rel_err({&x, &w}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ad::mean_all(ad::matmul(ad::l2_normalize_rows(v[0]), v[1]));
        }) < kTol);
}

TEST_CASE("reductions, gather, concat, rowwise dot") {
  Rng rng(6);
  Mat<double> x = random_mat(6, 4, rng), y = random_mat(6, 4, rng);
  CHECK(max_rel_err({&x}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ad::sum_all(ad::mean_rows(v[0]));
        }) < kTol);
  CHECK(max_rel_err({&x}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          Blocks b;
          b.push(2);
          b.push(3);
          b.push(1);
          return ad::mean_all(ad::mul(ad::block_row_mean(ad::slice_rows(v[0], 0, 6), b),
                                      ad::block_row_mean(v[0], b)));
        }) < kTol);
  CHECK(max_rel_err({&x}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          // repeated indices exercise scatter accumulation
          auto gathered = ad::gather_rows(v[0], {0, 2, 2, 5, 1});
          return ad::mean_all(ad::mul(gathered, gathered));
        }) < kTol);
  CHECK(max_rel_err({&x, &y}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          auto cat = ad::concat_rows<double>({v[0], v[1]});
          return ad::mean_all(ad::mul(cat, cat));
        }) < kTol);
  CHECK(max_rel_err({&x, &y}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ad::mean_all(ad::rowwise_dot(v[0], v[1]));
        }) < kTol);
}

TEST_CASE("add_rowvec broadcasts bias") {
  Rng rng(7);
  Mat<double> x = random_mat(5, 3, rng), b = random_mat(1, 3, rng);
  CHECK(max_rel_err({&x, &b}, [](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ad::mean_all(ad::mul(ad::add_rowvec(v[0], v[1]),
                                      ad::add_rowvec(v[0], v[1])));
        }) < kTol);
}

TEST_CASE("multihead attention gradients (self, causal, cross)") {
  Rng rng(8);
  Blocks qb, kb;
  qb.push(3);
  qb.push(2);
  kb.push(3);
  kb.push(2);
  Mat<double> q = random_mat(5, 4, rng), k = random_mat(5, 4, rng),
              v = random_mat(5, 4, rng);
  for (bool causal : {false, true}) {
    double err = max_rel_err(
        {&q, &k, &v},
        [&qb, &kb, causal](Graph<double>& g, const std::vector<Var<double>>& vs) {
          auto o = ad::multihead_attention(vs[0], vs[1], vs[2], qb, kb, 2, causal);
          return ad::mean_all(ad::mul(o, o));
        });
    CAPTURE(causal);
    CHECK(err < kTol);
  }

  // cross-shaped: query blocks of different length than kv blocks
  Blocks qb2, kb2;
  qb2.push(2);
  qb2.push(4);
  kb2.push(3);
  kb2.push(5);
  Mat<double> q2 = random_mat(6, 4, rng), k2 = random_mat(8, 4, rng),
              v2 = random_mat(8, 4, rng);
  double err = max_rel_err(
      {&q2, &k2, &v2}, [&](Graph<double>& g, const std::vector<Var<double>>& vs) {
        auto o = ad::multihead_attention(vs[0], vs[1], vs[2], qb2, kb2, 2, false);
        return ad::mean_all(ad::mul(o, o));
      });
  CHECK(err < kTol);
}

TEST_CASE("causal attention masks the future") {
  Rng rng(9);
  Mat<double> q = random_mat(4, 4, rng), k = random_mat(4, 4, rng),
              v = random_mat(4, 4, rng);
  Graph<double> g;
  Blocks b = Blocks::uniform(1, 4);
  auto out1 =
      ad::multihead_attention(g.leaf(q), g.leaf(k), g.leaf(v), b, b, 2, true);
  // perturb the last row of k and v; earlier outputs must not change
  Mat<double> k2 = k, v2 = v;
  k2.row(3).array() += 3.0;
  v2.row(3).array() -= 2.0;
  auto out2 =
      ad::multihead_attention(g.leaf(k2), g.leaf(k2), g.leaf(v2), b, b, 2, true);
  auto out3 = ad::multihead_attention(g.leaf(q), g.leaf(k2), g.leaf(v2), b, b, 2, true);
  (void)out2;
  for (Index r = 0; r < 3; ++r)
    CHECK((out1.value().row(r) - out3.value().row(r)).cwiseAbs().maxCoeff() ==
          doctest::Approx(0.0));
}

TEST_CASE("pool_attend closed forms and gradients") {
  Rng rng(10);

  SUBCASE("single key without sink gives that value") {
    Graph<double> g;
    Mat<double> q = random_mat(1, 4, rng), k = random_mat(1, 4, rng),
                v = random_mat(1, 4, rng);
    auto out = ad::pool_attend(g.leaf(q), g.leaf(k), g.leaf(v),
                               {PoolGroup{0, 1, 0, 1}}, false);
    CHECK((out.value() - v).cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("sink with all-zero logits gives N/(N+1) * mean(values)") {
    Graph<double> g;
    Mat<double> q = Mat<double>::Zero(1, 4);
    Mat<double> k = random_mat(5, 4, rng), v = random_mat(5, 4, rng);
    auto out = ad::pool_attend(g.leaf(q), g.leaf(k), g.leaf(v),
                               {PoolGroup{0, 1, 0, 5}}, true);
    Mat<double> expect = v.colwise().mean() * (5.0 / 6.0);
    CHECK((out.value() - expect).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("gradients with and without sink, shared kv spans") {
    Mat<double> q = random_mat(4, 4, rng), k = random_mat(6, 4, rng),
                v = random_mat(6, 4, rng);
    for (bool sink : {false, true}) {
      double err = max_rel_err(
          {&q, &k, &v}, [sink](Graph<double>& g, const std::vector<Var<double>>& vs) {
            // two groups share the first kv span -> serial scatter path
            std::vector<PoolGroup> groups{PoolGroup{0, 2, 0, 3}, PoolGroup{2, 1, 0, 3},
                                          PoolGroup{3, 1, 3, 3}};
            auto o = ad::pool_attend(vs[0], vs[1], vs[2], groups, sink);
            return ad::mean_all(ad::mul(o, o));
          });
      CAPTURE(sink);
      CHECK(err < kTol);
    }
  }
}

TEST_CASE("masked_nll matches scalar oracle and gradcheck") {
  Rng rng(11);
  Mat<double> logits = random_mat(5, 4, rng);
  std::vector<Index> targets{2, 0, 3};
  std::vector<Index> rows{1, 2, 4};

  // independent scalar computation
  double expect = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    double z = 0;
    for (Index j = 0; j < 4; ++j) z += std::exp(logits(rows[i], j));
    expect += -std::log(std::exp(logits(rows[i], targets[i])) / z);
  }
  expect /= 3.0;

  Graph<double> g;
  auto nll = ad::masked_nll(g.leaf(logits), targets, rows);
  CHECK(nll.scalar() == doctest::Approx(expect).epsilon(1e-12));

  CHECK(max_rel_err({&logits}, [&](Graph<double>& g2,
                                   const std::vector<Var<double>>& vs) {
          return ad::masked_nll(vs[0], targets, rows);
        }) < kTol);
}

TEST_CASE("detach blocks gradient flow") {
  Rng rng(12);
  Mat<double> x = random_mat(2, 3, rng);
  Graph<double> g;
  auto leaf = g.leaf(x);
  auto d = ad::detach(leaf);
  auto loss = ad::sum_all(ad::mul(d, leaf));
  g.backward(loss);
  CHECK(g.grad(leaf).isApprox(x));  // only the live path contributes
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Mat<double> x(1, 1);
  x(0, 0) = 3.0;
  Graph<double> g;
  auto v = g.leaf(x);
  auto y = ad::mul(v, v);           // x^2
  auto z = ad::add(y, ad::mul(y, v));  // x^2 + x^3
  g.backward(ad::sum_all(z));
  CHECK(g.grad(v)(0, 0) == doctest::Approx(2 * 3 + 3 * 9).epsilon(1e-12));
}
