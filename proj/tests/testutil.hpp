#pragma once

#include <functional>
#include <vector>

#include "goldi/autodiff.hpp"

namespace goldi::testutil {

// Central finite differences vs analytic gradients for a scalar-valued graph.
// `build` must construct the full forward pass from the given leaves and
// return the scalar root. Returns the worst relative error over all leaf
// coordinates.
inline double max_rel_err(
    std::vector<Mat<double>*> leaves,
    const std::function<ad::Var<double>(ad::Graph<double>&,
                                        const std::vector<ad::Var<double>>&)>& build,
    double h = 1e-5) {
  auto eval = [&]() {
    ad::Graph<double> g;
    std::vector<ad::Var<double>> vars;
    vars.reserve(leaves.size());
    for (auto* m : leaves) vars.push_back(g.leaf(*m));
    return build(g, vars).scalar();
  };

  // analytic
  ad::Graph<double> g;
  std::vector<ad::Var<double>> vars;
  for (auto* m : leaves) vars.push_back(g.leaf(*m));
  ad::Var<double> root = build(g, vars);
  g.backward(root);
  std::vector<Mat<double>> analytic;
  for (auto& v : vars) analytic.push_back(g.grad(v));

  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Mat<double>& m = *leaves[li];
    for (Index i = 0; i < m.size(); ++i) {
      double orig = m.data()[i];
      m.data()[i] = orig + h;
      double fp = eval();
      m.data()[i] = orig - h;
      double fm = eval();
      m.data()[i] = orig;
      double num = (fp - fm) / (2 * h);
      double ana = analytic[li].data()[i];
      double err = std::abs(num - ana) / std::max({1.0, std::abs(num), std::abs(ana)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline Mat<double> random_mat(Index r, Index c, Rng& rng, double scale = 1.0) {
  Mat<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * scale;
  return m;
}

}  // namespace goldi::testutil

#include "goldi/params.hpp"

namespace goldi::testutil {

// Finite differences over every coordinate of every parameter in a store,
// against the analytic gradients of one taped forward pass.
inline double store_gradcheck(
    model::ParamStore<double>& store,
    const std::function<ad::Var<double>(ad::Graph<double>&,
                                        const model::Binding<double>&)>& build,
    double h = 1e-5) {
  auto eval = [&]() {
    ad::Graph<double> g;
    model::Binding<double> b(g, store, /*trainable=*/true);
    return build(g, b).scalar();
  };

  ad::Graph<double> g;
  model::Binding<double> b(g, store, true);
  ad::Var<double> root = build(g, b);
  g.backward(root);
  auto grads = b.gradients(g);

  double worst = 0.0;
  for (auto& p : store.all()) {
    const Mat<double>& ana = grads.at(p.name);
    for (Index i = 0; i < p.value.size(); ++i) {
      double orig = p.value.data()[i];
      p.value.data()[i] = orig + h;
      double fp = eval();
      p.value.data()[i] = orig - h;
      double fm = eval();
      p.value.data()[i] = orig;
      double num = (fp - fm) / (2 * h);
      double err = std::abs(num - ana.data()[i]) /
                   std::max({1.0, std::abs(num), std::abs(ana.data()[i])});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace goldi::testutil
