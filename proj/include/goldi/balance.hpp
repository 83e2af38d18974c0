#pragma once

#include <array>
#include <cmath>
#include <map>
#include <ostream>
#include <string>

#include "goldi/model.hpp"

namespace goldi::train {

struct TaskEntry {
  bool present = false;
  double loss = 0.0;        // raw task loss (before the static multiplier)
  double multiplier = 1.0;  // static per-task weight, composed before 1/sigma^2
  double sigma2 = 1.0;
  double coeff = 1.0;  // 1 / sigma^2
};

// Six per-task losses, their uncertainty weights and the weighted total.
// Absent tasks contribute neither L/sigma^2 nor the sigma^2 regularizer.
struct TaskLossReport {
  long long step = 0;
  std::array<TaskEntry, 6> tasks;  // order matches model::task_names()
  double total = 0.0;

  static int task_index(const std::string& name) {
    const auto& names = model::task_names();
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    fail("unknown task name: " + name);
  }
};

template <typename S>
struct BalanceResult {
  ad::Var<S> total;
  TaskLossReport report;
};

// L_total = sum over present tasks of mult*L/sigma^2 + sigma^2, with
// sigma^2 = exp(s) read from the balance/s_* parameters of the binding.
template <typename S>
BalanceResult<S> total_loss(const model::Binding<S>& b,
                            const std::map<std::string, ad::Var<S>>& losses,
                            const std::map<std::string, double>& multipliers,
                            long long step) {
  using namespace ad;
  BalanceResult<S> out;
  out.report.step = step;
  Var<S> total;
  for (const auto& name : model::task_names()) {
    int idx = TaskLossReport::task_index(name);
    TaskEntry& entry = out.report.tasks[static_cast<size_t>(idx)];
    auto s_var = b("balance/s_" + name);
    entry.sigma2 = std::exp(static_cast<double>(s_var.scalar()));
    entry.coeff = 1.0 / entry.sigma2;
    auto it = losses.find(name);
    if (it == losses.end()) continue;
    S raw = it->second.scalar();
    require(std::isfinite(static_cast<double>(raw)),
            "total_loss: non-finite loss for task '" + name + "'");
    entry.present = true;
    entry.loss = static_cast<double>(raw);
    auto mit = multipliers.find(name);
    entry.multiplier = mit == multipliers.end() ? 1.0 : mit->second;
    auto weighted = smul(it->second, static_cast<S>(entry.multiplier));
    auto term = add(mul(weighted, exp_(neg(s_var))), exp_(s_var));
    total = total.valid() ? add(total, term) : term;
  }
  require(total.valid(), "total_loss: no task losses present");
  out.total = total;
  out.report.total = static_cast<double>(total.scalar());
  return out;
}

inline void write_coefficients_header(std::ostream& os) {
  os << "step";
  for (const auto& t : model::task_names()) os << ",sigma2_" << t;
  for (const auto& t : model::task_names()) os << ",loss_" << t;
  os << ",total\n";
}

// One CSV row per step; absent tasks log their sigma^2 but an empty loss.
inline void log_coefficients(const TaskLossReport& report, std::ostream& os) {
  os << report.step;
  char buf[32];
  for (const auto& entry : report.tasks) {
    std::snprintf(buf, sizeof(buf), "%.9g", entry.sigma2);
    os << ',' << buf;
  }
  for (const auto& entry : report.tasks) {
    os << ',';
    if (entry.present) {
      std::snprintf(buf, sizeof(buf), "%.9g", entry.loss);
      os << buf;
    }
  }
  std::snprintf(buf, sizeof(buf), "%.9g", report.total);
  os << ',' << buf << '\n';
  require(static_cast<bool>(os), "log_coefficients: write failed");
}

}  // namespace goldi::train
