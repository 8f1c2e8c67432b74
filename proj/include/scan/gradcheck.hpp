#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace scan {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
};

struct GradReport {
  std::string op_name;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool pass = false;
};

// One tensor participating in a check: `data` is nudged in place (and
// restored), `analytic` holds the gradient under test, same length.
struct ParamBinding {
  std::string name;
  double* data = nullptr;
  std::size_t size = 0;
  const double* analytic = nullptr;
};

// Central-difference comparison of `analytic` against (f(x+h)-f(x-h))/2h
// for every coordinate of every binding. Relative error uses a 1e-8 floor
// so near-zero gradients do not blow up the ratio.
GradReport check_gradients(const std::string& op_name, const std::vector<ParamBinding>& bindings,
                           const std::function<double()>& loss,
                           const GradCheckOptions& opt = {});

std::string format_report(const GradReport& report);

}  // namespace scan
