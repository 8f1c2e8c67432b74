#include "scan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace scan {

GradReport check_gradients(const std::string& op_name, const std::vector<ParamBinding>& bindings,
                           const std::function<double()>& loss, const GradCheckOptions& opt) {
  GradReport report;
  report.op_name = op_name;
  for (const auto& b : bindings) {
    for (std::size_t i = 0; i < b.size; ++i) {
      double saved = b.data[i];
      b.data[i] = saved + opt.step;
      double up = loss();
      b.data[i] = saved - opt.step;
      double down = loss();
      b.data[i] = saved;
      double numeric = (up - down) / (2.0 * opt.step);
      double analytic = b.analytic[i];
      double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      double rel = std::fabs(analytic - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = b.name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  report.pass = report.max_rel_error <= opt.tolerance;
  return report;
}

std::string format_report(const GradReport& r) {
  std::ostringstream os;
  os << (r.pass ? "PASS " : "FAIL ") << r.op_name << ": max_rel_error=" << r.max_rel_error
     << " over " << r.checked << " coords";
  if (!r.worst_param.empty())
    os << " (worst " << r.worst_param << "[" << r.worst_index << "] analytic=" << r.worst_analytic
       << " numeric=" << r.worst_numeric << ")";
  return os.str();
}

}  // namespace scan
