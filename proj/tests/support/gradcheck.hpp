#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "cisum/model.hpp"

namespace gradcheck {

struct Report {
  double worst_relative = 0;
  double worst_absolute = 0;
  std::string worst_name;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `analytic` fills Parameter::grad for every parameter; `value` evaluates
// the scalar objective at the current parameter values.
inline Report compare(cisum::model::ParameterSet& params, const std::function<void()>& analytic,
                      const std::function<double()>& value, double eps = 1e-4, double floor = 1e-6) {
  params.zero_grad();
  analytic();
  Report r;
  for (auto& p : params.all()) {
    for (cisum::Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = value();
      x = saved - eps;
      const double down = value();
      x = saved;
      const double numeric = (up - down) / (2 * eps);
      const double a = p.grad.size() ? p.grad.data()[i] : 0.0;
      const double rel = relative_error(a, numeric, floor);
      r.worst_absolute = std::max(r.worst_absolute, std::abs(a - numeric));
      if (rel > r.worst_relative || r.checked == 0) {
        if (rel > r.worst_relative) r.worst_name = p.name + "[" + std::to_string(i) + "]";
        r.worst_relative = std::max(r.worst_relative, rel);
      }
      ++r.checked;
    }
  }
  return r;
}

}  // namespace gradcheck
