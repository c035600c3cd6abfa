#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "mforge/grid.hpp"

namespace mforge {

/// Per-voxel Euclidean norm of pred.map - truth.map, in voxel units.
template <class Real>
Field64 deformation_error(const DeformationMap<Real>& pred, const DeformationMap<Real>& truth) {
  require_same_grid(pred.grid(), truth.grid(), "deformation_error");
  const GridSpec& g = pred.grid();
  Field64 out(g);
  for (std::size_t i = 0; i < g.voxels(); ++i) {
    double s = 0;
    for (int a = 0; a < g.dim; ++a) {
      const double d = (static_cast<double>(pred.map[a][i]) - truth.map[a][i]) / g.spacing[a];
      s += d * d;
    }
    out[i] = std::sqrt(s);
  }
  return out;
}

/// Report quantiles, in percent.
inline const std::vector<double>& report_quantiles() {
  static const std::vector<double> q{0.3, 5, 25, 50, 75, 95, 99.7};
  return q;
}

/// Linear-interpolation quantiles (fraction q at rank q*(n-1)) of `values`, q in percent.
inline std::vector<double> percentiles(std::vector<double> values, const std::vector<double>& q_percent) {
  if (values.empty()) throw DataError("percentiles of an empty collection");
  for (double v : values)
    if (!std::isfinite(v)) throw NumericalError("percentiles: non-finite value");
  std::sort(values.begin(), values.end());
  std::vector<double> out;
  const double last = static_cast<double>(values.size() - 1);
  for (double qp : q_percent) {
    if (!(qp >= 0 && qp <= 100)) throw UsageError("quantile must be in [0, 100]");
    const double rank = qp / 100.0 * last;
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double f = rank - static_cast<double>(lo);
    out.push_back(values[lo] + f * (values[hi] - values[lo]));
  }
  return out;
}

/// Pools voxel values across fields.
class ErrorPool {
 public:
  void add(const Field64& f) { values_.insert(values_.end(), f.values().begin(), f.values().end()); }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  std::vector<double> percentiles(const std::vector<double>& q = report_quantiles()) const {
    return mforge::percentiles(values_, q);
  }
  double median() const { return percentiles({50})[0]; }

 private:
  std::vector<double> values_;
};

/// Report columns: identity baseline, deterministic prediction, optional Bayesian mean.
struct EvalColumns {
  std::vector<double> identity;
  std::vector<double> prediction;
  std::vector<double> bayesian;  // empty when absent
};

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// CSV with header quantile,identity_baseline,prediction[,bayesian]; one row per quantile.
inline std::string eval_report_csv(const EvalColumns& c, const std::vector<double>& q = report_quantiles()) {
  if (c.identity.size() != q.size() || c.prediction.size() != q.size() ||
      (!c.bayesian.empty() && c.bayesian.size() != q.size()))
    throw UsageError("eval report columns must have one value per quantile");
  std::string out = c.bayesian.empty() ? "quantile,identity_baseline,prediction\n"
                                       : "quantile,identity_baseline,prediction,bayesian\n";
  for (std::size_t i = 0; i < q.size(); ++i) {
    out += format_number(q[i]) + "," + format_number(c.identity[i]) + "," + format_number(c.prediction[i]);
    if (!c.bayesian.empty()) out += "," + format_number(c.bayesian[i]);
    out += "\n";
  }
  return out;
}

}  // namespace mforge
