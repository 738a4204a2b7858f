#include "entrain/student_t.hpp"

#include <cmath>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "entrain/error.hpp"

namespace entrain {
namespace {

void require_df(int df) {
  if (df < 1) throw StatsError(fmt::format("degrees of freedom must be >= 1, got {}", df));
}

void require_open_unit(double prob) {
  if (!(prob > 0.0 && prob < 1.0)) {
    throw StatsError(fmt::format("probability must lie in (0, 1), got {}", prob));
  }
}

}  // namespace

double student_t_cdf(double t, int df) {
  require_df(df);
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  boost::math::students_t dist(df);
  return boost::math::cdf(dist, t);
}

double student_t_two_sided_p(double t, int df) {
  require_df(df);
  if (std::isnan(t)) throw StatsError("t statistic is NaN");
  const double abs_t = std::fabs(t);
  if (std::isinf(abs_t)) return 0.0;
  if (abs_t == 0.0) return 1.0;
  boost::math::students_t dist(df);
  // Upper tail via the complement keeps precision for large |t|.
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, abs_t)));
}

double student_t_quantile(double prob, int df) {
  require_df(df);
  require_open_unit(prob);
  if (prob == 0.5) return 0.0;
  boost::math::students_t dist(df);
  return boost::math::quantile(dist, prob);
}

double normal_quantile(double prob) {
  require_open_unit(prob);
  return boost::math::quantile(boost::math::normal(), prob);
}

double normal_two_sided_p(double z) {
  const double abs_z = std::fabs(z);
  if (std::isinf(abs_z)) return 0.0;
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), abs_z)));
}

}  // namespace entrain
