#pragma once

namespace entrain {

// CDF of Student's t with `df` degrees of freedom.
double student_t_cdf(double t, int df);

// Two-sided tail probability 2 * (1 - CDF(|t|)); 1 at t = 0, 0 at |t| = inf.
double student_t_two_sided_p(double t, int df);

// Inverse CDF; prob must lie strictly inside (0, 1).
double student_t_quantile(double prob, int df);

double normal_quantile(double prob);
double normal_two_sided_p(double z);

}  // namespace entrain
