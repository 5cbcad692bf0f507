#pragma once

namespace iofhmm {

// exp(x^2) erfc(x), finite for large positive x.
double erfcx(double x);
double log_half_erfcx(double x);
double log_normal_cdf(double x);
// phi(x) / Phi(x) (inverse Mills ratio of the lower tail).
double normal_hazard_ratio(double x);

}  // namespace iofhmm
