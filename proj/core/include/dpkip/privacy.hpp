#pragma once

#include <vector>

namespace dpkip {

struct PrivacyParams {
  double epsilon = 0.0;  // > 0
  double delta = 0.0;    // in (0, 1)
};

/// Renyi-DP curve: epsilon_RDP(alpha) over a grid of integer orders.
struct RdpCurve {
  std::vector<int> orders;
  std::vector<double> eps;
};

struct AccountantConfig {
  double q = 1.0;       // Poisson sampling rate, (0, 1]
  double sigma = 1.0;   // noise multiplier, > 0
  long steps = 1;       // compositions, >= 1
  int max_order = 256;  // orders 2..max_order
};

/// RDP of the (unsubsampled) Gaussian mechanism: alpha / (2 sigma^2).
double gaussian_rdp(int alpha, double sigma);

/// Integer-order upper bound for the Poisson-subsampled Gaussian:
///   eps(alpha) = log( sum_{k=0}^{alpha} C(alpha,k) (1-q)^{alpha-k} q^k
///                     exp(k(k-1)/(2 sigma^2)) ) / (alpha - 1),
/// evaluated in log space.
double subsampled_gaussian_rdp(int alpha, double q, double sigma);

/// Curve over orders 2..max_order for one mechanism invocation.
RdpCurve subsampled_gaussian_curve(double q, double sigma, int max_order = 256);

/// T-fold composition: every eps multiplied by T.
RdpCurve compose(const RdpCurve& curve, long steps);

struct DpConversion {
  double epsilon;
  int order;  // arg-min alpha
};

/// (eps, delta) from an RDP curve: min over the grid of
/// eps_RDP(alpha) + log(1/delta)/(alpha-1).
DpConversion rdp_to_dp(const RdpCurve& curve, double delta);

/// Full accounting for a run.
DpConversion account(const AccountantConfig& cfg, double delta);

/// Smallest noise multiplier (relative tolerance 1e-4) whose accounted
/// epsilon does not exceed the target.
double calibrate_sigma(const PrivacyParams& target, double q, long steps,
                       int max_order = 256);

/// Signal-to-noise ratio of privatizing unit-norm feature maps directly
/// (sensitivity 2): 1 / (2 sigma). Implemented as analysis only; the
/// mechanism itself is deliberately not.
double feature_map_snr(double sigma);

}  // namespace dpkip
