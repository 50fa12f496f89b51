#include "dpkip/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dpkip/errors.hpp"

namespace dpkip {

namespace {

void check_mechanism(double q, double sigma) {
  if (!(q > 0.0 && q <= 1.0))
    throw ConfigError("sampling rate q must be in (0, 1], got " +
                      std::to_string(q));
  if (!(sigma > 0.0))
    throw ConfigError("noise multiplier sigma must be > 0, got " +
                      std::to_string(sigma));
}

double log_sum_exp(const std::vector<double>& terms) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double t : terms) mx = std::max(mx, t);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

}  // namespace

double gaussian_rdp(int alpha, double sigma) {
  if (alpha < 2) throw ConfigError("RDP order must be an integer >= 2");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
  return alpha / (2.0 * sigma * sigma);
}

double subsampled_gaussian_rdp(int alpha, double q, double sigma) {
  if (alpha < 2) throw ConfigError("RDP order must be an integer >= 2");
  check_mechanism(q, sigma);
  if (q == 1.0) return gaussian_rdp(alpha, sigma);

  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  std::vector<double> terms;
  terms.reserve(alpha + 1);
  for (int k = 0; k <= alpha; ++k) {
    double log_binom = std::lgamma(alpha + 1.0) - std::lgamma(k + 1.0) -
                       std::lgamma(alpha - k + 1.0);
    double t = log_binom + (alpha - k) * log_1mq + k * log_q +
               k * (k - 1.0) / (2.0 * sigma * sigma);
    terms.push_back(t);
  }
  double eps = log_sum_exp(terms) / (alpha - 1.0);
  return std::max(eps, 0.0);
}

RdpCurve subsampled_gaussian_curve(double q, double sigma, int max_order) {
  if (max_order < 2) throw ConfigError("max_order must be >= 2");
  RdpCurve c;
  for (int a = 2; a <= max_order; ++a) {
    c.orders.push_back(a);
    c.eps.push_back(subsampled_gaussian_rdp(a, q, sigma));
  }
  return c;
}

RdpCurve compose(const RdpCurve& curve, long steps) {
  if (steps < 1) throw ConfigError("composition steps must be >= 1");
  RdpCurve out = curve;
  for (double& e : out.eps) e *= static_cast<double>(steps);
  return out;
}

DpConversion rdp_to_dp(const RdpCurve& curve, double delta) {
  if (curve.orders.empty()) throw ConfigError("empty RDP curve");
  if (!(delta > 0.0 && delta < 1.0))
    throw ConfigError("delta must be in (0, 1)");
  const double log_inv_delta = std::log(1.0 / delta);
  DpConversion best{std::numeric_limits<double>::infinity(), 0};
  for (size_t i = 0; i < curve.orders.size(); ++i) {
    double eps = curve.eps[i] + log_inv_delta / (curve.orders[i] - 1.0);
    if (eps < best.epsilon) best = {eps, curve.orders[i]};
  }
  return best;
}

DpConversion account(const AccountantConfig& cfg, double delta) {
  auto curve = subsampled_gaussian_curve(cfg.q, cfg.sigma, cfg.max_order);
  return rdp_to_dp(compose(curve, cfg.steps), delta);
}

double calibrate_sigma(const PrivacyParams& target, double q, long steps,
                       int max_order) {
  if (!(target.epsilon > 0.0)) throw ConfigError("target epsilon must be > 0");
  if (!(target.delta > 0.0 && target.delta < 1.0))
    throw ConfigError("target delta must be in (0, 1)");
  auto eps_at = [&](double sigma) {
    return account({q, sigma, steps, max_order}, target.delta).epsilon;
  };

  // Bracket: grow hi until the target is met, shrink lo until violated.
  double lo = 0.5, hi = 1.0;
  int guard = 0;
  while (eps_at(hi) > target.epsilon) {
    hi *= 2.0;
    if (++guard > 60)
      throw NumericError("sigma calibration: no upper bracket below 2^60");
  }
  guard = 0;
  while (eps_at(lo) <= target.epsilon) {
    hi = lo;
    lo *= 0.5;
    if (++guard > 200)
      throw NumericError("sigma calibration: target met at sigma -> 0");
  }

  for (int it = 0; it < 200 && (hi - lo) > 1e-4 * hi; ++it) {
    double mid = 0.5 * (lo + hi);
    (eps_at(mid) <= target.epsilon ? hi : lo) = mid;
  }
  if ((hi - lo) > 1e-4 * hi)
    throw NumericError("sigma calibration did not converge; bracket [" +
                       std::to_string(lo) + ", " + std::to_string(hi) + "]");
  // hi always satisfies the target.
  return hi;
}

double feature_map_snr(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
  return 1.0 / (2.0 * sigma);
}

}  // namespace dpkip
