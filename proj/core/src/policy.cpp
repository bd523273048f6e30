#include "lmft/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lmft {

double ThresholdPolicy::sigma() const { return std::exp(log_sigma); }

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double logit(double tau) { return std::log(tau) - std::log1p(-tau); }

namespace {

void require_open_unit(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw std::domain_error("threshold must lie strictly inside (0,1), got " + std::to_string(tau));
  }
}

}  // namespace

PolicySample sample_threshold(const ThresholdPolicy& p, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  PolicySample s;
  // Resample in the (astronomically rare) case sigmoid saturates to 0 or 1 in double.
  do {
    s.u = p.mu + p.sigma() * normal(rng);
    s.tau = sigmoid(s.u);
  } while (!(s.tau > 0.0 && s.tau < 1.0));
  s.log_density = log_policy_density(p, s.tau);
  return s;
}

double log_policy_density(const ThresholdPolicy& p, double tau) {
  require_open_unit(tau);
  const double sigma = p.sigma();
  const double z = (logit(tau) - p.mu) / sigma;
  const double log_normal = -0.5 * z * z - p.log_sigma - 0.5 * std::log(2.0 * std::numbers::pi);
  return log_normal - std::log(tau) - std::log1p(-tau);
}

PolicyGradient grad_log_policy(const ThresholdPolicy& p, double tau) {
  require_open_unit(tau);
  const double sigma = p.sigma();
  const double z = (logit(tau) - p.mu) / sigma;
  return {z / sigma, z * z - 1.0};
}

ThresholdPolicy reinforce_update(const ThresholdPolicy& p, const PolicySample& s, double reward) {
  if (!std::isfinite(reward)) throw std::domain_error("non-finite reward");
  ThresholdPolicy next = p;
  const double advantage = reward - p.baseline;
  const PolicyGradient g = grad_log_policy(p, s.tau);
  next.mu += p.step_size * advantage * g.d_mu;
  next.log_sigma = std::clamp(p.log_sigma + p.step_size * advantage * g.d_log_sigma, kLogSigmaMin, kLogSigmaMax);
  next.baseline = kBaselineMomentum * p.baseline + (1.0 - kBaselineMomentum) * reward;
  return next;
}

double deterministic_threshold(const ThresholdPolicy& p, int samples, std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("deterministic_threshold needs K >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = p.sigma();
  double acc = 0.0;
  for (int k = 0; k < samples; ++k) acc += sigmoid(p.mu + sigma * normal(rng));
  return acc / samples;
}

}  // namespace lmft
