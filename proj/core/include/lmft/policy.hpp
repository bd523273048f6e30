#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

// Learnable motion threshold: tau = sigmoid(u), u ~ Normal(mu, sigma^2),
// trained by REINFORCE with an exponential-moving-average baseline.

namespace lmft {

inline constexpr double kLogSigmaMin = -5.0;
inline constexpr double kLogSigmaMax = 2.0;
inline constexpr double kBaselineMomentum = 0.9;

struct ThresholdPolicy {
  double mu = 0.01;
  double log_sigma = -1.0;
  double baseline = 0.0;
  double step_size = 1e-2;

  double sigma() const;
};

struct PolicySample {
  double u = 0.0;
  double tau = 0.5;
  double log_density = 0.0;
};

struct PolicyGradient {
  double d_mu = 0.0;
  double d_log_sigma = 0.0;
};

double sigmoid(double u);
double logit(double tau);

PolicySample sample_threshold(const ThresholdPolicy& p, std::mt19937_64& rng);

/// log N(logit(tau); mu, sigma^2) − log tau − log(1 − tau). Throws for tau ∉ (0,1).
double log_policy_density(const ThresholdPolicy& p, double tau);

/// With z = (logit(tau) − mu) / sigma: d/dmu = z / sigma, d/dlog_sigma = z² − 1.
PolicyGradient grad_log_policy(const ThresholdPolicy& p, double tau);

/// theta += step · (R − b) · grad log pi(tau); then b ← 0.9 b + 0.1 R; log_sigma clamped.
ThresholdPolicy reinforce_update(const ThresholdPolicy& p, const PolicySample& s, double reward);

/// Monte-Carlo estimate of E[sigmoid(mu + sigma·eps)] from K fixed-seed draws.
double deterministic_threshold(const ThresholdPolicy& p, int samples = 100, std::uint64_t seed = 0);

}  // namespace lmft
