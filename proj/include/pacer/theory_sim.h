#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pacer::sim {

// Repair rate alpha and damage rate beta, either constant or as functions of
// the consensus margin. Families are user-chosen; none is implied.
struct RateCurve {
  enum class Kind { kConstant, kStep, kLogistic };
  Kind kind = Kind::kConstant;
  double low = 0.0;    // value far below the midpoint / below the step
  double high = 0.0;   // value far above the midpoint / at or above the step
  double midpoint = 0.0;
  double steepness = 1.0;  // logistic only

  static RateCurve constant(double v) { return {Kind::kConstant, v, v, 0.0, 1.0}; }
  static RateCurve step(double below, double above, double at) {
    return {Kind::kStep, below, above, at, 1.0};
  }
  static RateCurve logistic(double low, double high, double midpoint,
                            double steepness) {
    return {Kind::kLogistic, low, high, midpoint, steepness};
  }

  double operator()(double margin) const;
};

struct RevisionModel {
  double p = 0.5;
  RateCurve alpha = RateCurve::constant(0.0);
  RateCurve beta = RateCurve::constant(0.0);
  int wrong_answer_arity = 3;
};

struct EnsembleModel {
  enum class Weights { kUnit, kLogNormal };
  int pool_size = 1;
  double p_prime = 0.5;
  int wrong_answer_arity = 3;
  Weights weights = Weights::kUnit;
  double lognormal_sigma = 0.5;
};

// (1 - p) * alpha >= p * beta.
bool stabilizing_check(double p, double alpha, double beta);

// p (1 - beta) + (1 - p) alpha.
double post_review_accuracy(double p, double alpha, double beta);

// exp(-2 B (p' - 1/2)^2). Throws kDomain for p' <= 1/2.
double chernoff_bound(int pool_size, double p_prime);

// 2 B (p - 1/2)^2, the exponent in the bound above.
double chernoff_exponent(int pool_size, double p);

// 2 B delta (2p - 1 + delta). Throws kDomain unless delta >= 0,
// p + delta <= 1 and p + delta > 1/2.
double voi_exponent_gain(int pool_size, double p, double delta);

struct Proportion {
  uint64_t successes = 0;
  uint64_t trials = 0;
  double estimate() const;
  double standard_error() const;
  // Normal-approximation 95% interval, clipped to [0, 1].
  double lower95() const;
  double upper95() const;
};

struct RevisionSimResult {
  double margin = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  Proportion pre;
  Proportion post;
  double closed_form_post = 0.0;
  uint64_t repairs = 0;
  uint64_t damages = 0;
};

// Draws per-trace correctness at p, then a repair (wrong -> right, prob
// alpha) or damage (right -> wrong, prob beta) event.
RevisionSimResult simulate_revision(const RevisionModel& model, uint64_t trials,
                                    uint64_t seed, double margin = 0.0);

// Evaluates alpha(margin), beta(margin) at every grid point.
std::vector<RevisionSimResult> sweep_margin(const RevisionModel& model,
                                            const std::vector<double>& margins,
                                            uint64_t trials, uint64_t seed);

// Fraction of trials where the weighted vote over pool_size independent
// revised answers misses the truth. Wrong votes split uniformly over the
// wrong answers; vote ties resolve against the truth.
Proportion simulate_vote_error(const EnsembleModel& model, uint64_t trials,
                               uint64_t seed);

struct SweepRow {
  int pool_size = 0;
  double p_prime = 0.0;
  double empirical_error = 0.0;
  double bound = 0.0;
  uint64_t trials = 0;
  uint64_t seed = 0;
  double standard_error = 0.0;
};

std::vector<SweepRow> vote_error_sweep(const std::vector<int>& pool_sizes,
                                       const std::vector<double>& p_primes,
                                       uint64_t trials, uint64_t seed,
                                       int wrong_answer_arity = 3,
                                       EnsembleModel::Weights weights =
                                           EnsembleModel::Weights::kUnit);

inline const std::vector<int> kDefaultPoolSizes{1, 5, 11, 33, 101};
inline const std::vector<double> kDefaultPPrimes{0.55, 0.6, 0.7, 0.9};

// B,p_prime,empirical_error,bound,trials,seed
std::string sweep_csv(const std::vector<SweepRow>& rows);

// Sub-seed for chunk `index`, derived from the master seed with splitmix64.
uint64_t derive_seed(uint64_t master, uint64_t index);

}  // namespace pacer::sim
