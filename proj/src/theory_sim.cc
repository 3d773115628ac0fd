#include "pacer/theory_sim.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <thread>

#include "pacer/error.h"
#include "pacer/parallel.h"
#include "pacer/revision.h"

namespace pacer::sim {
namespace {

constexpr uint64_t kTrialsPerChunk = 1 << 15;

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

size_t worker_count() {
  return std::max(1u, std::thread::hardware_concurrency());
}

// Splits [0, trials) into fixed-size chunks, each with its own derived seed,
// so results do not depend on how many threads run them.
template <typename Fn>
uint64_t chunked_count(uint64_t trials, uint64_t seed, Fn&& fn) {
  const uint64_t chunks = (trials + kTrialsPerChunk - 1) / kTrialsPerChunk;
  std::vector<uint64_t> partial(chunks, 0);
  parallel_for(chunks, worker_count(), [&](size_t c) {
    const uint64_t begin = c * kTrialsPerChunk;
    const uint64_t end = std::min(trials, begin + kTrialsPerChunk);
    std::mt19937_64 rng(derive_seed(seed, c));
    partial[c] = fn(rng, end - begin);
  });
  uint64_t total = 0;
  for (uint64_t v : partial) total += v;
  return total;
}

void check_probability(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw Error(ErrorKind::kDomain, std::string(name) + " must lie in [0, 1]");
  }
}

}  // namespace

uint64_t derive_seed(uint64_t master, uint64_t index) {
  uint64_t z = master + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double RateCurve::operator()(double margin) const {
  switch (kind) {
    case Kind::kConstant:
      return low;
    case Kind::kStep:
      return margin >= midpoint ? high : low;
    case Kind::kLogistic:
      return low + (high - low) / (1.0 + std::exp(-steepness * (margin - midpoint)));
  }
  return low;
}

bool stabilizing_check(double p, double alpha, double beta) {
  return (1.0 - p) * alpha >= p * beta;
}

double post_review_accuracy(double p, double alpha, double beta) {
  return p * (1.0 - beta) + (1.0 - p) * alpha;
}

double chernoff_exponent(int pool_size, double p) {
  const double d = p - 0.5;
  return 2.0 * pool_size * d * d;
}

double chernoff_bound(int pool_size, double p_prime) {
  if (!(p_prime > 0.5)) {
    throw Error(ErrorKind::kDomain, "bound requires p' > 1/2");
  }
  if (pool_size < 1) throw Error(ErrorKind::kDomain, "pool size must be >= 1");
  return std::exp(-chernoff_exponent(pool_size, p_prime));
}

double voi_exponent_gain(int pool_size, double p, double delta) {
  if (!(delta >= 0.0) || p + delta > 1.0 || !(p + delta > 0.5)) {
    throw Error(ErrorKind::kDomain,
                "requires delta >= 0, p + delta <= 1 and p + delta > 1/2");
  }
  return 2.0 * pool_size * delta * (2.0 * p - 1.0 + delta);
}

double Proportion::estimate() const {
  return trials == 0 ? 0.0 : static_cast<double>(successes) / trials;
}

double Proportion::standard_error() const {
  if (trials == 0) return 0.0;
  const double e = estimate();
  return std::sqrt(e * (1.0 - e) / static_cast<double>(trials));
}

double Proportion::lower95() const {
  return std::max(0.0, estimate() - 1.96 * standard_error());
}

double Proportion::upper95() const {
  return std::min(1.0, estimate() + 1.96 * standard_error());
}

RevisionSimResult simulate_revision(const RevisionModel& model, uint64_t trials,
                                    uint64_t seed, double margin) {
  const double alpha = model.alpha(margin);
  const double beta = model.beta(margin);
  check_probability(model.p, "p");
  check_probability(alpha, "alpha");
  check_probability(beta, "beta");
  if (trials == 0) throw Error(ErrorKind::kDomain, "trials must be >= 1");

  // Pack (pre correct, post correct, repair, damage) counts in one pass.
  struct Counts {
    uint64_t pre = 0, post = 0, repairs = 0, damages = 0;
  };
  const uint64_t chunks = (trials + kTrialsPerChunk - 1) / kTrialsPerChunk;
  std::vector<Counts> partial(chunks);
  parallel_for(chunks, worker_count(), [&](size_t c) {
    const uint64_t begin = c * kTrialsPerChunk;
    const uint64_t n = std::min(trials, begin + kTrialsPerChunk) - begin;
    std::mt19937_64 rng(derive_seed(seed, c));
    Counts& out = partial[c];
    for (uint64_t i = 0; i < n; ++i) {
      const bool correct = uniform01(rng) < model.p;
      const double u = uniform01(rng);
      bool after = correct;
      if (correct && u < beta) {
        after = false;
        ++out.damages;
      } else if (!correct && u < alpha) {
        after = true;
        ++out.repairs;
      }
      out.pre += correct;
      out.post += after;
    }
  });

  RevisionSimResult r;
  r.margin = margin;
  r.alpha = alpha;
  r.beta = beta;
  r.pre.trials = r.post.trials = trials;
  for (const auto& c : partial) {
    r.pre.successes += c.pre;
    r.post.successes += c.post;
    r.repairs += c.repairs;
    r.damages += c.damages;
  }
  r.closed_form_post = post_review_accuracy(model.p, alpha, beta);
  return r;
}

std::vector<RevisionSimResult> sweep_margin(const RevisionModel& model,
                                            const std::vector<double>& margins,
                                            uint64_t trials, uint64_t seed) {
  std::vector<RevisionSimResult> out;
  out.reserve(margins.size());
  for (size_t i = 0; i < margins.size(); ++i) {
    out.push_back(simulate_revision(model, trials, derive_seed(seed, 1000 + i),
                                    margins[i]));
  }
  return out;
}

Proportion simulate_vote_error(const EnsembleModel& model, uint64_t trials,
                               uint64_t seed) {
  check_probability(model.p_prime, "p_prime");
  if (model.pool_size < 1) throw Error(ErrorKind::kDomain, "pool size must be >= 1");
  if (model.wrong_answer_arity < 1) {
    throw Error(ErrorKind::kDomain, "wrong-answer arity must be >= 1");
  }
  if (trials == 0) throw Error(ErrorKind::kDomain, "trials must be >= 1");

  const int arity = model.wrong_answer_arity;
  const int truth = arity;  // largest label, so every tie goes against it
  const auto pool = static_cast<size_t>(model.pool_size);

  const uint64_t errors = chunked_count(trials, seed, [&](std::mt19937_64& rng,
                                                          uint64_t n) {
    std::vector<int> labels(pool);
    std::vector<double> weights(pool, 1.0);
    std::lognormal_distribution<double> lognormal(0.0, model.lognormal_sigma);
    uint64_t wrong = 0;
    for (uint64_t t = 0; t < n; ++t) {
      for (size_t i = 0; i < pool; ++i) {
        if (uniform01(rng) < model.p_prime) {
          labels[i] = truth;
        } else {
          labels[i] = static_cast<int>(uniform01(rng) * arity);
        }
        if (model.weights == EnsembleModel::Weights::kLogNormal) {
          weights[i] = lognormal(rng);
        }
      }
      if (weighted_vote_labels(labels, weights, arity + 1) != truth) ++wrong;
    }
    return wrong;
  });
  return Proportion{errors, trials};
}

std::vector<SweepRow> vote_error_sweep(const std::vector<int>& pool_sizes,
                                       const std::vector<double>& p_primes,
                                       uint64_t trials, uint64_t seed,
                                       int wrong_answer_arity,
                                       EnsembleModel::Weights weights) {
  std::vector<SweepRow> rows;
  uint64_t point = 0;
  for (int b : pool_sizes) {
    for (double pp : p_primes) {
      EnsembleModel m;
      m.pool_size = b;
      m.p_prime = pp;
      m.wrong_answer_arity = wrong_answer_arity;
      m.weights = weights;
      const Proportion err = simulate_vote_error(m, trials, derive_seed(seed, point++));
      SweepRow row;
      row.pool_size = b;
      row.p_prime = pp;
      row.empirical_error = err.estimate();
      row.standard_error = err.standard_error();
      row.bound = pp > 0.5 ? chernoff_bound(b, pp) : 1.0;
      row.trials = trials;
      row.seed = seed;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "B,p_prime,empirical_error,bound,trials,seed\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.6g,%.8f,%.8f,%llu,%llu\n", r.pool_size,
                  r.p_prime, r.empirical_error, r.bound,
                  static_cast<unsigned long long>(r.trials),
                  static_cast<unsigned long long>(r.seed));
    out << buf;
  }
  return out.str();
}

}  // namespace pacer::sim
