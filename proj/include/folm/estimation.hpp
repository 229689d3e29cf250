#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <folm/counts.hpp>
#include <folm/error.hpp>

namespace folm {

// Good-Turing discount ratios for counts 1..K; counts above K are not
// discounted. Where the count-of-counts histogram cannot support the
// Good-Turing ratio for some r, that r falls back to absolute discounting
// with subtrahend 0.5 and the fallback is recorded.
struct DiscountTable {
  std::int64_t K = 5;
  std::vector<double> beta;          // beta[r-1] for r = 1..K
  std::vector<bool> used_fallback;   // aligned with beta

  double discount(std::int64_t r) const {
    if (r > K) return 1.0;
    if (r < 1) throw_internal("no discount is defined for count " + std::to_string(r));
    return beta[static_cast<std::size_t>(r - 1)];
  }
  bool any_fallback() const {
    for (bool f : used_fallback)
      if (f) return true;
    return false;
  }
};

// Maximum-likelihood ratio, the top branch of the back-off recursion.
inline double mle(std::int64_t count_joint, std::int64_t count_context) {
  if (count_context <= 0)
    throw_data("undefined context: context count is zero");
  if (count_joint < 0 || count_joint > count_context)
    throw_internal("joint count exceeds context count");
  return static_cast<double>(count_joint) / static_cast<double>(count_context);
}

// Discount ratios per Katz:
//
//   beta_r = (r*/r - A) / (1 - A)
//   r*     = (r+1) n_{r+1} / n_r
//   A      = (K+1) n_{K+1} / n_1
//
// A ratio is accepted only when it lands in (0, 1]; otherwise the absolute
// fallback (r - 0.5)/r fires for that r.
inline DiscountTable good_turing_discounts(const CountOfCounts& noc, std::int64_t K) {
  if (K < 1) throw_usage("discount threshold K must be >= 1");
  DiscountTable table;
  table.K = K;
  table.beta.resize(static_cast<std::size_t>(K));
  table.used_fallback.assign(static_cast<std::size_t>(K), false);

  const double n1 = static_cast<double>(noc.at(1));
  const double common = n1 > 0.0
      ? static_cast<double>(K + 1) * static_cast<double>(noc.at(K + 1)) / n1
      : -1.0;  // sentinel: no singleton counts, nothing is estimable

  for (std::int64_t r = 1; r <= K; ++r) {
    double value = 0.0;
    bool valid = false;
    const double nr = static_cast<double>(noc.at(r));
    const double nr1 = static_cast<double>(noc.at(r + 1));
    if (common >= 0.0 && common < 1.0 && nr > 0.0) {
      const double rstar = static_cast<double>(r + 1) * nr1 / nr;
      value = (rstar / static_cast<double>(r) - common) / (1.0 - common);
      valid = std::isfinite(value) && value > 0.0 && value <= 1.0;
    }
    if (!valid) value = (static_cast<double>(r) - 0.5) / static_cast<double>(r);
    table.beta[static_cast<std::size_t>(r - 1)] = value;
    table.used_fallback[static_cast<std::size_t>(r - 1)] = !valid;
  }
  return table;
}

// Middle branch of the back-off recursion: the MLE ratio scaled by the
// discount for the observed joint count. Counts above K pass through.
inline double discounted_prob(std::int64_t count_joint, std::int64_t count_context,
                              const DiscountTable& discounts) {
  if (count_joint < 1)
    throw_internal("discounted_prob called with a zero joint count");
  return discounts.discount(count_joint) * mle(count_joint, count_context);
}

// Probability of a seen event under the first two branches combined.
inline double seen_prob(std::int64_t count_joint, std::int64_t count_context,
                        const DiscountTable& discounts) {
  return count_joint > discounts.K ? mle(count_joint, count_context)
                                   : discounted_prob(count_joint, count_context, discounts);
}

// Probability mass a context keeps aside for its unseen outcomes.
inline double reserved_mass(const CountTable& table, const std::string& ckey,
                            const DiscountTable& discounts) {
  const auto* seen = table.seen_outcomes(ckey);
  if (!seen) return 1.0;
  const std::int64_t cc = table.marginal(ckey);
  double sum = 0.0;
  for (const auto& [okey, cj] : *seen) sum += seen_prob(cj, cc, discounts);
  return 1.0 - sum;
}

}  // namespace folm
