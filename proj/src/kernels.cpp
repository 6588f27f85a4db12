#include "llmrel/kernels.hpp"

#include "llmrel/agreement.hpp"

#ifdef LLMREL_HAVE_OPENMP
#include <omp.h>
#endif

namespace llmrel {

int max_threads() {
#ifdef LLMREL_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

std::vector<std::optional<double>> leave_one_out(const RatingsMatrix& matrix, Metric metric,
                                                 std::span<const std::size_t> subjects,
                                                 Execution exec) {
  return map_indices(subjects.size(), exec, [&](std::size_t j) {
    return coefficient_value(metric, matrix, subjects[j]);
  });
}

MonteCarloResult monte_carlo(std::size_t trials, std::uint64_t seed, Execution exec,
                             const std::function<double(Rng&)>& fn, double discard_cap) {
  // Attempts per trial are bounded so a hopeless configuration fails fast;
  // the global cap below is the contract.
  const std::size_t max_attempts =
      1 + static_cast<std::size_t>(discard_cap * static_cast<double>(trials));
  std::vector<std::size_t> discards(trials, 0);

  auto values = map_indices(trials, exec, [&](std::size_t t) -> double {
    for (std::size_t a = 0; a < max_attempts; ++a) {
      Rng rng(derive_seed(seed, {t, a}));
      try {
        return fn(rng);
      } catch (const UndefinedCoefficient&) {
      } catch (const PreconditionError&) {
      }
      ++discards[t];
    }
    throw UndefinedCoefficient("trial exhausted its redraw budget");
  });

  MonteCarloResult result;
  result.values.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    result.discarded += discards[t];
    if (values[t]) result.values.push_back(*values[t]);
  }
  if (static_cast<double>(result.discarded) > discard_cap * static_cast<double>(trials) ||
      result.values.size() != trials)
    throw UndefinedCoefficient("Monte Carlo: " + std::to_string(result.discarded) +
                               " undefined draws across " + std::to_string(trials) +
                               " trials exceeds the discard cap");
  return result;
}

}  // namespace llmrel
