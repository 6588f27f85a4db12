#pragma once

// Data-parallel kernels. Each kernel has a serial path that is kept as the
// reference implementation; the OpenMP path must produce bit-identical
// results because every index is evaluated independently and reductions
// run serially over the index-ordered outputs.

#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llmrel/errors.hpp"
#include "llmrel/rng.hpp"

namespace llmrel {

class RatingsMatrix;
enum class Metric;

enum class Execution { serial, parallel };

/// Evaluates fn(i) for every i in [0, n). UndefinedCoefficient and
/// PreconditionError raised by fn mark that index as undefined (nullopt);
/// any other exception is rethrown after the loop.
template <class Fn>
std::vector<std::optional<double>> map_indices(std::size_t n, Execution exec, Fn fn) {
  std::vector<std::optional<double>> out(n);
  std::exception_ptr error;
  auto body = [&](std::size_t i) {
    try {
      out[i] = fn(i);
    } catch (const UndefinedCoefficient&) {
      out[i].reset();
    } catch (const PreconditionError&) {
      out[i].reset();
    } catch (...) {
#pragma omp critical(llmrel_map_indices_error)
      if (!error) error = std::current_exception();
    }
  };
  if (exec == Execution::parallel) {
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) body(i);
  }
  if (error) std::rethrow_exception(error);
  return out;
}

/// Leave-one-subject-out coefficient values for the given subject rows.
std::vector<std::optional<double>> leave_one_out(const RatingsMatrix& matrix, Metric metric,
                                                 std::span<const std::size_t> subjects,
                                                 Execution exec);

struct MonteCarloResult {
  std::vector<double> values;  // one per trial, trial-index order
  std::size_t discarded = 0;   // undefined draws that were redrawn
};

/// Runs `trials` independent trials. Trial t, attempt a draws from
/// Rng(derive_seed(seed, {t, a})); an attempt whose fn throws
/// UndefinedCoefficient/PreconditionError is discarded and redrawn. Throws
/// UndefinedCoefficient when discards exceed discard_cap * trials.
MonteCarloResult monte_carlo(std::size_t trials, std::uint64_t seed, Execution exec,
                             const std::function<double(Rng&)>& fn,
                             double discard_cap = 0.10);

int max_threads();

}  // namespace llmrel
