#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "llmrel/agreement.hpp"
#include "llmrel/kernels.hpp"
#include "llmrel/rng.hpp"
#include "llmrel/simulator.hpp"

using namespace llmrel;

TEST_SUITE("kernels") {
  TEST_CASE("map_indices keeps index order and marks undefined entries") {
    for (Execution exec : {Execution::serial, Execution::parallel}) {
      const auto out = map_indices(100, exec, [](std::size_t i) -> double {
        if (i % 10 == 3) throw UndefinedCoefficient("skip");
        if (i % 10 == 7) throw PreconditionError("skip");
        return static_cast<double>(i) * 0.5;
      });
      REQUIRE(out.size() == 100);
      for (std::size_t i = 0; i < 100; ++i) {
        if (i % 10 == 3 || i % 10 == 7) CHECK_FALSE(out[i].has_value());
        else CHECK(*out[i] == static_cast<double>(i) * 0.5);
      }
    }
  }

  TEST_CASE("map_indices rethrows other errors") {
    CHECK_THROWS_AS(map_indices(50, Execution::parallel,
                                [](std::size_t i) -> double {
                                  if (i == 17) throw std::logic_error("boom");
                                  return 0.0;
                                }),
                    std::logic_error);
  }

  TEST_CASE("monte carlo trials are reproducible and execution-independent") {
    auto fn = [](Rng& rng) { return rng.uniform(); };
    const auto a = monte_carlo(500, 99, Execution::serial, fn);
    const auto b = monte_carlo(500, 99, Execution::parallel, fn);
    const auto c = monte_carlo(500, 100, Execution::serial, fn);
    CHECK(a.values == b.values);
    CHECK(a.values != c.values);
    CHECK(a.discarded == 0);
  }

  TEST_CASE("monte carlo redraws undefined trials up to the cap") {
    auto sometimes = [](Rng& rng) {
      const double u = rng.uniform();
      if (u < 0.05) throw UndefinedCoefficient("redraw");
      return u;
    };
    const auto r = monte_carlo(1000, 3, Execution::parallel, sometimes);
    CHECK(r.values.size() == 1000);
    CHECK(r.discarded > 0);
    CHECK(r.discarded <= 100);
    for (double v : r.values) CHECK(v >= 0.05);

    auto mostly = [](Rng& rng) {
      if (rng.uniform() < 0.5) throw UndefinedCoefficient("redraw");
      return 1.0;
    };
    CHECK_THROWS_AS(monte_carlo(200, 3, Execution::serial, mostly), UndefinedCoefficient);
  }

  TEST_CASE("leave_one_out agrees with coefficient_value") {
    const auto m = simulate_matrix(RaterModel::binary_consistent(0.2, 0.05, 4), 60, 4);
    std::vector<std::size_t> rows(m.n_subjects());
    std::iota(rows.begin(), rows.end(), 0);
    const auto serial = leave_one_out(m, Metric::GwetAC1, rows, Execution::serial);
    const auto parallel = leave_one_out(m, Metric::GwetAC1, rows, Execution::parallel);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(serial[i] == parallel[i]);
      CHECK(*serial[i] == coefficient_value(Metric::GwetAC1, m, i));
    }
  }

  TEST_CASE("max_threads is positive") { CHECK(max_threads() >= 1); }
}

TEST_SUITE("rng") {
  TEST_CASE("fnv1a reference values") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
  }

  TEST_CASE("derived streams differ by key and are stable") {
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  }

  TEST_CASE("draws stay in range") {
    Rng rng(42);
    for (int i = 0; i < 10000; ++i) {
      const double u = rng.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
      CHECK(rng.index(7) < 7);
    }
    const double probs[] = {0.0, 1.0, 0.0};
    for (int i = 0; i < 100; ++i) CHECK(rng.categorical(probs) == 1);
  }

  TEST_CASE("index is roughly uniform") {
    Rng rng(1);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 50000; ++i) ++counts[rng.index(5)];
    for (int c : counts) CHECK(std::abs(c - 10000) < 400);
  }

  TEST_CASE("shuffle is a permutation") {
    Rng rng(9);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto s = v;
    rng.shuffle(s.begin(), s.end());
    CHECK(s != v);
    CHECK(std::set<int>(s.begin(), s.end()).size() == 50);
  }
}

TEST_SUITE("simulator") {
  TEST_CASE("same seed gives the same matrix") {
    const auto model = RaterModel::binary_consistent(0.1, 0.1, 77);
    const auto a = simulate_matrix(model, 50, 3), b = simulate_matrix(model, 50, 3);
    for (std::size_t i = 0; i < 50; ++i)
      for (std::size_t g = 0; g < 3; ++g) CHECK(a.at(i, g) == b.at(i, g));
  }

  TEST_CASE("na rate and flip rate show up in the draws") {
    const auto m = simulate_matrix(RaterModel::binary_consistent(0.0, 0.2, 5), 5000, 4);
    const double na = static_cast<double>(m.missing_count()) / 20000.0;
    CHECK(na == doctest::Approx(0.2).epsilon(0.1));
    // Flip 0 means every non-missing rating in a row is the same.
    for (std::size_t i = 0; i < m.n_subjects(); ++i) {
      std::set<int> seen;
      for (auto c : m.row(i))
        if (c >= 0) seen.insert(c);
      CHECK(seen.size() <= 1);
    }
  }

  TEST_CASE("model validation") {
    RaterModel bad = RaterModel::independent_uniform(2, 1);
    bad.truth_distribution = {0.7, 0.2};
    CHECK_THROWS_AS(bad.validate(2), PreconditionError);
    RaterModel per_rater = RaterModel::independent_uniform(2, 1);
    per_rater.per_rater_confusion.push_back(per_rater.per_rater_confusion.front());
    CHECK_NOTHROW(per_rater.validate(2));
    CHECK_THROWS_AS(per_rater.validate(3), PreconditionError);
  }

  TEST_CASE("replicate sets cover every model and subject") {
    const std::vector<std::string> models{"m1", "m2"};
    const auto sets =
        simulate_replicate_sets(RaterModel::binary_consistent(0.1, 0.0, 3), models, 20, 5);
    CHECK(sets.size() == 40);
    for (const auto& s : sets) CHECK(s.labels.size() == 5);
  }

  TEST_CASE("null calibration is centred on zero") {
    const auto cal = null_calibration(Metric::FleissKappa, 2, 3, 400, 200, 17);
    CHECK(std::abs(cal.mean) < 0.01);
    CHECK(cal.sd > 0.0);
    CHECK(cal.trials == 200);
    CHECK_THROWS_AS(null_calibration(Metric::FleissKappa, 2, 3, 400, 50, 17), PreconditionError);
  }
}
