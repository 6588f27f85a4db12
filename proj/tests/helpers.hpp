#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "llmrel/agreement.hpp"
#include "llmrel/errors.hpp"
#include "llmrel/ratings.hpp"
#include "oracles.hpp"

namespace testing {

inline llmrel::RatingsMatrix to_matrix(const oracle::Grid& grid, int q) {
  std::vector<std::string> subjects, raters, categories;
  for (std::size_t i = 0; i < grid.size(); ++i) subjects.push_back("s" + std::to_string(i + 1));
  for (std::size_t g = 0; g < grid.front().size(); ++g) raters.push_back("r" + std::to_string(g + 1));
  for (int k = 0; k < q; ++k) categories.push_back("c" + std::to_string(k));
  std::vector<std::optional<int>> cells;
  for (const auto& row : grid)
    for (int c : row) cells.push_back(c < 0 ? std::optional<int>{} : std::optional<int>{c});
  return llmrel::RatingsMatrix(subjects, raters, categories, cells);
}

/// Library value, or nullopt when the library reports the coefficient as
/// undefined for this input.
inline std::optional<double> library_value(llmrel::Metric metric, const llmrel::RatingsMatrix& m) {
  try {
    return llmrel::coefficient_value(metric, m);
  } catch (const llmrel::UndefinedCoefficient&) {
    return std::nullopt;
  } catch (const llmrel::PreconditionError&) {
    return std::nullopt;
  }
}

inline std::optional<double> oracle_value(llmrel::Metric metric, const oracle::Grid& grid, int q) {
  using llmrel::Metric;
  switch (metric) {
    case Metric::PercentAgreement: return oracle::percent_agreement(grid);
    case Metric::CohenKappa: return oracle::cohen(grid, q);
    case Metric::FleissKappa: return oracle::fleiss(grid, q);
    case Metric::CongerKappa: return oracle::conger(grid, q);
    case Metric::GwetAC1: return oracle::gwet_ac1(grid, q);
    case Metric::BrennanPrediger: return oracle::brennan_prediger(grid, q);
    case Metric::KrippendorffAlpha: return oracle::krippendorff(grid, q);
  }
  return std::nullopt;
}

/// Fresh scratch directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("llmrel_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
