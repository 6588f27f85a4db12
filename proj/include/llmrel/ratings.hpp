#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llmrel/label.hpp"

namespace llmrel {

/// Subjects x raters grid of optional category assignments. A "rater" is a
/// distinct model for inter-rater work or a replicate index for intra-rater
/// work. Cells hold category indices into categories(); missing cells are
/// absent ratings (Invalid labels are stored as missing).
class RatingsMatrix {
 public:
  using Cell = std::optional<int>;

  /// cells are row-major (subject-major). Throws PreconditionError when the
  /// grid does not match the id lists, q < 2, or a cell is out of range.
  RatingsMatrix(std::vector<std::string> subject_ids, std::vector<std::string> rater_ids,
                std::vector<std::string> categories, std::span<const Cell> cells);

  /// Binary label grid, one inner vector per subject. Categories are
  /// {positive, negative}; Invalid becomes a missing cell.
  static RatingsMatrix from_labels(std::vector<std::string> subject_ids,
                                   std::vector<std::string> rater_ids,
                                   const std::vector<std::vector<Label>>& by_subject);
  /// Binary label grid given as one column per rater; ids are generated.
  static RatingsMatrix from_rater_columns(const std::vector<std::vector<Label>>& columns);

  std::size_t n_subjects() const { return subject_ids_.size(); }
  std::size_t n_raters() const { return rater_ids_.size(); }
  std::size_t n_categories() const { return categories_.size(); }

  const std::vector<std::string>& subject_ids() const { return subject_ids_; }
  const std::vector<std::string>& rater_ids() const { return rater_ids_; }
  const std::vector<std::string>& categories() const { return categories_; }

  Cell at(std::size_t subject, std::size_t rater) const {
    const auto v = cells_[subject * rater_ids_.size() + rater];
    return v < 0 ? Cell{} : Cell{v};
  }
  /// Raw row: category index or kMissing per rater.
  std::span<const std::int8_t> row(std::size_t subject) const {
    return {cells_.data() + subject * rater_ids_.size(), rater_ids_.size()};
  }

  std::size_t missing_count() const;

  RatingsMatrix select_subjects(std::span<const std::size_t> subjects) const;
  RatingsMatrix select_raters(std::span<const std::size_t> raters) const;

  static constexpr std::int8_t kMissing = -1;

 private:
  RatingsMatrix() = default;

  std::vector<std::string> subject_ids_;
  std::vector<std::string> rater_ids_;
  std::vector<std::string> categories_;
  std::vector<std::int8_t> cells_;
};

/// Agreement CSV layout: header row with a required `subject_id` column and
/// one column per rater; an empty cell (or NA/invalid) is a missing rating.
/// `categories` fixes the category order; when empty, the sorted set of
/// observed values is used.
RatingsMatrix read_ratings_csv(std::istream& in,
                               std::vector<std::string> categories = {"positive", "negative"});
RatingsMatrix read_ratings_csv(const std::filesystem::path& path,
                               std::vector<std::string> categories = {"positive", "negative"});
void write_ratings_csv(std::ostream& out, const RatingsMatrix& matrix);

}  // namespace llmrel
