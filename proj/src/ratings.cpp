#include "llmrel/ratings.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <set>

#include "llmrel/csv.hpp"
#include "llmrel/errors.hpp"

namespace llmrel {

RatingsMatrix::RatingsMatrix(std::vector<std::string> subject_ids,
                             std::vector<std::string> rater_ids,
                             std::vector<std::string> categories, std::span<const Cell> cells)
    : subject_ids_(std::move(subject_ids)),
      rater_ids_(std::move(rater_ids)),
      categories_(std::move(categories)) {
  if (categories_.size() < 2) throw PreconditionError("ratings matrix needs q >= 2 categories");
  if (categories_.size() > 127) throw PreconditionError("at most 127 categories supported");
  if (rater_ids_.empty()) throw PreconditionError("ratings matrix needs at least one rater");
  if (cells.size() != subject_ids_.size() * rater_ids_.size())
    throw PreconditionError("cell count " + std::to_string(cells.size()) + " != " +
                            std::to_string(subject_ids_.size()) + " x " +
                            std::to_string(rater_ids_.size()));
  cells_.reserve(cells.size());
  const int q = static_cast<int>(categories_.size());
  for (const auto& cell : cells) {
    if (!cell) {
      cells_.push_back(kMissing);
      continue;
    }
    if (*cell < 0 || *cell >= q)
      throw PreconditionError("cell category " + std::to_string(*cell) + " outside [0, q)");
    cells_.push_back(static_cast<std::int8_t>(*cell));
  }
}

RatingsMatrix RatingsMatrix::from_labels(std::vector<std::string> subject_ids,
                                         std::vector<std::string> rater_ids,
                                         const std::vector<std::vector<Label>>& by_subject) {
  if (by_subject.size() != subject_ids.size())
    throw PreconditionError("label rows do not match subject ids");
  std::vector<Cell> cells;
  cells.reserve(subject_ids.size() * rater_ids.size());
  for (const auto& row : by_subject) {
    if (row.size() != rater_ids.size())
      throw PreconditionError("label row width does not match rater ids");
    for (Label l : row) cells.push_back(category_index(l));
  }
  return RatingsMatrix(std::move(subject_ids), std::move(rater_ids), {"positive", "negative"},
                       cells);
}

RatingsMatrix RatingsMatrix::from_rater_columns(const std::vector<std::vector<Label>>& columns) {
  if (columns.empty()) throw PreconditionError("no rater columns");
  const std::size_t n = columns.front().size();
  std::vector<std::string> subjects, raters;
  for (std::size_t i = 0; i < n; ++i) subjects.push_back("s" + std::to_string(i + 1));
  for (std::size_t g = 0; g < columns.size(); ++g) {
    if (columns[g].size() != n) throw PreconditionError("rater columns differ in length");
    raters.push_back("r" + std::to_string(g + 1));
  }
  std::vector<std::vector<Label>> rows(n, std::vector<Label>(columns.size()));
  for (std::size_t g = 0; g < columns.size(); ++g)
    for (std::size_t i = 0; i < n; ++i) rows[i][g] = columns[g][i];
  return from_labels(std::move(subjects), std::move(raters), rows);
}

std::size_t RatingsMatrix::missing_count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), kMissing));
}

RatingsMatrix RatingsMatrix::select_subjects(std::span<const std::size_t> subjects) const {
  RatingsMatrix out;
  out.rater_ids_ = rater_ids_;
  out.categories_ = categories_;
  out.cells_.reserve(subjects.size() * rater_ids_.size());
  for (auto i : subjects) {
    if (i >= n_subjects()) throw PreconditionError("subject index out of range");
    out.subject_ids_.push_back(subject_ids_[i]);
    auto r = row(i);
    out.cells_.insert(out.cells_.end(), r.begin(), r.end());
  }
  return out;
}

RatingsMatrix RatingsMatrix::select_raters(std::span<const std::size_t> raters) const {
  if (raters.empty()) throw PreconditionError("rater selection is empty");
  RatingsMatrix out;
  out.subject_ids_ = subject_ids_;
  out.categories_ = categories_;
  for (auto g : raters) {
    if (g >= n_raters()) throw PreconditionError("rater index out of range");
    out.rater_ids_.push_back(rater_ids_[g]);
  }
  out.cells_.reserve(n_subjects() * raters.size());
  for (std::size_t i = 0; i < n_subjects(); ++i)
    for (auto g : raters) out.cells_.push_back(cells_[i * n_raters() + g]);
  return out;
}

namespace {

bool is_missing_token(const std::string& v) {
  return v.empty() || v == "NA" || v == "na" || v == "invalid" || v == "Invalid";
}

}  // namespace

RatingsMatrix read_ratings_csv(std::istream& in, std::vector<std::string> categories) {
  const auto table = csv::read(in);
  const auto id_col = table.column("subject_id");
  std::vector<std::size_t> rater_cols;
  std::vector<std::string> raters;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == id_col) continue;
    rater_cols.push_back(c);
    raters.push_back(table.header[c]);
  }
  if (rater_cols.empty()) throw InputError("ratings CSV has no rater columns");

  if (categories.empty()) {
    std::set<std::string> seen;
    for (const auto& row : table.rows)
      for (auto c : rater_cols)
        if (!is_missing_token(row[c])) seen.insert(row[c]);
    categories.assign(seen.begin(), seen.end());
    if (categories.size() < 2)
      throw InputError("ratings CSV: fewer than two distinct categories observed");
  }

  std::vector<std::string> subjects;
  std::vector<RatingsMatrix::Cell> cells;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    subjects.push_back(row[id_col]);
    for (auto c : rater_cols) {
      if (is_missing_token(row[c])) {
        cells.emplace_back();
        continue;
      }
      auto it = std::find(categories.begin(), categories.end(), row[c]);
      if (it == categories.end())
        throw InputError("ratings CSV row " + std::to_string(r + 2) + ": unknown category '" +
                         row[c] + "'");
      cells.emplace_back(static_cast<int>(it - categories.begin()));
    }
  }
  return RatingsMatrix(std::move(subjects), std::move(raters), std::move(categories), cells);
}

RatingsMatrix read_ratings_csv(const std::filesystem::path& path,
                               std::vector<std::string> categories) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_ratings_csv(in, std::move(categories));
}

void write_ratings_csv(std::ostream& out, const RatingsMatrix& matrix) {
  std::vector<std::string> fields{"subject_id"};
  fields.insert(fields.end(), matrix.rater_ids().begin(), matrix.rater_ids().end());
  csv::write_row(out, fields);
  for (std::size_t i = 0; i < matrix.n_subjects(); ++i) {
    fields.assign(1, matrix.subject_ids()[i]);
    for (std::size_t g = 0; g < matrix.n_raters(); ++g) {
      const auto cell = matrix.at(i, g);
      fields.push_back(cell ? matrix.categories()[*cell] : std::string{});
    }
    csv::write_row(out, fields);
  }
}

}  // namespace llmrel
