#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace llmrel {

/// Outcome of one binary annotation. Invalid is the NA case: the rater
/// answered, but not with one of the two permitted categories.
enum class Label { Positive, Negative, Invalid };

inline constexpr std::array<Label, 3> kAllLabels{Label::Positive, Label::Negative,
                                                 Label::Invalid};

std::string_view to_string(Label label);

/// Accepts the canonical lowercase names plus "P"/"N"/"NA"/"" (case-insensitive).
/// Empty and NA map to Invalid.
std::optional<Label> parse_label(std::string_view text);

/// Category index used inside rating matrices: Positive -> 0, Negative -> 1.
std::optional<int> category_index(Label label);
Label label_from_category(int category);

inline bool is_valid(Label label) { return label != Label::Invalid; }

}  // namespace llmrel
