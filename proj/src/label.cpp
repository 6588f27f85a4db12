#include "llmrel/label.hpp"

#include <algorithm>
#include <cctype>

namespace llmrel {

std::string_view to_string(Label label) {
  switch (label) {
    case Label::Positive:
      return "positive";
    case Label::Negative:
      return "negative";
    case Label::Invalid:
      return "invalid";
  }
  return "invalid";
}

std::optional<Label> parse_label(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "positive" || lower == "p" || lower == "pos") return Label::Positive;
  if (lower == "negative" || lower == "n" || lower == "neg") return Label::Negative;
  if (lower == "invalid" || lower == "na" || lower.empty()) return Label::Invalid;
  return std::nullopt;
}

std::optional<int> category_index(Label label) {
  switch (label) {
    case Label::Positive:
      return 0;
    case Label::Negative:
      return 1;
    case Label::Invalid:
      return std::nullopt;
  }
  return std::nullopt;
}

Label label_from_category(int category) {
  return category == 0 ? Label::Positive : category == 1 ? Label::Negative : Label::Invalid;
}

}  // namespace llmrel
