#pragma once

#include <filesystem>
#include <vector>

namespace llmrel {

struct ReportBundle {
  std::vector<std::filesystem::path> csv;
  std::vector<std::filesystem::path> figures;
};

/// Reads records.csv, reliability/ and validity/ under output_dir (whichever
/// exist) and writes CSV summaries plus one SVG per figure type to
/// output_dir/report. Inputs are never modified. Throws InputError naming the
/// expected inputs when none is present.
ReportBundle report(const std::filesystem::path& output_dir);

}  // namespace llmrel
