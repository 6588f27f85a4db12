#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "llmrel/agreement.hpp"
#include "llmrel/harness.hpp"
#include "llmrel/planner.hpp"
#include "llmrel/validity.hpp"

namespace llmrel {

namespace fs = std::filesystem;

struct ExperimentConfig {
  std::size_t replicates = 5;
  std::size_t concurrency_limit = 4;
  fs::path dataset;
  std::size_t target_n = 0;  // 0: use the dataset as curated
  RetryPolicy retry;
  PromptTemplate prompt = PromptTemplate::default_template();
  bool virtual_clock = false;  // dry runs against mock backends
};

struct ReliabilityConfig {
  std::vector<Metric> metrics{kMultiRaterMetrics.begin(), kMultiRaterMetrics.end()};
  std::size_t family_size = 0;  // 0: number of models in the cost tier
  double family_confidence = 0.90;
  double inter_confidence = 0.95;
  std::size_t top_n_min = 2;
  std::size_t top_n_max = 7;
};

struct ValidityConfig {
  fs::path returns_csv;  // empty: benchmark only
  ZeroExcessRule tie = ZeroExcessRule::negative;
};

/// JSON config with sections planning, models, experiment, reliability,
/// validity. Relative paths resolve against the config file's directory.
struct Config {
  fs::path path;
  std::optional<PlanningSpec> planning;
  std::vector<ModelConfig> models;
  ExperimentConfig experiment;
  ReliabilityConfig reliability;
  ValidityConfig validity;
  std::uint64_t seed = 0;
};

/// Throws ConfigError on malformed documents or unknown enum values.
Config load_config(const fs::path& path);
Config parse_config(std::string_view json_text, const fs::path& base_dir);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);
std::string sha256_bytes(std::string_view bytes);
/// Digest with run-dependent fields removed: for records CSVs the
/// timestamp_utc and latency_ms columns; other files hash as-is.
std::string content_digest(const fs::path& path);

/// Replaces characters outside [A-Za-z0-9._-] so model ids are usable as
/// file names.
std::string file_stem(std::string_view id);

// Phases. Each writes into out_dir and returns the files it produced.

std::vector<fs::path> plan_phase(const PlanningSpec& spec, const fs::path& out_dir,
                                 std::ostream& table);
std::vector<fs::path> curate_phase(const fs::path& raw_dataset, std::size_t target_n,
                                   std::uint64_t seed, const fs::path& out_dir);
std::vector<fs::path> run_phase(const Config& config, const fs::path& dataset,
                                const fs::path& out_dir, std::uint64_t seed, Clock& clock);
std::vector<fs::path> reliability_phase(const fs::path& records,
                                        const std::vector<ModelConfig>& models,
                                        const ReliabilityConfig& config, std::uint64_t seed,
                                        const fs::path& out_dir);
std::vector<fs::path> validity_phase(const fs::path& records, const fs::path& dataset,
                                     const ValidityConfig& config, std::uint64_t seed,
                                     const fs::path& out_dir);

struct SimulationRequest {
  std::size_t subjects = 1000;
  std::size_t raters = 5;
  std::size_t categories = 2;
  double flip = 0.5;      // binary consistent model; 0.5 = independent raters
  double na_rate = 0.0;
  std::optional<Metric> calibrate;  // null calibration of this metric
  std::size_t trials = 500;
};
std::vector<fs::path> simulate_phase(const SimulationRequest& request, std::uint64_t seed,
                                     const fs::path& out_dir);

struct PhaseOutput {
  fs::path path;  // relative to the output directory
  std::string sha256;
  std::string content_sha256;
};

struct PhaseRecord {
  std::string name;
  std::string status;  // completed, skipped, failed
  std::vector<PhaseOutput> outputs;
  std::string error;
};

struct RunManifest {
  std::string tool_version;
  fs::path config_path;
  fs::path dataset_path;
  fs::path output_dir;
  std::uint64_t seed = 0;
  std::vector<PhaseRecord> phases;

  bool ok() const;
  std::string to_json() const;
};

/// planning -> data collection (curate + run) -> reliability -> validity,
/// each phase reading the previous phase's files. Stops at the first failing
/// phase; manifest.json is written last in every case.
RunManifest pipeline(const Config& config, const fs::path& out_dir, std::uint64_t seed);
RunManifest pipeline(const Config& config, const fs::path& out_dir, std::uint64_t seed,
                     Clock& clock);

std::string_view tool_version();

}  // namespace llmrel
