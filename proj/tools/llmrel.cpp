// llmrel command-line driver.
//
// Exit codes: 0 success, 2 usage or config error, 3 input error, 4 runtime
// failure.

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "llmrel/errors.hpp"
#include "llmrel/pipeline.hpp"
#include "llmrel/report.hpp"

namespace {

using namespace llmrel;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInput = 3;
constexpr int kExitRuntime = 4;

struct Globals {
  std::string config;
  std::string out = "llmrel-out";
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

void list_outputs(const std::vector<fs::path>& paths, bool verbose) {
  for (const auto& p : paths) {
    if (verbose) std::cerr << "wrote " << p.string() << "  sha256=" << sha256_file(p) << '\n';
    else std::cerr << "wrote " << p.string() << '\n';
  }
}

Config require_config(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required for this subcommand");
  return load_config(g.config);
}

std::uint64_t pick_seed(const Globals& g, const std::optional<Config>& config) {
  if (g.seed) return *g.seed;
  return config ? config->seed : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reliability and validity analysis for LLM text annotation"};
  app.set_version_flag("--version", std::string(tool_version()));
  app.require_subcommand(1);

  Globals g;
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--seed", g.seed, "RNG seed (default: config seed, else 0)");
  app.add_flag("-v,--verbose", g.verbose, "print digests of written files");

  // plan
  auto* plan = app.add_subcommand("plan", "sample size for a target margin of error");
  PlanningSpec plan_spec;
  std::vector<std::string> plan_c;
  bool plan_write = false;
  plan->add_option("--margin", plan_spec.margin_of_error, "margin of error E0");
  plan->add_option("--family-confidence", plan_spec.family_confidence);
  plan->add_option("--comparisons", plan_spec.k_comparisons, "number of simultaneous comparisons k");
  plan->add_option("--replicates", plan_spec.replicates);
  plan->add_option("--c", plan_c, "metric=C pairs (repeatable)");
  plan->add_flag("--write", plan_write, "also write plan.json to --out");

  // curate
  auto* curate = app.add_subcommand("curate", "filter and balance a raw article dataset");
  std::string curate_input;
  std::size_t curate_n = 0;
  curate->add_option("--dataset", curate_input, "raw dataset CSV")->required();
  curate->add_option("--target-n", curate_n, "articles to keep (even)")->required();

  // run
  auto* run = app.add_subcommand("run", "collect annotations from the configured models");
  std::string run_dataset;
  std::optional<std::size_t> run_replicates;
  bool run_virtual = false;
  run->add_option("--dataset", run_dataset, "curated dataset CSV (default: from config)");
  run->add_option("--replicates", run_replicates);
  run->add_flag("--virtual-clock", run_virtual, "do not really sleep between retries");

  // reliability
  auto* reliability = app.add_subcommand("reliability", "intra- and inter-rater reports");
  std::string rel_records;
  reliability->add_option("--records", rel_records, "records CSV (default: <out>/records.csv)");

  // validity
  auto* validity = app.add_subcommand("validity", "confusion metrics against reference labels");
  std::string val_records, val_dataset, val_returns;
  validity->add_option("--records", val_records, "records CSV (default: <out>/records.csv)");
  validity->add_option("--dataset", val_dataset, "dataset CSV with benchmark labels");
  validity->add_option("--returns", val_returns, "returns CSV for external-criterion labels");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "synthetic rating matrices and null calibration");
  SimulationRequest sim;
  std::string sim_calibrate;
  simulate->add_option("--subjects", sim.subjects)->capture_default_str();
  simulate->add_option("--raters", sim.raters)->capture_default_str();
  simulate->add_option("--categories", sim.categories)->capture_default_str();
  simulate->add_option("--flip", sim.flip, "binary flip rate (0.5: independent raters)")
      ->capture_default_str();
  simulate->add_option("--na-rate", sim.na_rate)->capture_default_str();
  simulate->add_option("--calibrate", sim_calibrate, "metric for null calibration");
  simulate->add_option("--trials", sim.trials)->capture_default_str();

  // report
  auto* report_cmd = app.add_subcommand("report", "CSV summaries and SVG charts from <out>");

  // pipeline
  auto* pipeline_cmd = app.add_subcommand("pipeline", "plan, collect, reliability, validity");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const fs::path out = g.out;

    if (*plan) {
      if (!g.config.empty()) {
        const auto config = load_config(g.config);
        if (!config.planning) throw ConfigError("config has no planning section");
        plan_spec = *config.planning;
      }
      for (const auto& pair : plan_c) {
        const auto eq = pair.find('=');
        std::size_t used = 0;
        double v = 0.0;
        try {
          if (eq != std::string::npos) v = std::stod(pair.substr(eq + 1), &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (eq == std::string::npos || eq == 0 || used == 0 || used != pair.size() - eq - 1)
          throw ConfigError("--c expects metric=C, got '" + pair + "'");
        plan_spec.c_values[pair.substr(0, eq)] = v;
      }
      try {
        plan_spec.validate();
      } catch (const PreconditionError& e) {
        throw ConfigError(e.what());
      }
      if (plan_write) {
        list_outputs(plan_phase(plan_spec, out, std::cout), g.verbose);
      } else {
        const auto tmp = fs::temp_directory_path() / "llmrel-plan";
        plan_phase(plan_spec, tmp, std::cout);
        fs::remove_all(tmp);
      }
    } else if (*curate) {
      std::optional<Config> config;
      if (!g.config.empty()) config = load_config(g.config);
      list_outputs(curate_phase(curate_input, curate_n, pick_seed(g, config), out), g.verbose);
    } else if (*run) {
      auto config = require_config(g);
      if (run_replicates) config.experiment.replicates = *run_replicates;
      if (config.experiment.replicates < 1) throw ConfigError("--replicates must be >= 1");
      const fs::path dataset = run_dataset.empty() ? config.experiment.dataset : fs::path(run_dataset);
      if (dataset.empty()) throw ConfigError("no dataset: pass --dataset or set experiment.dataset");
      const auto seed = pick_seed(g, config);
      std::vector<fs::path> produced;
      if (run_virtual || config.experiment.virtual_clock) {
        VirtualClock clock;
        produced = run_phase(config, dataset, out, seed, clock);
      } else {
        SystemClock clock;
        produced = run_phase(config, dataset, out, seed, clock);
      }
      list_outputs(produced, g.verbose);
    } else if (*reliability) {
      std::optional<Config> config;
      if (!g.config.empty()) config = load_config(g.config);
      const fs::path records = rel_records.empty() ? out / "records.csv" : fs::path(rel_records);
      list_outputs(reliability_phase(records, config ? config->models : std::vector<ModelConfig>{},
                                     config ? config->reliability : ReliabilityConfig{},
                                     pick_seed(g, config), out),
                   g.verbose);
    } else if (*validity) {
      std::optional<Config> config;
      if (!g.config.empty()) config = load_config(g.config);
      ValidityConfig vc = config ? config->validity : ValidityConfig{};
      if (!val_returns.empty()) vc.returns_csv = val_returns;
      fs::path dataset = val_dataset;
      if (dataset.empty() && config) {
        dataset = fs::exists(out / "curated.csv") ? out / "curated.csv" : config->experiment.dataset;
      }
      if (dataset.empty()) throw ConfigError("no dataset: pass --dataset or --config");
      const fs::path records = val_records.empty() ? out / "records.csv" : fs::path(val_records);
      list_outputs(validity_phase(records, dataset, vc, pick_seed(g, config), out), g.verbose);
    } else if (*simulate) {
      if (!sim_calibrate.empty()) {
        sim.calibrate = parse_metric(sim_calibrate);
        if (!sim.calibrate) throw ConfigError("unknown metric '" + sim_calibrate + "'");
      }
      list_outputs(simulate_phase(sim, g.seed.value_or(0), out), g.verbose);
    } else if (*report_cmd) {
      const auto bundle = report(out);
      list_outputs(bundle.csv, g.verbose);
      list_outputs(bundle.figures, g.verbose);
    } else if (*pipeline_cmd) {
      const auto config = require_config(g);
      const auto manifest = pipeline(config, out, pick_seed(g, config));
      for (const auto& phase : manifest.phases) {
        std::cerr << phase.name << ": " << phase.status;
        if (!phase.error.empty()) std::cerr << " (" << phase.error << ")";
        std::cerr << '\n';
        if (g.verbose)
          for (const auto& o : phase.outputs)
            std::cerr << "  " << o.path.generic_string() << "  " << o.content_sha256 << '\n';
      }
      std::cerr << "manifest: " << (out / "manifest.json").string() << '\n';
      if (!manifest.ok()) return kExitRuntime;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const PreconditionError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
