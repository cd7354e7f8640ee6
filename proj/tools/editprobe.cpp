// Command-line front end: one subcommand per pipeline stage.

#include <spdlog/spdlog.h>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "editprobe/campaign.hpp"
#include "editprobe/error.hpp"
#include "editprobe/evaluation.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kEndpoint = 2, kInvariant = 3 };

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dataset;
  std::optional<std::string> cells;
  std::optional<std::string> mitigation;
  std::optional<std::string> run_dir;
  bool mock = false;
  bool resume = false;
  bool verbose = false;
};

editprobe::RunConfig load_config(const Overrides& o) {
  auto cfg = editprobe::RunConfig::from_file(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.dataset) {
    // A dataset name selects the loader; anything else is a path.
    try {
      cfg.dataset = editprobe::dataset_from_string(*o.dataset);
    } catch (const editprobe::ConfigError&) {
      cfg.dataset_path = *o.dataset;
    }
  }
  if (o.cells) cfg.cells = *o.cells;
  if (o.mitigation) cfg.mitigation = editprobe::mitigation_mode_from_string(*o.mitigation);
  if (o.run_dir) cfg.run_dir = *o.run_dir;
  if (o.mock) cfg.mock = true;
  return cfg;
}

int exit_code_for(const editprobe::Error& e) {
  using editprobe::ErrorKind;
  switch (e.kind()) {
    case ErrorKind::RequestFailed:
    case ErrorKind::Endpoint:
    case ErrorKind::Transient:
      return kEndpoint;
    case ErrorKind::InvariantViolation:
      return kInvariant;
    default:
      return kConfig;
  }
}

void print_stage(const editprobe::StageRecord& rec) {
  std::cout << rec.stage << ":";
  for (const auto& [key, value] : rec.counts) std::cout << " " << key << "=" << value;
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robustness probing of knowledge-edited language models"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("-c,--config", o.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Root seed; overrides the config");
  app.add_option("--dataset", o.dataset, "Dataset name (counterfact, zsre, mquake-t) or path");
  app.add_option("--cells", o.cells, "Attack cells: 'all' or a comma list like None/Direct,Related/Cloze");
  app.add_option("--mitigation", o.mitigation, "None, Disentangle, DisentangleExternal or PronounResolve");
  app.add_option("--run-dir", o.run_dir, "Run directory; overrides the config");
  app.add_flag("--mock", o.mock, "Serve all endpoints from local mock servers");
  app.add_flag("-v,--verbose", o.verbose, "Debug logging");

  auto* ingest = app.add_subcommand("ingest", "Load the dataset and dialogue clips");
  auto* build = app.add_subcommand("build-attacks", "Construct attack prompts for the grid");
  auto* evaluate = app.add_subcommand("evaluate", "Query the subject and score every attack");
  evaluate->add_flag("--resume", o.resume, "Skip samples already in records.jsonl");
  auto* popularity = app.add_subcommand("popularity", "Fetch popularity measures for every fact");
  auto* memory = app.add_subcommand("probe-memory", "Perplexity and ICL recall of original answers");
  auto* dialogue = app.add_subcommand("probe-dialogue", "Multi-turn probe with a simulated user");
  auto* report = app.add_subcommand("report", "Join artifacts into report.md");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");

  try {
    editprobe::Campaign campaign(load_config(o));
    editprobe::StageRecord rec;
    if (*ingest) rec = campaign.ingest();
    else if (*build) rec = campaign.build_attacks();
    else if (*evaluate) rec = campaign.evaluate(o.resume);
    else if (*popularity) rec = campaign.popularity();
    else if (*memory) rec = campaign.probe_memory();
    else if (*dialogue) rec = campaign.probe_dialogue();
    else if (*report) rec = campaign.report();
    print_stage(rec);
    return kOk;
  } catch (const editprobe::Error& e) {
    spdlog::error("{} error: {}", editprobe::to_string(e.kind()), e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kConfig;
  }
}
