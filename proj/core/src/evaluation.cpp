#include "editprobe/evaluation.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

#include "editprobe/error.hpp"
#include "editprobe/metrics.hpp"
#include "editprobe/text.hpp"
#include "json_io.hpp"

namespace editprobe {

using detail::json;

std::string EvalRecord::sample_id() const {
  return fact_id + "|" + to_string(context_kind) + "|" + to_string(query_kind) + "|" +
         std::to_string(variant);
}

EvalRecord score_output(const FactEdit& fact, const AttackPrompt& attack, std::string raw_output) {
  EvalRecord r;
  r.fact_id = attack.fact_id;
  r.context_kind = attack.context_kind;
  r.query_kind = attack.query_kind;
  r.variant = attack.variant;
  r.first_sentence = first_sentence(raw_output);
  r.success = check_success(raw_output, fact.object_target);
  r.reversion = check_reversion(raw_output, fact.object_original);
  r.raw_output = std::move(raw_output);
  return r;
}

std::optional<double> CellStats::acc() const {
  if (n == 0) return std::nullopt;
  return 100.0 * static_cast<double>(successes) / static_cast<double>(n);
}

std::optional<double> CellStats::rev() const {
  if (n == 0) return std::nullopt;
  return 100.0 * static_cast<double>(reversions) / static_cast<double>(n);
}

EvalGrid aggregate(const std::vector<EvalRecord>& records) {
  EvalGrid g;
  for (const auto& r : records) {
    auto& c = g.cells[r.cell()];
    if (r.skipped) {
      ++c.n_skipped;
      continue;
    }
    ++c.n;
    if (r.success) ++c.successes;
    if (r.reversion) ++c.reversions;
  }
  return g;
}

std::string format_percent(std::optional<double> v) {
  return v ? fmt::format("{:.1f}", *v) : std::string("--");
}

namespace {

std::vector<Cell> row_order(const EvalGrid& grid, const std::vector<Cell>& order) {
  std::vector<Cell> rows = order;
  for (const auto& [cell, stats] : grid.cells) {
    if (std::find(rows.begin(), rows.end(), cell) == rows.end()) rows.push_back(cell);
  }
  return rows;
}

const char* context_label(ContextKind k) {
  switch (k) {
    case ContextKind::None: return "N/A";
    case ContextKind::Related: return "Related context";
    case ContextKind::NoisyContext: return "Noisy context";
    case ContextKind::SimulatedDialogue: return "Simulated dialogue";
    case ContextKind::NoisyDialogue: return "Noisy dialogue";
  }
  return "";
}

const char* query_label(QueryKind k) {
  switch (k) {
    case QueryKind::Direct: return "Direct prompt";
    case QueryKind::Equivalent: return "Equivalent prompt";
    case QueryKind::Cloze: return "Cloze";
    case QueryKind::Reference: return "w/ Reference";
    case QueryKind::DoubtOnly: return "Raising doubts (d1)";
    case QueryKind::DoubtSuggest: return "Raising doubts (d2)";
  }
  return "";
}

std::string diff(std::optional<double> a, std::optional<double> b) {
  if (!a || !b) return "--";
  return fmt::format("{:+.1f}", *b - *a);
}

}  // namespace

std::string grid_to_csv(const EvalGrid& grid, const std::vector<Cell>& order) {
  std::string out = "context,query,acc,rev,n,n_skipped\n";
  for (const auto& cell : row_order(grid, order)) {
    auto it = grid.cells.find(cell);
    const CellStats s = it == grid.cells.end() ? CellStats{} : it->second;
    out += fmt::format("{},{},{},{},{},{}\n", to_string(cell.context), to_string(cell.query),
                       format_percent(s.acc()), format_percent(s.rev()), s.n, s.n_skipped);
  }
  return out;
}

std::string grid_to_markdown(const EvalGrid& grid, const std::vector<Cell>& order) {
  std::string out = "| Context | Query | acc | rev | n | skipped |\n";
  out += "|---|---|---:|---:|---:|---:|\n";
  for (const auto& cell : row_order(grid, order)) {
    auto it = grid.cells.find(cell);
    const CellStats s = it == grid.cells.end() ? CellStats{} : it->second;
    out += fmt::format("| {} | {} | {} | {} | {} | {} |\n", context_label(cell.context),
                       query_label(cell.query), format_percent(s.acc()), format_percent(s.rev()),
                       s.n, s.n_skipped);
  }
  return out;
}

std::string comparison_to_markdown(const EvalGrid& baseline, const EvalGrid& mitigated,
                                   const std::vector<Cell>& order) {
  EvalGrid both = baseline;
  for (const auto& [cell, stats] : mitigated.cells) both.cells.try_emplace(cell);
  std::string out =
      "| Context | Query | acc (base) | acc (mitigated) | diff | rev (base) | rev (mitigated) | "
      "diff |\n|---|---|---:|---:|---:|---:|---:|---:|\n";
  auto get = [](const EvalGrid& g, const Cell& c) {
    auto it = g.cells.find(c);
    return it == g.cells.end() ? CellStats{} : it->second;
  };
  for (const auto& cell : row_order(both, order)) {
    const auto a = get(baseline, cell);
    const auto b = get(mitigated, cell);
    out += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} |\n", context_label(cell.context),
                       query_label(cell.query), format_percent(a.acc()), format_percent(b.acc()),
                       diff(a.acc(), b.acc()), format_percent(a.rev()), format_percent(b.rev()),
                       diff(a.rev(), b.rev()));
  }
  return out;
}

std::string record_to_json_line(const EvalRecord& r) {
  json j = {{"run_id", r.run_id},
            {"fact_id", r.fact_id},
            {"context_kind", to_string(r.context_kind)},
            {"query_kind", to_string(r.query_kind)},
            {"variant", r.variant},
            {"raw_output", r.raw_output},
            {"first_sentence", r.first_sentence},
            {"success", r.success},
            {"reversion", r.reversion},
            {"skipped", r.skipped},
            {"skip_reason", r.skip_reason},
            {"request_seq", r.request_seq},
            {"first_round_output", r.first_round_output},
            {"extraction", r.extraction},
            {"mitigation_applied", r.mitigation_applied},
            {"truncated", r.truncated}};
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

EvalRecord record_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  EvalRecord r;
  r.run_id = j.value("run_id", std::string{});
  r.fact_id = j.at("fact_id").get<std::string>();
  r.context_kind = context_kind_from_string(j.at("context_kind").get<std::string>());
  r.query_kind = query_kind_from_string(j.at("query_kind").get<std::string>());
  r.variant = j.value("variant", 0);
  r.raw_output = j.value("raw_output", std::string{});
  r.first_sentence = j.value("first_sentence", std::string{});
  r.success = j.value("success", false);
  r.reversion = j.value("reversion", false);
  r.skipped = j.value("skipped", false);
  r.skip_reason = j.value("skip_reason", std::string{});
  r.request_seq = j.value("request_seq", std::uint64_t{0});
  r.first_round_output = j.value("first_round_output", std::string{});
  r.extraction = j.value("extraction", std::string{});
  r.mitigation_applied = j.value("mitigation_applied", false);
  r.truncated = j.value("truncated", false);
  if (r.skipped && (r.success || r.reversion)) {
    throw InvariantViolation("skipped record " + r.sample_id() + " carries metric flags");
  }
  return r;
}

void write_records_jsonl(const std::filesystem::path& path, const std::vector<EvalRecord>& rs) {
  std::string out;
  for (const auto& r : rs) out += record_to_json_line(r) + "\n";
  detail::write_file(path, out);
}

std::vector<EvalRecord> read_records_jsonl(const std::filesystem::path& path) {
  const auto lines = detail::read_lines(path);
  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::trim(lines[i]).empty()) continue;
    try {
      out.push_back(record_from_json_line(lines[i]));
    } catch (const json::exception& e) {
      const bool last = std::all_of(lines.begin() + static_cast<std::ptrdiff_t>(i) + 1, lines.end(),
                                    [](const std::string& l) { return text::trim(l).empty(); });
      if (!last) throw IoError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
      spdlog::warn("{}: ignoring truncated final record", path.string());
    }
  }
  return out;
}

EvalEngine::EvalEngine(ModelGateway& gateway, EndpointConfig subject, EvalConfig cfg)
    : gateway_(gateway),
      subject_(std::move(subject)),
      cfg_(std::move(cfg)),
      mitigator_(cfg_.mitigation, gateway_, subject_) {
  subject_.validate();
}

EvalRecord EvalEngine::evaluate(const AttackPrompt& attack, const FactEdit& fact) {
  if (attack.skip_reason) {
    EvalRecord r;
    r.run_id = cfg_.run_id;
    r.fact_id = attack.fact_id;
    r.context_kind = attack.context_kind;
    r.query_kind = attack.query_kind;
    r.variant = attack.variant;
    r.skipped = true;
    r.skip_reason = *attack.skip_reason;
    return r;
  }
  GenerationParams params;
  params.sample_id = attack.sample_id();
  auto messages = to_messages(attack);
  MitigationTrace trace;
  std::string first_round;
  GenerationResult res;
  if (is_doubt(attack.query_kind)) {
    GenerationParams p1 = params;
    p1.sample_id += "|r1";
    first_round = gateway_.generate(subject_, messages, p1).text;
    const auto followup = doubt_followup(fact, attack.query_kind);
    std::vector<Message> second;
    if (attack.turns.empty()) {
      second.push_back({"user", doubt_round_two(attack.text, first_round, followup)});
    } else {
      second = messages;
      second.push_back({"assistant", first_round});
      second.push_back({"user", followup});
    }
    res = mitigator_.generate(fact, second, params, trace);
  } else {
    res = mitigator_.generate(fact, messages, params, trace);
  }
  auto r = score_output(fact, attack, std::move(res.text));
  r.run_id = cfg_.run_id;
  r.request_seq = res.request_seq;
  r.first_round_output = std::move(first_round);
  r.extraction = std::move(trace.extraction);
  r.mitigation_applied = trace.applied;
  r.truncated = res.truncated;
  return r;
}

std::vector<EvalRecord> EvalEngine::run_cell(const std::vector<AttackPrompt>& prompts,
                                             const FactLookup& facts) {
  if (!prompts.empty()) {
    const auto cell = prompts.front().cell();
    for (const auto& p : prompts) {
      if (p.cell() != cell) throw PreconditionError("run_cell: prompts span several cells");
    }
  }
  std::vector<EvalRecord> out(prompts.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr fatal;
  auto worker = [&] {
    for (auto i = next.fetch_add(1); i < prompts.size(); i = next.fetch_add(1)) {
      const auto& a = prompts[i];
      try {
        try {
          out[i] = evaluate(a, facts(a.fact_id));
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::RequestFailed && e.kind() != ErrorKind::Endpoint) throw;
          AttackPrompt skipped = a;
          skipped.skip_reason = e.what();
          out[i] = evaluate(skipped, facts(a.fact_id));
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const int n = std::max(1, std::min<int>(cfg_.workers, static_cast<int>(prompts.size())));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);
  return out;
}

std::vector<EvalRecord> EvalEngine::run(const std::vector<AttackPrompt>& prompts,
                                        const FactLookup& facts,
                                        const std::optional<std::filesystem::path>& checkpoint,
                                        bool resume) {
  std::unordered_map<std::string, EvalRecord> done;
  if (checkpoint && resume && std::filesystem::exists(*checkpoint)) {
    auto previous = read_records_jsonl(*checkpoint);
    for (auto& r : previous) {
      if (r.run_id != cfg_.run_id) {
        throw ConfigError("checkpoint " + checkpoint->string() + " belongs to run '" + r.run_id +
                          "', not '" + cfg_.run_id + "'");
      }
      done.emplace(r.sample_id(), std::move(r));
    }
    // Rewrite without any partial trailing line before appending.
    std::vector<EvalRecord> kept;
    kept.reserve(done.size());
    for (const auto& p : prompts) {
      if (auto it = done.find(p.sample_id()); it != done.end()) kept.push_back(it->second);
    }
    write_records_jsonl(*checkpoint, kept);
    spdlog::info("resuming run {}: {} of {} samples already done", cfg_.run_id, done.size(),
                 prompts.size());
  } else if (checkpoint) {
    detail::write_file(*checkpoint, "");
  }

  std::optional<std::ofstream> out;
  if (checkpoint) out.emplace(*checkpoint, std::ios::app);

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (!done.contains(prompts[i].sample_id())) todo.push_back(i);
  }

  std::mutex mu;
  std::vector<EvalRecord> failed;
  std::atomic<int> consecutive{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;
  std::atomic<std::size_t> next{0};

  auto persist = [&](EvalRecord r) {
    std::lock_guard lock(mu);
    if (out) {
      *out << record_to_json_line(r) << '\n';
      out->flush();
    }
    done.emplace(r.sample_id(), std::move(r));
  };

  auto worker = [&] {
    for (auto k = next.fetch_add(1); k < todo.size() && !abort; k = next.fetch_add(1)) {
      const auto& a = prompts[todo[k]];
      try {
        auto r = evaluate(a, facts(a.fact_id));
        consecutive = 0;
        persist(std::move(r));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::RequestFailed && e.kind() != ErrorKind::Endpoint) {
          std::lock_guard lock(mu);
          if (!fatal) fatal = std::current_exception();
          abort = true;
          return;
        }
        if (e.kind() == ErrorKind::Endpoint) {
          // Answered but rejected: a per-sample problem, not an outage.
          AttackPrompt skipped = a;
          skipped.skip_reason = e.what();
          persist(evaluate(skipped, facts(a.fact_id)));
          continue;
        }
        AttackPrompt skipped = a;
        skipped.skip_reason = e.what();
        auto r = evaluate(skipped, facts(a.fact_id));
        {
          std::lock_guard lock(mu);
          failed.push_back(std::move(r));
        }
        if (++consecutive >= cfg_.hard_down_after) abort = true;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
        abort = true;
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const int n = std::max(1, std::min<int>(cfg_.workers, static_cast<int>(todo.size())));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);
  if (abort) {
    throw EndpointDown(subject_.name + ": " + std::to_string(consecutive.load()) +
                       " consecutive samples failed; " + std::to_string(done.size()) + " of " +
                       std::to_string(prompts.size()) + " samples are checkpointed");
  }
  for (auto& r : failed) persist(std::move(r));

  std::vector<EvalRecord> result;
  result.reserve(prompts.size());
  for (const auto& p : prompts) result.push_back(done.at(p.sample_id()));
  return result;
}

}  // namespace editprobe
