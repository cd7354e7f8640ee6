#include "editprobe/popularity.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "editprobe/error.hpp"
#include "editprobe/metrics.hpp"
#include "editprobe/rng.hpp"
#include "editprobe/templates.hpp"
#include "editprobe/text.hpp"

namespace editprobe {

const char* to_string(Measure m) {
  switch (m) {
    case Measure::Frequency: return "frequency";
    case Measure::Connection: return "connection";
    case Measure::Cooccurrence: return "cooccurrence";
  }
  return "frequency";
}

Measure measure_from_string(const std::string& s) {
  for (auto m : {Measure::Frequency, Measure::Connection, Measure::Cooccurrence}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown popularity measure: " + s);
}

std::optional<std::int64_t> measure_value(const PopularityScores& s, Measure m) {
  switch (m) {
    case Measure::Frequency: return s.frequency;
    case Measure::Connection: return s.connection;
    case Measure::Cooccurrence: return s.cooccurrence;
  }
  return std::nullopt;
}

namespace {

// Soft failures leave a component absent; anything else propagates.
bool soft(const Error& e) {
  return e.kind() == ErrorKind::NotFound || e.kind() == ErrorKind::Transient ||
         e.kind() == ErrorKind::Precondition;
}

}  // namespace

PopularityScores score_fact(KnowledgeClient& client, const FactEdit& fact,
                            CooccurrenceDirection direction) {
  PopularityScores s;
  s.fact_id = fact.id;
  s.direction_used = direction;
  try {
    s.frequency = client.fetch_pageviews(fact.subject);
  } catch (const Error& e) {
    if (!soft(e)) throw;
    spdlog::info("{}: frequency absent: {}", fact.id, e.what());
  }
  std::optional<std::string> sqid = fact.subject_qid;
  if (!sqid) {
    try {
      sqid = client.resolve_qid(fact.subject);
    } catch (const Error& e) {
      if (!soft(e)) throw;
      spdlog::info("{}: subject QID unresolved: {}", fact.id, e.what());
    }
  }
  if (sqid) {
    try {
      s.connection = client.fetch_edge_count(*sqid);
    } catch (const Error& e) {
      if (!soft(e)) throw;
      spdlog::info("{}: connection absent: {}", fact.id, e.what());
    }
    std::optional<std::string> oqid = fact.object_qid;
    if (!oqid) {
      try {
        oqid = client.resolve_qid(fact.object_original);
      } catch (const Error& e) {
        if (!soft(e)) throw;
        spdlog::info("{}: object QID unresolved: {}", fact.id, e.what());
      }
    }
    if (oqid) {
      try {
        s.cooccurrence = client.fetch_cooccurrence(*sqid, *oqid, direction);
      } catch (const Error& e) {
        if (!soft(e)) throw;
        spdlog::info("{}: co-occurrence absent: {}", fact.id, e.what());
      }
    }
  }
  if (!s.frequency && !s.connection && !s.cooccurrence) {
    throw Unavailable("ScoreUnavailable", "no popularity measure resolvable for " + fact.id);
  }
  return s;
}

std::vector<PopularityScores> score_facts(KnowledgeClient& client,
                                          const std::vector<FactEdit>& facts,
                                          CooccurrenceDirection direction, int workers,
                                          std::vector<std::string>* skipped) {
  std::vector<std::optional<PopularityScores>> slots(facts.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr fatal;
  auto worker = [&] {
    for (auto i = next.fetch_add(1); i < facts.size(); i = next.fetch_add(1)) {
      try {
        slots[i] = score_fact(client, facts[i], direction);
      } catch (const Unavailable& e) {
        spdlog::warn("{}", e.what());
      } catch (...) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(facts.size())));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);
  std::vector<PopularityScores> out;
  for (std::size_t i = 0; i < facts.size(); ++i) {
    if (slots[i]) {
      out.push_back(std::move(*slots[i]));
    } else if (skipped) {
      skipped->push_back(facts[i].id);
    }
  }
  return out;
}

double perplexity_from_logprobs(std::span<const double> logprobs) {
  if (logprobs.empty()) throw PreconditionError("perplexity of a zero-token answer");
  double sum = 0;
  for (double v : logprobs) sum += v;
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

double perplexity(ModelGateway& gateway, const EndpointConfig& ep, const std::string& prompt,
                  const std::string& answer) {
  const bool space = !prompt.empty() && !answer.empty() && !text::is_ascii_space(prompt.back()) &&
                     !text::is_ascii_space(answer.front());
  const auto lp = gateway.score_completion(ep, prompt, (space ? " " : "") + answer);
  return perplexity_from_logprobs(lp);
}

std::string icl_prompt(const FactEdit& fact, const std::vector<FactEdit>& demos) {
  std::string out(templates::kIclInstruction);
  out += '\n';
  for (const auto& d : demos) out += d.prompt_direct + " " + d.object_original + ".\n";
  out += fact.prompt_direct;
  return out;
}

MemoryProbe memory_probe(ModelGateway& gateway, const EndpointConfig& ep, const FactEdit& fact,
                         ProbeMode mode, const std::vector<FactEdit>& demos) {
  if (mode == ProbeMode::Icl) {
    for (const auto& d : demos) {
      if (d.id == fact.id) throw PreconditionError("ICL demos must exclude the probed fact");
      if (d.relation != fact.relation) {
        throw PreconditionError("ICL demo " + d.id + " has relation " + d.relation + ", not " +
                                fact.relation);
      }
    }
  }
  MemoryProbe p;
  p.fact_id = fact.id;
  try {
    p.ppl_original = perplexity(gateway, ep, fact.prompt_direct, fact.object_original);
    p.ppl_target = perplexity(gateway, ep, fact.prompt_direct, fact.object_target);
    p.log_ppl_diff = std::log(*p.ppl_original) - std::log(*p.ppl_target);
  } catch (const UnsupportedCapability& e) {
    p.ppl_original.reset();
    p.ppl_target.reset();
    spdlog::debug("{}: {}", fact.id, e.what());
  }
  if (mode == ProbeMode::Icl) {
    GenerationParams params;
    params.sample_id = fact.id + "|icl";
    params.max_tokens = 16;
    p.icl_output = gateway.generate(ep, {{"user", icl_prompt(fact, demos)}}, params).text;
    p.icl_correct = check_success(p.icl_output, fact.object_original);
  }
  return p;
}

std::vector<FactEdit> select_demos(const std::vector<FactEdit>& pool, const FactEdit& fact,
                                   std::size_t k, std::uint64_t seed) {
  std::vector<const FactEdit*> candidates;
  for (const auto& f : pool) {
    if (f.relation == fact.relation && f.id != fact.id && f.subject != fact.subject) {
      candidates.push_back(&f);
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const FactEdit* a, const FactEdit* b) { return a->id < b->id; });
  SeededRng rng(seed);
  const auto n = std::min(k, candidates.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(candidates.size()) - 1));
    std::swap(candidates[i], candidates[j]);
  }
  std::vector<FactEdit> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(*candidates[i]);
  return out;
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw PreconditionError("spearman: inputs differ in length");
  if (xs.size() < 2) throw PreconditionError("spearman: need at least two points");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mx;
    const double dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw UndefinedError("spearman: constant input");
  return sxy / std::sqrt(sxx * syy);
}

const char* to_string(BucketStrategy s) {
  return s == BucketStrategy::Quantile ? "quantile" : "log_width";
}

BucketStrategy bucket_strategy_from_string(const std::string& s) {
  if (s == "quantile") return BucketStrategy::Quantile;
  if (s == "log_width") return BucketStrategy::LogWidth;
  throw ConfigError("unknown bucket strategy: " + s);
}

std::vector<Bucket> bucketize(std::vector<Scored> items, int n_buckets, BucketStrategy strategy) {
  if (n_buckets < 1) throw PreconditionError("bucketize: need at least one bucket");
  if (items.empty()) return {};
  for (const auto& it : items) {
    if (!std::isfinite(it.value)) throw PreconditionError("bucketize: non-finite score for " + it.id);
  }
  std::sort(items.begin(), items.end(), [](const Scored& a, const Scored& b) {
    return a.value != b.value ? a.value < b.value : a.id < b.id;
  });
  const auto n = items.size();
  const auto B = static_cast<std::size_t>(n_buckets);
  std::vector<std::size_t> slot(n);
  if (strategy == BucketStrategy::Quantile) {
    for (std::size_t i = 0; i < n; ++i) {
      slot[i] = (i > 0 && items[i].value == items[i - 1].value) ? slot[i - 1] : i * B / n;
    }
  } else {
    auto lg = [](double v) {
      if (v < 0) throw PreconditionError("log-width buckets need non-negative scores");
      return std::log10(v + 1.0);
    };
    const double lo = lg(items.front().value);
    const double hi = lg(items.back().value);
    for (std::size_t i = 0; i < n; ++i) {
      if (hi == lo) {
        slot[i] = 0;
        continue;
      }
      const double f = (lg(items[i].value) - lo) / (hi - lo);
      slot[i] = std::min(B - 1, static_cast<std::size_t>(f * static_cast<double>(B)));
    }
  }
  std::vector<Bucket> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.empty() || i == 0 || slot[i] != slot[i - 1]) {
      Bucket b;
      b.index = static_cast<int>(out.size());
      b.lower = items[i].value;
      out.push_back(std::move(b));
    }
    out.back().upper = items[i].value;
    out.back().members.push_back(items[i].id);
  }
  if (out.size() < B) {
    spdlog::warn("bucketize: {} buckets requested, {} produced", B, out.size());
  }
  return out;
}

std::vector<HistogramBin> histogram(std::span<const double> values, int log_base) {
  if (log_base < 2) throw PreconditionError("histogram: log base must be >= 2");
  std::map<int, std::int64_t> bins;
  std::int64_t zeros = 0;
  const double base = log_base;
  for (double v : values) {
    if (v < 0 || !std::isfinite(v)) throw PreconditionError("histogram: scores must be >= 0");
    if (v == 0) {
      ++zeros;
      continue;
    }
    int e = static_cast<int>(std::floor(std::log(v) / std::log(base)));
    while (std::pow(base, e + 1) <= v) ++e;
    while (std::pow(base, e) > v) --e;
    ++bins[e];
  }
  std::vector<HistogramBin> out;
  if (zeros > 0) out.push_back({std::nullopt, zeros});
  for (const auto& [e, c] : bins) out.push_back({e, c});
  return out;
}

namespace {

std::string opt_int(const std::optional<std::int64_t>& v) {
  return v ? std::to_string(*v) : std::string{};
}
std::string opt_double(const std::optional<double>& v) {
  return v ? fmt::format("{}", *v) : std::string{};
}
std::optional<std::int64_t> parse_int(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stoll(s);
}
std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

std::vector<std::vector<std::string>> csv_rows(const std::string& csv, std::size_t columns) {
  std::vector<std::vector<std::string>> rows;
  std::size_t start = 0;
  bool header = true;
  while (start < csv.size()) {
    const auto nl = csv.find('\n', start);
    const auto line = csv.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
    start = nl == std::string::npos ? csv.size() : nl + 1;
    if (text::trim(line).empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    auto fields = text::parse_csv_line(line);
    if (fields.size() != columns) {
      throw IoError("CSV row has " + std::to_string(fields.size()) + " fields, expected " +
                    std::to_string(columns));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

std::string scores_to_csv(const std::vector<PopularityScores>& scores) {
  std::string out = "fact_id,frequency,connection,cooccurrence,direction\n";
  for (const auto& s : scores) {
    out += text::csv_escape(s.fact_id) + "," + opt_int(s.frequency) + "," + opt_int(s.connection) +
           "," + opt_int(s.cooccurrence) + "," + to_string(s.direction_used) + "\n";
  }
  return out;
}

std::vector<PopularityScores> scores_from_csv(const std::string& csv) {
  std::vector<PopularityScores> out;
  for (const auto& f : csv_rows(csv, 5)) {
    PopularityScores s;
    s.fact_id = f[0];
    s.frequency = parse_int(f[1]);
    s.connection = parse_int(f[2]);
    s.cooccurrence = parse_int(f[3]);
    s.direction_used = direction_from_string(f[4]);
    out.push_back(std::move(s));
  }
  return out;
}

std::string probes_to_csv(const std::vector<MemoryProbe>& probes) {
  std::string out = "fact_id,ppl_original,ppl_target,log_ppl_diff,icl_correct,icl_output\n";
  for (const auto& p : probes) {
    out += text::csv_escape(p.fact_id) + "," + opt_double(p.ppl_original) + "," +
           opt_double(p.ppl_target) + "," + opt_double(p.log_ppl_diff) + "," +
           (p.icl_correct ? (*p.icl_correct ? "1" : "0") : "") + "," +
           text::csv_escape(text::replace_all(p.icl_output, "\n", "\\n")) + "\n";
  }
  return out;
}

std::vector<MemoryProbe> probes_from_csv(const std::string& csv) {
  std::vector<MemoryProbe> out;
  for (const auto& f : csv_rows(csv, 6)) {
    MemoryProbe p;
    p.fact_id = f[0];
    p.ppl_original = parse_double(f[1]);
    p.ppl_target = parse_double(f[2]);
    p.log_ppl_diff = parse_double(f[3]);
    if (!f[4].empty()) p.icl_correct = f[4] == "1";
    p.icl_output = text::replace_all(f[5], "\\n", "\n");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace editprobe
