// Acceptance gate: one PASS/FAIL line per criterion. Every check runs against
// local mock endpoints; tolerances are pinned below.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "../oracles/spearman_oracle.hpp"
#include "../oracles/string_oracle.hpp"
#include "../oracles/twohop_oracle.hpp"
#include "../support.hpp"
#include "editprobe/attacks.hpp"
#include "editprobe/dialogue_prober.hpp"
#include "editprobe/evaluation.hpp"
#include "editprobe/knowledge_mock.hpp"
#include "editprobe/metrics.hpp"
#include "editprobe/mitigation.hpp"
#include "editprobe/popularity.hpp"
#include "editprobe/rng.hpp"

extern char** environ;

namespace {

using namespace editprobe;
using namespace testing;

constexpr int kOracleTriples = 5000;
constexpr double kOracleBudgetSeconds = 5.0;
constexpr int kTurnDraws = 500;
constexpr double kTurnTolerancePoints = 5.0;
constexpr double kGridBudgetSeconds = 30.0;
constexpr double kSpearmanTolerance = 1e-12;
constexpr int kMonotoneVectors = 100;
constexpr int kCooccurrenceGraphs = 50;
constexpr int kMaxGraphNodes = 20;
constexpr double kPerplexityTolerance = 1e-9;
constexpr std::size_t kResumeSlack = 4;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------ metric oracle
std::string random_text(std::mt19937_64& rng, const std::vector<std::string>& answers) {
  static const std::vector<std::string> pieces = {
      "the", "answer", "is", "It", "not", "NOT", "nothing", "notable", "instead of", "rather than",
      "no longer", "isn't", "don't", "n't", "cannot", "knot", " ", "  ", ".", "!", "?", "\n", ",",
      "-", "'", "(", ")", "\xC3\xA9", "\xC3\x89", "\xC3\x9F", "\xE2\x80\x94", "\xE2\x80\x9C",
      "\xE2\x80\x9D", "\xC2\xA0", "\xC3\x9C", "x", "Y", "42", "_"};
  std::uniform_int_distribution<int> len(0, 14);
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_answer(0, answers.size() - 1);
  std::bernoulli_distribution use_answer(0.25), space(0.6);
  std::string out;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) {
    out += use_answer(rng) ? answers[pick_answer(rng)] : pieces[pick(rng)];
    if (space(rng)) out += ' ';
  }
  return out;
}

Outcome metric_oracle() {
  Outcome o;
  std::mt19937_64 rng(1234);
  const std::vector<std::string> answers = {"French", "english", "New York", "Caf\xC3\xA9",
                                            "Stra\xC3\x9F" "e", "U.S.", "not", "M\xC3\xBCnchen",
                                            "S\xC3\xA3o Paulo", "42"};
  std::uniform_int_distribution<std::size_t> pick(0, answers.size() - 1);
  const auto t0 = std::chrono::steady_clock::now();
  int mismatches = 0;
  for (int i = 0; i < kOracleTriples; ++i) {
    const auto out = random_text(rng, answers);
    const auto& orig = answers[pick(rng)];
    const auto& target = answers[pick(rng)];
    if (check_success(out, target) != oracle::check_success(out, target)) ++mismatches;
    if (check_reversion(out, orig) != oracle::check_reversion(out, orig)) ++mismatches;
  }
  const double elapsed = seconds_since(t0);
  o.require(mismatches == 0, std::to_string(mismatches) + " mismatches");
  o.require(elapsed < kOracleBudgetSeconds, "took " + std::to_string(elapsed) + " s");
  if (o.pass) o.detail = std::to_string(kOracleTriples) + " triples, " + std::to_string(elapsed) + " s";
  return o;
}

// ---------------------------------------------------------- golden suites
Outcome normalization_golden() {
  Outcome o;
  int n = 0;
  for (const auto& row : jsonl(fixture("normalization.jsonl"))) {
    ++n;
    const auto got = normalize(row["input"].get<std::string>());
    o.require(got == row["expected"].get<std::string>(),
              "input '" + row["input"].get<std::string>() + "' gave '" + got + "'");
  }
  o.require(n == 50, "expected 50 fixture pairs, found " + std::to_string(n));
  if (o.pass) o.detail = "50 pairs";
  return o;
}

Outcome truncation_suite() {
  Outcome o;
  int n = 0;
  for (const auto& row : jsonl(fixture("negation.jsonl"))) {
    ++n;
    const auto in = row["input"].get<std::string>();
    o.require(truncate_negations(in) == row["expected"].get<std::string>(), "input '" + in + "'");
  }
  o.require(n >= 23, "fewer than 23 truncation fixtures");
  o.require(!check_reversion("English instead of French.", "French"), "instead-of example");
  o.require(check_reversion("French is the mother tongue.", "French"), "plain reversion example");
  o.require(!check_reversion("It is not French.", "French"), "not example");
  if (o.pass) o.detail = std::to_string(n) + " fixtures + 3 reversion examples";
  return o;
}

// ------------------------------------------------------ attack invariants
std::vector<AttackPrompt> build_attacks(const std::vector<FactEdit>& facts,
                                        const std::vector<DialogueClip>& clips,
                                        const std::vector<Cell>& cells, std::uint64_t seed) {
  RunningMock rewriter(rewriter_script(facts));
  ModelGateway gateway;
  const auto ep = endpoint("rewriter", rewriter.url(), EndpointRole::Rewriter);
  AttackConfig cfg;
  cfg.workers = 8;
  AttackBuilder builder(cfg, facts, clips, canned_profiles(profiles100()), &gateway, &ep, seed);
  return builder.build_all(cells);
}

std::string attacks_bytes(const std::vector<AttackPrompt>& attacks) {
  std::string out;
  for (const auto& a : attacks) out += attack_to_json_line(a) + "\n";
  return out;
}

Outcome attack_invariants() {
  Outcome o;
  const auto facts = facts100();
  const auto clips = load_dialogue_clips(fixture("multiwoz_sample.json"), {2, 4}, 77);
  const auto grid = standard_grid();
  const auto a1 = build_attacks(facts, clips, grid, 99);
  const auto a2 = build_attacks(facts, clips, grid, 99);
  o.require(attacks_bytes(a1) == attacks_bytes(a2), "same seed gave different attack sets");

  std::map<std::string, const FactEdit*> by_id;
  for (const auto& f : facts) by_id[f.id] = &f;
  std::map<std::pair<std::string, QueryKind>, std::string> related;
  for (const auto& a : a1) {
    if (!a.skip_reason && a.context_kind == ContextKind::Related) related[{a.fact_id, a.query_kind}] = a.context;
  }
  int contexts = 0, noisy = 0, clozes = 0, dialogues = 0, skipped = 0;
  for (const auto& a : a1) {
    if (a.skip_reason) {
      ++skipped;
      continue;
    }
    const auto norm_o = normalize(by_id.at(a.fact_id)->object_original);
    if (a.context_kind != ContextKind::None) {
      ++contexts;
      std::string all = a.context;
      for (const auto& t : a.turns) all += "\n" + t.text;
      o.require(normalize(all).find(norm_o) == std::string::npos, a.sample_id() + " leaks o");
    }
    if (a.context_kind == ContextKind::NoisyContext) {
      ++noisy;
      const auto& rel = related[{a.fact_id, a.query_kind}];
      const auto suffix = std::string(kNoiseSeparator) + rel;
      o.require(!rel.empty() && a.context.size() > suffix.size() &&
                    a.context.compare(a.context.size() - suffix.size(), suffix.size(), suffix) == 0,
                a.sample_id() + " does not end with its related context");
    }
    if (a.query_kind == QueryKind::Cloze) {
      ++clozes;
      auto count = [](const std::string& s) {
        std::size_t n = 0;
        for (auto p = s.find("____"); p != std::string::npos; p = s.find("____", p + 4)) ++n;
        return n;
      };
      const auto full = a.text + [&] {
        std::string t;
        for (const auto& turn : a.turns) t += turn.text;
        return t;
      }();
      o.require(count(a.query) == 1 && count(full) == 1, a.sample_id() + " blank count != 1");
    }
    if (is_dialogue(a.context_kind)) {
      ++dialogues;
      try {
        check_alternation(a.turns);
      } catch (const InvariantViolation&) {
        o.require(false, a.sample_id() + " roles do not alternate");
      }
    }
  }
  o.require(skipped == 0, std::to_string(skipped) + " attacks skipped");
  o.require(contexts > 0 && noisy > 0 && clozes > 0 && dialogues > 0, "an invariant had no instances");
  if (o.pass) {
    o.detail = std::to_string(a1.size()) + " attacks, " + std::to_string(contexts) + " contexts, " +
               std::to_string(clozes) + " clozes, " + std::to_string(dialogues) + " dialogues";
  }
  return o;
}

Outcome turn_ratio() {
  Outcome o;
  std::map<int, int> counts;
  for (int i = 0; i < kTurnDraws; ++i) ++counts[sample_dialogue_rounds(derive_seed(2024, "draw:" + std::to_string(i)))];
  const std::map<int, double> expected = {{3, 20.0}, {4, 40.0}, {5, 40.0}};
  std::string detail;
  for (const auto& [rounds, pct] : expected) {
    const double got = 100.0 * counts[rounds] / kTurnDraws;
    detail += std::to_string(rounds) + ":" + std::to_string(got).substr(0, 4) + "% ";
    o.require(std::abs(got - pct) <= kTurnTolerancePoints, "rounds " + std::to_string(rounds));
  }
  o.require(counts.size() == 3, "unexpected round count drawn");
  o.detail = o.pass ? detail : o.detail + " (" + detail + ")";
  return o;
}

// -------------------------------------------------------- mock subject
MockScript subject_script(const std::vector<FactEdit>& facts) {
  MockScript s;
  for (const auto& f : facts) {
    MockRule r;
    r.regex = true;
    r.match = regex_escape(f.prompt_direct) + R"([\s\S]*(Rethink and give|Reconsider that))";
    r.response = f.object_original + ".";
    s.rules.push_back(r);
  }
  MockRule cloze;
  cloze.match = "Fill the blank";
  cloze.response = "UNKNOWN";
  s.rules.push_back(cloze);
  for (const auto& f : facts) {
    MockRule r;
    r.regex = true;
    r.match = regex_escape(f.prompt_direct) + "$";
    r.response = f.object_target + ".";
    s.rules.push_back(r);
  }
  return s;
}

std::vector<FactEdit> distinct_subject_facts(std::size_t n) {
  auto facts = facts100();
  facts.resize(n);
  return facts;
}

Outcome mock_grid() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto facts = distinct_subject_facts(20);
  const std::vector<Cell> cells = {
      {ContextKind::None, QueryKind::Direct},       {ContextKind::None, QueryKind::Equivalent},
      {ContextKind::None, QueryKind::Cloze},        {ContextKind::Related, QueryKind::Direct},
      {ContextKind::NoisyContext, QueryKind::Direct}, {ContextKind::Related, QueryKind::Cloze},
      {ContextKind::None, QueryKind::DoubtOnly},    {ContextKind::None, QueryKind::DoubtSuggest}};
  const auto attacks = build_attacks(facts, {}, cells, 5);
  RunningMock subject(subject_script(facts));
  ModelGateway gateway;
  EvalEngine engine(gateway, endpoint("subject", subject.url()), EvalConfig{});
  std::map<std::string, FactEdit> by_id;
  for (const auto& f : facts) by_id[f.id] = f;
  const auto records = engine.run(attacks, [&](const std::string& id) -> const FactEdit& { return by_id.at(id); });
  const auto grid = aggregate(records);

  struct Expect {
    Cell cell;
    double acc, rev;
  };
  const std::vector<Expect> expected = {
      {cells[0], 100.0, 0.0}, {cells[1], 100.0, 0.0}, {cells[2], 0.0, 0.0}, {cells[3], 100.0, 0.0},
      {cells[4], 100.0, 0.0}, {cells[5], 0.0, 0.0},   {cells[6], 0.0, 100.0}, {cells[7], 0.0, 100.0}};
  for (const auto& e : expected) {
    const auto it = grid.cells.find(e.cell);
    const bool ok = it != grid.cells.end() && it->second.n == 20 && it->second.n_skipped == 0 &&
                    it->second.acc() == e.acc && it->second.rev() == e.rev;
    o.require(ok, to_string(e.cell) + " got acc=" +
                      (it == grid.cells.end() ? "absent" : format_percent(it->second.acc())) + " rev=" +
                      (it == grid.cells.end() ? "absent" : format_percent(it->second.rev())));
  }
  const double elapsed = seconds_since(t0);
  o.require(elapsed < kGridBudgetSeconds, "took " + std::to_string(elapsed) + " s");
  if (o.pass) o.detail = "8 cells x 20 facts exact, " + std::to_string(elapsed).substr(0, 4) + " s";
  return o;
}

Outcome doubt_shape() {
  Outcome o;
  const auto facts = distinct_subject_facts(15);
  const std::vector<Cell> cells = {{ContextKind::None, QueryKind::DoubtOnly},
                                   {ContextKind::None, QueryKind::DoubtSuggest}};
  const auto attacks = build_attacks(facts, {}, cells, 5);
  RunningMock subject(subject_script(facts));
  ModelGateway gateway;
  EvalEngine engine(gateway, endpoint("subject", subject.url()), EvalConfig{});
  std::map<std::string, FactEdit> by_id;
  for (const auto& f : facts) by_id[f.id] = f;
  engine.run(attacks, [&](const std::string& id) -> const FactEdit& { return by_id.at(id); });
  o.require(subject->request_count() == 2 * attacks.size(),
            "mock saw " + std::to_string(subject->request_count()) + " requests for " +
                std::to_string(attacks.size()) + " samples");
  std::map<std::string, int> per_sample;
  for (const auto& e : gateway.log().entries()) {
    auto id = e.sample_id;
    if (id.size() > 3 && id.compare(id.size() - 3, 3, "|r1") == 0) id.resize(id.size() - 3);
    ++per_sample[id];
  }
  for (const auto& a : attacks) {
    o.require(per_sample[a.sample_id()] == 2, a.sample_id() + " sent " +
                                                  std::to_string(per_sample[a.sample_id()]) + " requests");
  }
  if (o.pass) o.detail = std::to_string(attacks.size()) + " samples, 2 requests each";
  return o;
}

// ---------------------------------------------------------------- spearman
Outcome spearman_criterion() {
  Outcome o;
  std::size_t checked = 0;
  double worst = 0;
  for (int n = 2; n <= 6; ++n) {
    std::vector<double> xs(static_cast<std::size_t>(n)), perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) xs[static_cast<std::size_t>(i)] = 0.5 * i * i - 3.0;  // distinct
    std::iota(perm.begin(), perm.end(), 1.0);
    do {
      const double got = spearman(xs, perm);
      const double want = oracle::spearman_d2(xs, perm);
      worst = std::max(worst, std::abs(got - want));
      ++checked;
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  o.require(worst <= kSpearmanTolerance, "max deviation " + std::to_string(worst));
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0, 3);
  for (int k = 0; k < kMonotoneVectors; ++k) {
    std::vector<double> xs(20), ys(20);
    for (auto& v : xs) v = g(rng);
    for (auto& v : ys) v = g(rng);
    std::vector<double> tx(xs.size());
    std::transform(xs.begin(), xs.end(), tx.begin(), [](double v) { return std::exp(v) + v * v * v; });
    o.require(std::abs(spearman(xs, ys) - spearman(tx, ys)) <= kSpearmanTolerance,
              "monotone transform changed rho");
  }
  if (o.pass) o.detail = std::to_string(checked) + " permutations, max |diff| " + std::to_string(worst);
  return o;
}

// ------------------------------------------------------------ co-occurrence
Outcome cooccurrence() {
  Outcome o;
  std::mt19937_64 rng(31337);
  int queries = 0;
  for (int g = 0; g < kCooccurrenceGraphs; ++g) {
    const int nodes = std::uniform_int_distribution<int>(3, kMaxGraphNodes)(rng);
    const int edges = std::uniform_int_distribution<int>(0, nodes * 4)(rng);
    std::uniform_int_distribution<int> node(0, nodes - 1), pred(1, 3);
    std::vector<oracle::Statement> statements;
    KnowledgeFixture fx;
    for (int e = 0; e < edges; ++e) {
      oracle::Statement s = {"Q" + std::to_string(node(rng) + 1), "P" + std::to_string(pred(rng)),
                             "Q" + std::to_string(node(rng) + 1)};
      statements.push_back(s);
      fx.triples.push_back({s[0], s[1], s[2]});
    }
    MockKnowledgeServer server(fx);
    server.start();
    TempDir tmp;
    KnowledgeConfig kc;
    kc.sparql_url = server.base_url();
    kc.cache_dir = tmp.path();
    kc.requests_per_second = 10000;
    KnowledgeClient client(kc);
    for (int q = 0; q < 4; ++q) {
      const auto s = "Q" + std::to_string(node(rng) + 1);
      auto t = "Q" + std::to_string(node(rng) + 1);
      if (s == t) continue;
      ++queries;
      const auto fwd = client.fetch_cooccurrence(s, t, CooccurrenceDirection::Forward);
      const auto both = client.fetch_cooccurrence(s, t, CooccurrenceDirection::Bidirectional);
      o.require(fwd == oracle::paths_forward(statements, s, t), "forward count, graph " + std::to_string(g));
      o.require(both == oracle::paths_bidirectional(statements, s, t),
                "bidirectional count, graph " + std::to_string(g));
      o.require(client.fetch_edge_count(s) == oracle::edge_count(statements, s),
                "edge count, graph " + std::to_string(g));
    }
    server.stop();
  }
  if (o.pass) o.detail = std::to_string(kCooccurrenceGraphs) + " graphs, " + std::to_string(queries) + " pairs";
  return o;
}

// --------------------------------------------------------------- perplexity
Outcome perplexity_criterion() {
  Outcome o;
  const std::vector<double> two = {-1.0, -1.0}, zero = {0.0};
  o.require(std::abs(perplexity_from_logprobs(two) - std::exp(1.0)) <= kPerplexityTolerance, "[-1,-1] != e");
  o.require(std::abs(perplexity_from_logprobs(zero) - 1.0) <= kPerplexityTolerance, "[0] != 1");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lp(-8.0, 0.0);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> v(static_cast<std::size_t>(1 + k % 17));
    long double nll = 0;
    for (auto& x : v) {
      x = lp(rng);
      nll -= x;
    }
    const double want = static_cast<double>(std::exp(nll / static_cast<long double>(v.size())));
    o.require(std::abs(perplexity_from_logprobs(v) - want) <= kPerplexityTolerance * want,
              "random vector " + std::to_string(k));
  }
  // Same closed form through the scoring endpoint.
  MockScript script;
  MockRule r;
  r.match = "mother tongue";
  r.logprobs = std::vector<double>{-0.5, -1.5};
  script.rules.push_back(r);
  RunningMock server(script);
  ModelGateway gateway;
  auto ep = endpoint("base", server.url());
  ep.supports_scoring = true;
  const double got = perplexity(gateway, ep, "The mother tongue of X is", "Old French");
  o.require(std::abs(got - std::exp(1.0)) <= kPerplexityTolerance, "endpoint perplexity " + std::to_string(got));
  if (o.pass) o.detail = "202 vectors + endpoint round trip";
  return o;
}

// ------------------------------------------------------- cache transparency
Outcome cache_transparency() {
  Outcome o;
  MockKnowledgeServer server(KnowledgeFixture::from_file(fixture("knowledge_fixture.json")));
  server.start();
  TempDir tmp;
  KnowledgeConfig kc;
  kc.wikipedia_url = kc.pageviews_url = kc.wikidata_url = kc.sparql_url = server.base_url();
  kc.cache_dir = tmp.path();
  kc.requests_per_second = 10000;
  const auto facts = facts100();
  KnowledgeClient first(kc);
  const auto csv1 = scores_to_csv(score_facts(first, facts, CooccurrenceDirection::Bidirectional, 8));
  const auto after_first = server.request_count();
  KnowledgeClient second(kc);
  const auto csv2 = scores_to_csv(score_facts(second, facts, CooccurrenceDirection::Bidirectional, 8));
  o.require(after_first > 0, "first pass made no requests");
  o.require(server.request_count() == after_first && second.network_calls() == 0,
            "second pass hit the network " + std::to_string(server.request_count() - after_first) + " times");
  o.require(csv1 == csv2, "scores differ between passes");
  server.stop();
  if (o.pass) o.detail = std::to_string(after_first) + " first-pass calls, 0 second-pass";
  return o;
}

// ------------------------------------------------------- dialogue prober
Outcome dialogue_contracts() {
  Outcome o;
  o.require(parse_verdict("Sorry. The edit failed") == Verdict::EditFailed, "edit failed sentinel");
  o.require(parse_verdict("Thanks. Result: Confusion.") == Verdict::ConfusionReported, "confusion sentinel");
  o.require(parse_verdict("Result: No Confusion") == Verdict::NoConfusionReported, "no-confusion sentinel");
  o.require(parse_verdict("result: confusion.") == Verdict::Unparsed, "case must match exactly");
  o.require(parse_verdict("The edit has failed") == Verdict::Unparsed, "paraphrase must not match");

  auto facts = distinct_subject_facts(3);
  MockScript sim;
  MockRule failed;
  failed.match = facts[0].subject;
  failed.response = "The edit failed";
  MockRule confused;
  confused.match = facts[1].subject;
  confused.responses = {"What do you know about it?", "Are you sure?", "Result: Confusion."};
  sim.rules = {failed, confused};
  sim.default_response = "Tell me more?";
  MockScript subj;
  subj.default_response = "I think it is correct.";
  RunningMock sim_server(sim), subject_server(subj);
  ModelGateway gateway;
  const auto sim_ep = endpoint("sim", sim_server.url(), EndpointRole::Simulator);
  const auto subj_ep = endpoint("subject", subject_server.url());
  const auto t0 = run_probe(gateway, sim_ep, subj_ep, facts[0]);
  o.require(t0.verdict == Verdict::EditFailed && t0.turns.size() == 1, "EditFailed did not stop at once");
  const auto t1 = run_probe(gateway, sim_ep, subj_ep, facts[1]);
  o.require(t1.verdict == Verdict::ConfusionReported && t1.user_turns() == 3, "Confusion verdict");
  const auto t2 = run_probe(gateway, sim_ep, subj_ep, facts[2], 5);
  o.require(t2.verdict == Verdict::Unparsed && t2.user_turns() == 5 && t2.turns.size() == 10,
            "5 turns without sentinel");
  const auto t3 = run_probe(gateway, sim_ep, subj_ep, facts[2], 9);
  o.require(t3.user_turns() <= 5, "probe exceeded 5 user turns");

  int n = 0;
  for (const auto& row : jsonl(fixture("reversion_transcripts.jsonl"))) {
    ++n;
    FactEdit f;
    f.id = row["id"];
    f.subject = row["subject"];
    f.prompt_direct = row["prompt_direct"];
    f.object_original = row["object_original"];
    f.object_target = row["object_target"];
    DialogueTranscript t;
    t.fact_id = f.id;
    for (const auto& turn : row["turns"]) {
      t.turns.push_back({turn["role"] == "user_sim" ? ProbeRole::UserSim : ProbeRole::Subject,
                         turn["text"], turn["turn_index"]});
    }
    const bool got = detect_auto_flags(t, f).contains(AutoFlag::ReversionInDialogue);
    o.require(got == row["expected_reversion"].get<bool>(), "transcript " + f.id);
  }
  o.require(n == 30, "expected 30 reversion transcripts");
  if (o.pass) o.detail = "5 sentinel cases, 4 scripted probes, 30 transcripts";
  return o;
}

// ------------------------------------------------------ mitigation identity
Outcome mitigation_identity() {
  Outcome o;
  const auto facts = distinct_subject_facts(10);
  const std::vector<Cell> cells = {{ContextKind::None, QueryKind::Direct},
                                   {ContextKind::Related, QueryKind::Direct},
                                   {ContextKind::None, QueryKind::DoubtSuggest}};
  const auto attacks = build_attacks(facts, {}, cells, 5);
  std::map<std::string, FactEdit> by_id;
  for (const auto& f : facts) by_id[f.id] = f;

  RunningMock a(subject_script(facts));
  {
    ModelGateway gateway;
    EvalConfig cfg;
    cfg.workers = 1;
    cfg.mitigation.mode = MitigationMode::None;
    EvalEngine engine(gateway, endpoint("subject", a.url()), cfg);
    engine.run(attacks, [&](const std::string& id) -> const FactEdit& { return by_id.at(id); });
  }
  RunningMock b(subject_script(facts));
  {
    ModelGateway gateway;
    const auto ep = endpoint("subject", b.url());
    for (const auto& att : attacks) {
      GenerationParams p;
      p.sample_id = att.sample_id();
      if (is_doubt(att.query_kind)) {
        GenerationParams p1 = p;
        p1.sample_id += "|r1";
        const auto out1 = gateway.generate(ep, to_messages(att), p1).text;
        const auto followup = doubt_followup(by_id.at(att.fact_id), att.query_kind);
        gateway.generate(ep, {{"user", doubt_round_two(att.text, out1, followup)}}, p);
      } else {
        gateway.generate(ep, to_messages(att), p);
      }
    }
  }
  const auto bodies_a = a->request_bodies();
  const auto bodies_b = b->request_bodies();
  o.require(!bodies_a.empty() && bodies_a == bodies_b, "request streams differ");

  int n = 0;
  for (const auto& row : jsonl(fixture("pronoun_trigger.jsonl"))) {
    ++n;
    const auto text = row["text"].get<std::string>();
    o.require(pronoun_trigger(text, row["subject"].get<std::string>()) == row["expected"].get<bool>(),
              "trigger mismatch on '" + text + "'");
  }
  o.require(n == 50, "expected 50 trigger sentences");
  if (o.pass) o.detail = std::to_string(bodies_a.size()) + " identical requests, 50 trigger sentences";
  return o;
}

// ------------------------------------------------------------ resumability
int run_cli(const std::vector<std::string>& args, pid_t* child = nullptr) {
  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  storage.insert(storage.begin(), EDITPROBE_CLI_PATH);
  for (auto& s : storage) argv.push_back(s.data());
  argv.push_back(nullptr);
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, "/dev/null", O_WRONLY, 0);
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) return -1;
  if (child) {
    *child = pid;
    return 0;
  }
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t line_count(const fs::path& p) {
  if (!fs::exists(p)) return 0;
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

fs::path write_run_config(const TempDir& tmp, const std::string& name) {
  const auto facts = distinct_subject_facts(12);
  auto script = subject_script(facts);
  // Alternate answers so the grid has both outcomes in every cell.
  for (std::size_t i = facts.size() + 1; i < script.rules.size(); ++i) {
    if (i % 2 == 0) script.rules[i].response = facts[i - facts.size() - 1].object_original + ".";
  }
  json rules = json::array();
  for (const auto& r : script.rules) {
    rules.push_back({{"match", r.match}, {"regex", r.regex}, {"response", r.response}});
  }
  spit(tmp / "mock.json", json{{"rules", rules}, {"default", "UNKNOWN"}, {"delay_ms", 25}}.dump(1));
  const json cfg = {
      {"run_id", "resume-check"},
      {"run_dir", (tmp / name).string()},
      {"seed", 11},
      {"dataset", {{"kind", "counterfact"}, {"path", fixture("counterfact_sample.json").string()}, {"split", "all"}}},
      {"endpoints", json::array({{{"name", "subject"}, {"base_url", "http://127.0.0.1:1"}, {"role", "subject"},
                                  {"max_parallel", 2}, {"max_retries", 1}, {"backoff_ms", 1}}})},
      {"roles", {{"subject", "subject"}}},
      {"cells", "None/Direct,None/Equivalent,None/DoubtOnly,None/DoubtSuggest"},
      {"evaluation", {{"workers", 2}}},
      {"knowledge", {{"cache_dir", (tmp / "cache").string()}}},
      {"mock", {{"enabled", true}, {"model_script", (tmp / "mock.json").string()}}}};
  const auto path = tmp / (name + ".json");
  spit(path, cfg.dump(1));
  return path;
}

std::map<std::string, std::tuple<bool, bool, std::string>> record_outcomes(const fs::path& p) {
  std::map<std::string, std::tuple<bool, bool, std::string>> out;
  for (const auto& r : read_records_jsonl(p)) out[r.sample_id()] = {r.success, r.reversion, r.raw_output};
  return out;
}

Outcome resumability() {
  Outcome o;
  TempDir tmp;
  const auto full_cfg = write_run_config(tmp, "full");
  const auto cut_cfg = write_run_config(tmp, "cut");
  for (const auto& cfg : {full_cfg, cut_cfg}) {
    o.require(run_cli({"ingest", "--config", cfg.string()}) == 0, "ingest failed");
    o.require(run_cli({"build-attacks", "--config", cfg.string()}) == 0, "build-attacks failed");
  }
  if (!o.pass) return o;
  o.require(run_cli({"evaluate", "--config", full_cfg.string()}) == 0, "uninterrupted evaluate failed");
  const auto total = line_count(tmp / "full" / "records.jsonl");

  pid_t child = 0;
  run_cli({"evaluate", "--config", cut_cfg.string()}, &child);
  const auto checkpoint = tmp / "cut" / "records.jsonl";
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(20);
  while (line_count(checkpoint) < total / 3 && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  kill(child, SIGKILL);
  int status = 0;
  waitpid(child, &status, 0);
  const auto partial = line_count(checkpoint);
  o.require(partial > 0 && partial < total,
            "kill did not land mid-run (" + std::to_string(partial) + "/" + std::to_string(total) + ")");
  const auto requests_before = line_count(tmp / "cut" / "requests.jsonl");
  o.require(run_cli({"evaluate", "--resume", "--config", cut_cfg.string()}) == 0, "resume failed");
  const auto resumed_requests = line_count(tmp / "cut" / "requests.jsonl") - requests_before;
  const auto full_requests = line_count(tmp / "full" / "requests.jsonl");
  // At most the in-flight requests at kill time are repeated: two workers with
  // up to two rounds each.
  o.require(requests_before + resumed_requests <= full_requests + kResumeSlack,
            "interrupted run sent " + std::to_string(requests_before + resumed_requests) + " requests vs " +
                std::to_string(full_requests));
  o.require(slurp(tmp / "full" / "grid.csv") == slurp(tmp / "cut" / "grid.csv"), "grids differ");
  o.require(record_outcomes(tmp / "full" / "records.jsonl") == record_outcomes(checkpoint), "records differ");
  if (o.pass) {
    o.detail = "killed at " + std::to_string(partial) + "/" + std::to_string(total) + ", resumed with " +
               std::to_string(resumed_requests) + " of " + std::to_string(full_requests) + " requests";
  }
  return o;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"metric-oracle-equivalence", metric_oracle},
      {"normalization-golden-suite", normalization_golden},
      {"reversion-truncation-suite", truncation_suite},
      {"attack-construction-invariants", attack_invariants},
      {"turn-ratio", turn_ratio},
      {"mock-end-to-end-grid", mock_grid},
      {"doubt-protocol-shape", doubt_shape},
      {"spearman-correctness", spearman_criterion},
      {"cooccurrence-correctness", cooccurrence},
      {"perplexity-closed-form", perplexity_criterion},
      {"cache-transparency", cache_transparency},
      {"dialogue-prober-contracts", dialogue_contracts},
      {"mitigation-identity", mitigation_identity},
      {"resumability", resumability},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    failed += !out.pass;
    std::cout << (out.pass ? "PASS " : "FAIL ") << name << " : " << out.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
