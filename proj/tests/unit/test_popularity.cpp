#include <cmath>
#include <random>

#include "doctest.h"
#include "editprobe/error.hpp"
#include "editprobe/knowledge_mock.hpp"
#include "editprobe/popularity.hpp"
#include "oracles/spearman_oracle.hpp"
#include "support.hpp"

using namespace editprobe;
using testing::RunningMock;

namespace {

FactEdit fact(const std::string& id, const std::string& subject, const std::string& relation = "P103") {
  FactEdit f;
  f.id = id;
  f.subject = subject;
  f.relation = relation;
  f.object_original = "French";
  f.object_target = "English";
  f.prompt_direct = "The mother tongue of " + subject + " is";
  return f;
}

}  // namespace

TEST_CASE("perplexity closed form") {
  const std::vector<double> lp = {-1.0, -1.0};
  CHECK(perplexity_from_logprobs(lp) == doctest::Approx(std::exp(1.0)));
  const std::vector<double> mixed = {-0.5, -1.5, -4.0};
  CHECK(perplexity_from_logprobs(mixed) == doctest::Approx(std::exp(2.0)));
  CHECK_THROWS_AS(perplexity_from_logprobs(std::vector<double>{}), PreconditionError);
}

TEST_CASE("average ranks share ties") {
  const std::vector<double> xs = {10, 20, 20, 5};
  CHECK(average_ranks(xs) == std::vector<double>{2, 3.5, 3.5, 1});
}

TEST_CASE("spearman matches the d-squared formula without ties") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int k = 0; k < 200; ++k) {
    std::vector<double> xs(12), ys(12);
    for (auto& v : xs) v = g(rng);
    for (auto& v : ys) v = g(rng);
    CHECK(spearman(xs, ys) == doctest::Approx(oracle::spearman_d2(xs, ys)).epsilon(1e-12));
  }
  const std::vector<double> a = {1, 2, 3}, b = {3, 2, 1}, c = {1, 1, 1};
  CHECK(spearman(a, b) == doctest::Approx(-1.0));
  CHECK(spearman(a, a) == doctest::Approx(1.0));
  CHECK_THROWS_AS(spearman(a, c), UndefinedError);
  CHECK_THROWS_AS(spearman(std::vector<double>{1}, std::vector<double>{1}), PreconditionError);
}

TEST_CASE("quantile buckets are ordered, disjoint and exhaustive") {
  std::vector<Scored> items;
  for (int i = 0; i < 23; ++i) items.push_back({"f" + std::to_string(i), static_cast<double>(i % 7)});
  for (const auto strategy : {BucketStrategy::Quantile, BucketStrategy::LogWidth}) {
    const auto buckets = bucketize(items, 5, strategy);
    CHECK(!buckets.empty());
    CHECK(buckets.size() <= 5);
    std::set<std::string> seen;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      CHECK(buckets[b].lower <= buckets[b].upper);
      if (b > 0) CHECK(buckets[b - 1].upper < buckets[b].lower);
      CHECK_FALSE(buckets[b].members.empty());
      for (const auto& m : buckets[b].members) CHECK(seen.insert(m).second);
    }
    CHECK(seen.size() == items.size());
  }
  CHECK(bucketize({}, 5, BucketStrategy::Quantile).empty());
}

TEST_CASE("histogram has a zero bin and log10 exponents") {
  const std::vector<double> v = {0, 0, 1, 9, 10, 99, 100, 12345};
  const auto h = histogram(v);
  REQUIRE(h.size() == 5);
  CHECK(h[0] == HistogramBin{std::nullopt, 2});
  CHECK(h[1] == HistogramBin{0, 2});
  CHECK(h[2] == HistogramBin{1, 2});
  CHECK(h[3] == HistogramBin{2, 1});
  CHECK(h[4] == HistogramBin{4, 1});
  CHECK_THROWS_AS(histogram(std::vector<double>{-1}), Error);
}

TEST_CASE("demonstrations share the relation but not the fact or subject") {
  std::vector<FactEdit> pool;
  for (int i = 0; i < 10; ++i) pool.push_back(fact("f" + std::to_string(i), "S" + std::to_string(i % 8)));
  pool.push_back(fact("other", "X", "P17"));
  const auto& target = pool[0];
  const auto demos = select_demos(pool, target, 4, 7);
  CHECK(demos.size() == 4);
  for (const auto& d : demos) {
    CHECK(d.relation == target.relation);
    CHECK(d.id != target.id);
    CHECK(d.subject != target.subject);
  }
  CHECK(select_demos(pool, target, 4, 7) == demos);
  CHECK(select_demos(pool, pool.back(), 4, 7).empty());
  const auto prompt = icl_prompt(target, demos);
  CHECK(prompt.find(demos[0].prompt_direct + " French.") != std::string::npos);
  CHECK(prompt.ends_with(target.prompt_direct));
}

TEST_CASE("memory probe through a scoring endpoint") {
  MockScript s;
  MockRule gen;
  gen.regex = true;
  gen.match = "is$";
  gen.response = "French.";
  MockRule orig;
  orig.match = "is French";
  orig.logprobs = std::vector<double>{-0.1};
  MockRule target;
  target.match = "is English";
  target.logprobs = std::vector<double>{-2.0};
  s.rules = {gen, orig, target};
  RunningMock mock(s);
  ModelGateway gw;
  auto ep = testing::endpoint("base", mock.url());
  const auto f = fact("f0", "Ann");
  const auto direct = memory_probe(gw, ep, f, ProbeMode::Direct);
  CHECK_FALSE(direct.ppl_original.has_value());
  ep.supports_scoring = true;
  const auto p = memory_probe(gw, ep, f, ProbeMode::Icl, {fact("f1", "Bob")});
  REQUIRE(p.ppl_original.has_value());
  CHECK(*p.ppl_original == doctest::Approx(std::exp(0.1)));
  CHECK(*p.ppl_target == doctest::Approx(std::exp(2.0)));
  CHECK(*p.log_ppl_diff == doctest::Approx(0.1 - 2.0));
  CHECK(p.icl_correct == true);
  CHECK(p.icl_output == "French.");
  CHECK(probes_from_csv(probes_to_csv({p})) == std::vector<MemoryProbe>{p});
}

TEST_CASE("popularity scores from the mock knowledge services") {
  MockKnowledgeServer server(KnowledgeFixture::from_file(testing::fixture("knowledge_fixture.json")));
  server.start();
  testing::TempDir tmp;
  KnowledgeConfig kc;
  kc.wikipedia_url = kc.pageviews_url = kc.wikidata_url = kc.sparql_url = server.base_url();
  kc.cache_dir = tmp.path();
  kc.requests_per_second = 10000;
  KnowledgeClient client(kc);
  auto facts = testing::facts100();
  facts.resize(10);
  std::vector<std::string> skipped;
  const auto scores = score_facts(client, facts, CooccurrenceDirection::Forward, 4, &skipped);
  CHECK(scores.size() + skipped.size() == facts.size());
  for (const auto& s : scores) {
    CHECK(s.direction_used == CooccurrenceDirection::Forward);
    CHECK((s.frequency || s.connection || s.cooccurrence));
  }
  CHECK(scores_from_csv(scores_to_csv(scores)) == scores);
  auto unknown = facts[0];
  unknown.subject = "Nobody Known Here";
  unknown.subject_qid.reset();
  unknown.object_original = "Nothing Known Either";
  unknown.object_qid.reset();
  CHECK_THROWS_AS(score_fact(client, unknown), Unavailable);
  server.stop();
}

TEST_CASE("names round trip") {
  for (auto m : {Measure::Frequency, Measure::Connection, Measure::Cooccurrence}) {
    CHECK(measure_from_string(to_string(m)) == m);
  }
  CHECK(bucket_strategy_from_string(to_string(BucketStrategy::LogWidth)) == BucketStrategy::LogWidth);
}
