#include "doctest.h"
#include "editprobe/attacks.hpp"
#include "editprobe/error.hpp"
#include "editprobe/metrics.hpp"
#include "editprobe/rng.hpp"
#include "support.hpp"

using namespace editprobe;
using testing::RunningMock;

namespace {

FactEdit sample_fact() {
  FactEdit f;
  f.id = "cf:1";
  f.subject = "Ann Lee";
  f.relation = "P103";
  f.object_original = "French";
  f.object_target = "English";
  f.prompt_direct = "The mother tongue of Ann Lee is";
  f.prompts_equivalent = {"Ann Lee was born speaking"};
  return f;
}

ProfileText profile(std::string subject, std::string text) {
  ProfileText p;
  p.subject = std::move(subject);
  p.text = std::move(text);
  return p;
}

}  // namespace

TEST_CASE("cell names round trip and the standard grid is complete") {
  for (const auto& c : standard_grid()) CHECK(cell_from_string(to_string(c)) == c);
  CHECK(standard_grid().size() == 17);
  CHECK(parse_cells("all") == standard_grid());
  const auto two = parse_cells("None/Direct, Related/Cloze");
  REQUIRE(two.size() == 2);
  CHECK(two[1] == Cell{ContextKind::Related, QueryKind::Cloze});
  CHECK_THROWS_AS(parse_cells("Nowhere/Direct"), Error);
}

TEST_CASE("answer sentences are removed") {
  const std::string t = "Ann Lee grew up in Lyon. She speaks French fluently. She paints.";
  CHECK(remove_answer_sentences(t, "French") == "Ann Lee grew up in Lyon. She paints.");
  CHECK(remove_answer_sentences("The FRENCH-born poet. Fine.", "French") == "Fine.");
}

TEST_CASE("related context drops o and respects the word budget") {
  const auto f = sample_fact();
  const auto ctx = build_related_context(
      f, profile(f.subject, "Ann Lee is a poet. She writes in French. She lives in Oslo. She has two cats."), 9);
  CHECK(normalize(ctx).find("french") == std::string::npos);
  CHECK(ctx == "Ann Lee is a poet. She lives in Oslo.");
  CHECK_THROWS_AS(build_related_context(f, profile(f.subject, "French. French only."), 300), Unavailable);
}

TEST_CASE("noise fact selection avoids the same subject") {
  auto facts = testing::facts100();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto i = choose_noise_fact(facts, facts[0], seed);
    CHECK(facts[i].subject != facts[0].subject);
  }
  std::vector<FactEdit> same = {facts[0], facts[0]};
  CHECK_THROWS_AS(choose_noise_fact(same, facts[0], 1), Unavailable);
}

TEST_CASE("noisy context puts the related context last") {
  const auto f = sample_fact();
  const auto noisy = build_noisy_context(f, "Related part.", profile("Bob", "Bob likes French toast. Bob runs."));
  CHECK(noisy == "Bob runs.\n\nRelated part.");
}

TEST_CASE("dialogue rounds follow 1:2:2 and are seed deterministic") {
  CHECK(sample_dialogue_rounds(5) == sample_dialogue_rounds(5));
  std::map<int, int> counts;
  for (int i = 0; i < 5000; ++i) ++counts[sample_dialogue_rounds(derive_seed(1, std::to_string(i)))];
  CHECK(counts.size() == 3);
  CHECK(counts[3] / 5000.0 == doctest::Approx(0.2).epsilon(0.15));
  CHECK(counts[4] / 5000.0 == doctest::Approx(0.4).epsilon(0.08));
}

TEST_CASE("dialogue parsing and alternation") {
  const auto turns = parse_dialogue("User: hi\nthere\nAssistant: hello\nHuman: bye\nAI: ok");
  REQUIRE(turns.size() == 4);
  CHECK(turns[0].text == "hi there");
  CHECK(turns[1].role == Speaker::Ai);
  CHECK_NOTHROW(check_alternation(turns));
  CHECK_THROWS_AS(check_alternation(parse_dialogue("AI: first\nUser: then")), InvariantViolation);
  CHECK_THROWS_AS(check_alternation(parse_dialogue("User: a\nUser: b")), InvariantViolation);
}

TEST_CASE("noisy dialogue stays alternating and free of o") {
  const auto f = sample_fact();
  const std::vector<DialogueTurn> sim = {{Speaker::User, "Tell me about Ann."}, {Speaker::Ai, "She is a poet."},
                                         {Speaker::User, "Where?"},            {Speaker::Ai, "Oslo."}};
  const DialogueClip clip{"c", {{Speaker::User, "Book a hotel."}, {Speaker::Ai, "The French one is full. Try another."}}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto out = build_noisy_dialogue(f, sim, clip, seed);
    CHECK_NOTHROW(check_alternation(out));
    for (const auto& t : out) CHECK(normalize(t.text).find("french") == std::string::npos);
    CHECK(out.size() >= sim.size());
  }
}

TEST_CASE("cloze candidates") {
  CHECK(parse_numbered_list("Intro\n1. first\n2) second\n3. third") ==
        std::vector<std::string>{"first", "second", "third"});
  CHECK(cloze_from_candidate("Her first language was [French].", "French") == "Her first language was ____.");
  CHECK_FALSE(cloze_from_candidate("No brackets about French.", "French").has_value());
  CHECK_FALSE(cloze_from_candidate("[French] and [French].", "French").has_value());
  CHECK_FALSE(cloze_from_candidate("[French] is French.", "French").has_value());
  CHECK_FALSE(cloze_from_candidate("____ [French]", "French").has_value());
}

TEST_CASE("cloze and pronoun through the rewriter") {
  const auto f = sample_fact();
  RunningMock mock(testing::rewriter_script({f}));
  ModelGateway gw;
  const auto ep = testing::endpoint("rewriter", mock.url(), EndpointRole::Rewriter);
  RewriterContext rw{&gw, &ep, 5, 2};
  const auto cloze = build_cloze(f, rw, 3);
  CHECK(cloze.cloze.text_with_blank.find("____") != std::string::npos);
  CHECK(normalize(cloze.cloze.text_with_blank).find("french") == std::string::npos);
  const auto p = choose_pronoun(f.subject, rw, 3);
  CHECK(p.pronoun == "she");
  CHECK_FALSE(p.fallback);
}

TEST_CASE("failing rewriter makes the cloze unavailable") {
  const auto f = sample_fact();
  MockScript junk;
  junk.default_response = "I cannot help with that.";
  RunningMock mock(junk);
  ModelGateway gw;
  const auto ep = testing::endpoint("rewriter", mock.url(), EndpointRole::Rewriter);
  RewriterContext rw{&gw, &ep, 5, 2};
  CHECK_THROWS_AS(build_cloze(f, rw, 3), Unavailable);
  CHECK(mock->request_count() == 3);
  const auto p = choose_pronoun(f.subject, rw, 3);
  CHECK(p.pronoun == "it");
  CHECK(p.fallback);
}

TEST_CASE("pronoun parsing and substitution") {
  CHECK(parse_pronoun(" She.") == "she");
  CHECK(parse_pronoun("him") == "he");
  CHECK_FALSE(parse_pronoun("Ann").has_value());
  CHECK(apply_pronoun("The mother tongue of Ann Lee is", "Ann Lee", "she") == "The mother tongue of her is");
  CHECK(apply_pronoun("Ann Lee's mother tongue is", "Ann Lee", "he") == "His mother tongue is");
  CHECK(apply_pronoun("Ann Lee speaks", "Ann Lee", "they") == "They speaks");
  CHECK_THROWS_AS(apply_pronoun("Nobody here", "Ann Lee", "she"), Unavailable);
}

TEST_CASE("doubt follow-ups") {
  const auto f = sample_fact();
  const auto d1 = doubt_followup(f, QueryKind::DoubtOnly);
  CHECK(d1.find("Rethink and give the correct answer") != std::string::npos);
  CHECK(d1.find(f.prompt_direct) != std::string::npos);
  const auto d2 = doubt_followup(f, QueryKind::DoubtSuggest);
  CHECK(d2.find("Reconsider that the answer") != std::string::npos);
  CHECK(d2.find(f.prompt_direct + " French") != std::string::npos);
  CHECK(doubt_round_two("Q is", "A.", "?!") == "Q is A.?!");
  CHECK(doubt_round_two("Q is ", "A.", "?!") == "Q is A.?!");
  CHECK(doubt_round_two("Q is", "\nA.", "?!") == "Q is\nA.?!");
}

TEST_CASE("builder output is deterministic and serializes losslessly") {
  auto facts = testing::facts100();
  facts.resize(6);
  RunningMock mock(testing::rewriter_script(facts));
  ModelGateway gw;
  const auto ep = testing::endpoint("rewriter", mock.url(), EndpointRole::Rewriter);
  const auto clips = load_dialogue_clips(testing::fixture("multiwoz_sample.json"), {2, 4}, 1);
  AttackBuilder b(AttackConfig{}, facts, clips, testing::canned_profiles(testing::profiles100()), &gw, &ep, 9);
  const auto attacks = b.build_all(standard_grid());
  CHECK(attacks.size() == facts.size() * standard_grid().size());
  testing::TempDir tmp;
  write_attacks_jsonl(tmp / "a.jsonl", attacks);
  CHECK(read_attacks_jsonl(tmp / "a.jsonl") == attacks);
  for (const auto& a : attacks) {
    CHECK_FALSE(a.skip_reason.has_value());
    const auto msgs = to_messages(a);
    if (is_dialogue(a.context_kind)) {
      CHECK(msgs.size() == a.turns.size());
      CHECK(msgs.back().role == "user");
    } else {
      REQUIRE(msgs.size() == 1);
      CHECK(msgs[0].text == a.text);
    }
  }
}

TEST_CASE("missing profiles skip only the context cells") {
  auto facts = testing::facts100();
  facts.resize(2);
  AttackBuilder b(AttackConfig{}, facts, {}, testing::canned_profiles({}), nullptr, nullptr, 9);
  const auto attacks = b.build_all({{ContextKind::None, QueryKind::Direct}, {ContextKind::Related, QueryKind::Direct}});
  REQUIRE(attacks.size() == 4);
  CHECK_FALSE(attacks[0].skip_reason.has_value());
  CHECK(attacks[1].skip_reason.has_value());
}
