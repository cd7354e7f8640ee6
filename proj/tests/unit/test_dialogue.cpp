#include "doctest.h"
#include "editprobe/dialogue_prober.hpp"
#include "editprobe/text.hpp"
#include "support.hpp"

using namespace editprobe;
using testing::RunningMock;
using testing::endpoint;
using testing::json;

namespace {

FactEdit fact() {
  FactEdit f;
  f.id = "cf:3";
  f.subject = "Ann Lee";
  f.object_original = "French";
  f.object_target = "English";
  f.prompt_direct = "The mother tongue of Ann Lee is";
  return f;
}

DialogueTranscript transcript(const std::vector<std::string>& subject_turns) {
  DialogueTranscript t;
  t.fact_id = "cf:3";
  int i = 0;
  for (const auto& s : subject_turns) {
    t.turns.push_back({ProbeRole::UserSim, "question?", i});
    t.turns.push_back({ProbeRole::Subject, s, i});
    ++i;
  }
  return t;
}

}  // namespace

TEST_CASE("verdict sentinels are matched exactly") {
  CHECK(parse_verdict("The edit failed") == Verdict::EditFailed);
  CHECK(parse_verdict("Ok. Result: Confusion. Bye") == Verdict::ConfusionReported);
  CHECK(parse_verdict("Result: No Confusion") == Verdict::NoConfusionReported);
  CHECK(parse_verdict("Result: no confusion") == Verdict::Unparsed);
  CHECK(parse_verdict("What else do you know?") == Verdict::Unparsed);
  for (auto v : {Verdict::EditFailed, Verdict::ConfusionReported, Verdict::NoConfusionReported, Verdict::Unparsed}) {
    CHECK(verdict_from_string(to_string(v)) == v);
  }
}

TEST_CASE("simulator instruction carries both facts") {
  const auto s = simulator_instruction(fact());
  CHECK(s.find("Ann Lee") != std::string::npos);
  CHECK(s.find("The mother tongue of Ann Lee is French") != std::string::npos);
  CHECK(s.find("English") != std::string::npos);
}

TEST_CASE("probe alternates simulator and subject and stops on a verdict") {
  MockScript sim;
  sim.default_response = "";
  MockRule r;
  r.match = "Start the test now";
  r.responses = {"What language does Ann Lee speak?", "Are you sure?", "Result: No Confusion"};
  sim.rules = {r};
  MockScript subj;
  subj.default_response = "English.";
  RunningMock sim_server(sim), subj_server(subj);
  ModelGateway gw;
  const auto t = run_probe(gw, endpoint("sim", sim_server.url(), EndpointRole::Simulator),
                           endpoint("subject", subj_server.url()), fact());
  CHECK(t.verdict == Verdict::NoConfusionReported);
  CHECK(t.user_turns() == 3);
  REQUIRE(t.turns.size() == 5);
  CHECK(t.turns[0].role == ProbeRole::UserSim);
  CHECK(t.turns[1].role == ProbeRole::Subject);
  CHECK(t.error.empty());
  CHECK(t.auto_flags.empty());
  // The subject sees the simulator questions as user turns, the simulator sees
  // them as its own assistant turns.
  const auto subj_body = json::parse(subj_server->request_bodies().back())["messages"];
  CHECK(subj_body.size() == 3);
  CHECK(subj_body[0]["role"] == "user");
  const auto sim_body = json::parse(sim_server->request_bodies().back())["messages"];
  CHECK(sim_body[0]["role"] == "system");
  CHECK(sim_body[2]["role"] == "assistant");
}

TEST_CASE("probe errors are recorded instead of thrown") {
  MockScript sim;
  sim.default_response = "Question?";
  RunningMock sim_server(sim);
  ModelGateway gw;
  const auto t = run_probe(gw, endpoint("sim", sim_server.url(), EndpointRole::Simulator),
                           endpoint("subject", "http://127.0.0.1:1"), fact());
  CHECK(t.verdict == Verdict::Unparsed);
  CHECK_FALSE(t.error.empty());
}

TEST_CASE("auto flags") {
  const auto f = fact();
  CHECK(detect_auto_flags(transcript({"English.", "Actually French."}), f) ==
        std::set<AutoFlag>{AutoFlag::ReversionInDialogue});
  CHECK(detect_auto_flags(transcript({"French.", "English."}), f).empty());
  CHECK(detect_auto_flags(transcript({"It is not really English."}), f) == std::set<AutoFlag>{AutoFlag::TargetNegation});
  CHECK(detect_auto_flags(transcript({"English is what she speaks, never doubt it."}), f) ==
        std::set<AutoFlag>{AutoFlag::TargetNegation});
  CHECK(detect_auto_flags(transcript({"English. Many people who live there today do not know it."}), f).empty());
  CHECK(detect_auto_flags(transcript({"I have no idea."}), f) == std::set<AutoFlag>{AutoFlag::TargetNeverAsserted});
  CHECK(is_negation_token("isnt"));
  CHECK_FALSE(is_negation_token("note"));
}

TEST_CASE("reversion fixture") {
  for (const auto& row : testing::jsonl(testing::fixture("reversion_transcripts.jsonl"))) {
    FactEdit f;
    f.id = row["id"];
    f.subject = row["subject"];
    f.prompt_direct = row["prompt_direct"];
    f.object_original = row["object_original"];
    f.object_target = row["object_target"];
    DialogueTranscript t;
    for (const auto& turn : row["turns"]) {
      t.turns.push_back({turn["role"] == "user_sim" ? ProbeRole::UserSim : ProbeRole::Subject, turn["text"],
                         turn["turn_index"]});
    }
    CAPTURE(f.id);
    CHECK(detect_auto_flags(t, f).contains(AutoFlag::ReversionInDialogue) == row["expected_reversion"].get<bool>());
  }
}

TEST_CASE("annotation sheet round trip and summary") {
  const auto f = fact();
  auto a = transcript({"English.", "French."});
  a.auto_flags = detect_auto_flags(a, f);
  auto b = transcript({"English."});
  b.fact_id = "cf:4";
  const std::map<std::string, FactEdit> facts = {{"cf:3", f}, {"cf:4", f}};
  const auto csv = annotation_sheet_csv({a, b}, facts);
  const auto empty_sheet = annotation_sheet_csv({}, facts);
  CHECK(empty_sheet.find("summary") == std::string::npos);
  CHECK(csv.find("summary") != std::string::npos);

  auto s = summarize_annotations(csv);
  CHECK(s.rows == 2);
  CHECK(s.auto_percent.at("auto_reversion") == doctest::Approx(50.0));
  CHECK_FALSE(s.human_percent.at("confusion_reversion_to_original").has_value());
  CHECK_FALSE(s.any_confusion.has_value());

  // Fill in the human columns of the first row only.
  std::vector<std::string> lines;
  for (std::size_t start = 0; start < csv.size();) {
    const auto nl = csv.find('\n', start);
    lines.push_back(csv.substr(start, nl - start));
    start = nl + 1;
  }
  auto header = text::parse_csv_line(lines[0]);
  auto row = text::parse_csv_line(lines[1]);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "confusion_reversion_to_original") row[i] = "1";
    if (header[i].starts_with("confusion_") && row[i].empty()) row[i] = "0";
    if (header[i].starts_with("hallucination_")) row[i] = "0";
  }
  std::vector<std::string> escaped;
  for (const auto& x : row) escaped.push_back(text::csv_escape(x));
  lines[1] = text::join(escaped, ",");
  s = summarize_annotations(text::join(lines, "\n"));
  CHECK(*s.human_percent.at("confusion_reversion_to_original") == doctest::Approx(100.0));
  CHECK(*s.any_confusion == doctest::Approx(100.0));
  CHECK(*s.any_hallucination == doctest::Approx(0.0));
}

TEST_CASE("transcripts round trip") {
  auto t = transcript({"English.", "Fine, French."});
  t.verdict = Verdict::ConfusionReported;
  t.auto_flags = {AutoFlag::ReversionInDialogue};
  CHECK(transcript_from_json_line(transcript_to_json_line(t)) == t);
  testing::TempDir tmp;
  write_transcripts_jsonl(tmp / "t.jsonl", {t, t});
  CHECK(read_transcripts_jsonl(tmp / "t.jsonl").size() == 2);
}
