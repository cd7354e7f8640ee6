#include "editprobe/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "editprobe/error.hpp"

namespace editprobe {

namespace {

constexpr std::array<Measure, 3> kMeasures = {Measure::Frequency, Measure::Connection,
                                              Measure::Cooccurrence};

std::string fmt_rho(std::optional<double> v) { return v ? fmt::format("{:.3f}", *v) : "--"; }

std::string fmt_bound(double v) {
  return std::isfinite(v) ? fmt::format("{}", v) : (v > 0 ? "inf" : "-inf");
}

std::optional<double> icl_acc_over(const std::vector<std::string>& ids,
                                   const std::map<std::string, const MemoryProbe*>& probes) {
  std::size_t n = 0, hit = 0;
  for (const auto& id : ids) {
    const auto it = probes.find(id);
    if (it == probes.end() || !it->second->icl_correct) continue;
    ++n;
    hit += *it->second->icl_correct;
  }
  if (n == 0) return std::nullopt;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace

bool RelationCorrelation::negative_outlier() const {
  return std::any_of(rho.begin(), rho.end(), [](const auto& kv) { return kv.second && *kv.second < 0; });
}

std::vector<RelationCorrelation> spearman_by_relation(const std::vector<FactEdit>& facts,
                                                      const std::vector<PopularityScores>& scores,
                                                      const std::vector<MemoryProbe>& probes) {
  std::map<std::string, const PopularityScores*> by_score;
  for (const auto& s : scores) by_score[s.fact_id] = &s;
  std::map<std::string, const MemoryProbe*> by_probe;
  for (const auto& p : probes) by_probe[p.fact_id] = &p;

  std::map<std::string, std::vector<const FactEdit*>> by_relation;
  for (const auto& f : facts) by_relation[f.relation].push_back(&f);

  std::vector<RelationCorrelation> out;
  for (const auto& [relation, members] : by_relation) {
    RelationCorrelation rc;
    rc.relation = relation;
    for (auto m : kMeasures) {
      std::vector<double> xs, ys;
      for (const auto* f : members) {
        const auto s = by_score.find(f->id);
        const auto p = by_probe.find(f->id);
        if (s == by_score.end() || p == by_probe.end() || !p->second->icl_correct) continue;
        const auto v = measure_value(*s->second, m);
        if (!v) continue;
        xs.push_back(*p->second->icl_correct ? 1.0 : 0.0);
        ys.push_back(static_cast<double>(*v));
      }
      rc.n = std::max(rc.n, xs.size());
      try {
        rc.rho[m] = spearman(xs, ys);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Undefined && e.kind() != ErrorKind::Precondition) throw;
        rc.rho[m] = std::nullopt;
      }
    }
    out.push_back(std::move(rc));
  }
  return out;
}

std::vector<BucketRow> bucket_series(const std::vector<PopularityScores>& scores,
                                     const std::vector<MemoryProbe>& probes,
                                     const std::vector<EvalRecord>& records, int n_buckets,
                                     BucketStrategy strategy) {
  std::map<std::string, const MemoryProbe*> by_probe;
  for (const auto& p : probes) by_probe[p.fact_id] = &p;
  std::map<std::string, std::vector<const EvalRecord*>> by_fact;
  for (const auto& r : records) by_fact[r.fact_id].push_back(&r);

  std::vector<BucketRow> out;
  for (auto m : kMeasures) {
    std::vector<Scored> items;
    for (const auto& s : scores) {
      if (const auto v = measure_value(s, m)) items.push_back({s.fact_id, static_cast<double>(*v)});
    }
    if (items.empty()) continue;
    for (auto& b : bucketize(std::move(items), n_buckets, strategy)) {
      BucketRow row;
      row.measure = m;
      row.icl_acc = icl_acc_over(b.members, by_probe);
      std::vector<EvalRecord> subset;
      for (const auto& id : b.members) {
        const auto it = by_fact.find(id);
        if (it == by_fact.end()) continue;
        for (const auto* r : it->second) subset.push_back(*r);
      }
      row.cells = aggregate(subset).cells;
      row.bucket = std::move(b);
      out.push_back(std::move(row));
    }
  }
  return out;
}

std::string bucket_series_csv(const std::vector<BucketRow>& rows, const std::vector<Cell>& cells) {
  std::string out = "measure,bucket,lower,upper,n,icl_acc";
  for (const auto& c : cells) out += "," + to_string(c) + " acc";
  out += "\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{}", to_string(r.measure), r.bucket.index,
                       fmt_bound(r.bucket.lower), fmt_bound(r.bucket.upper),
                       r.bucket.members.size(), format_percent(r.icl_acc));
    for (const auto& c : cells) {
      const auto it = r.cells.find(c);
      out += "," + format_percent(it == r.cells.end() ? std::nullopt : it->second.acc());
    }
    out += "\n";
  }
  return out;
}

std::vector<Cell> cells_in(const std::vector<EvalRecord>& records) {
  std::set<Cell> present;
  for (const auto& r : records) present.insert(r.cell());
  std::vector<Cell> out;
  for (const auto& c : standard_grid()) {
    if (present.erase(c)) out.push_back(c);
  }
  out.insert(out.end(), present.begin(), present.end());
  return out;
}

std::string render_report(const ReportInputs& in) {
  std::string md = fmt::format("# Robustness report: {}\n\n", in.run_id);
  md += fmt::format("Facts: {}. Evaluation records: {}.\n\n", in.facts.size(), in.records.size());

  const auto cells = cells_in(in.records);
  const auto grid = aggregate(in.records);
  md += "## Attack grid\n\n" + grid_to_markdown(grid, cells) + "\n";

  md += "## Mitigation\n\n";
  if (in.mitigated.empty()) {
    md += "No mitigated run found.\n\n";
  } else {
    for (const auto& [mode, records] : in.mitigated) {
      md += fmt::format("### {}\n\n", mode);
      md += comparison_to_markdown(grid, aggregate(records), cells) + "\n";
    }
  }

  md += "## Knowledge popularity\n\n";
  if (!in.scores) {
    md += "No scores.csv found; run `popularity` first.\n\n";
  } else {
    md += fmt::format("Scored facts: {}.\n\n", in.scores->size());
    for (auto m : kMeasures) {
      std::vector<double> values;
      for (const auto& s : *in.scores) {
        if (const auto v = measure_value(s, m)) values.push_back(static_cast<double>(*v));
      }
      md += fmt::format("### {} histogram\n\n| bin | count |\n|---|---|\n", to_string(m));
      for (const auto& bin : histogram(values)) {
        const auto label = bin.exponent ? fmt::format("[1e{}, 1e{})", *bin.exponent, *bin.exponent + 1)
                                        : std::string("0");
        md += fmt::format("| {} | {} |\n", label, bin.count);
      }
      md += "\n";
    }
    const std::vector<MemoryProbe> no_probes;
    const auto rows = bucket_series(*in.scores, in.probes ? *in.probes : no_probes, in.records,
                                    in.n_buckets, in.strategy);
    md += fmt::format("### Accuracy by popularity bucket ({}, {} buckets)\n\n", to_string(in.strategy),
                      in.n_buckets);
    md += "| measure | bucket | range | n | ICL acc |";
    for (const auto& c : cells) md += " " + to_string(c) + " |";
    md += "\n|---|---|---|---|---|";
    for (std::size_t i = 0; i < cells.size(); ++i) md += "---|";
    md += "\n";
    for (const auto& r : rows) {
      md += fmt::format("| {} | {} | [{}, {}] | {} | {} |", to_string(r.measure), r.bucket.index,
                        fmt_bound(r.bucket.lower), fmt_bound(r.bucket.upper),
                        r.bucket.members.size(), format_percent(r.icl_acc));
      for (const auto& c : cells) {
        const auto it = r.cells.find(c);
        md += " " + format_percent(it == r.cells.end() ? std::nullopt : it->second.acc()) + " |";
      }
      md += "\n";
    }
    md += "\n";
  }

  md += "## Parametric memory\n\n";
  if (!in.probes) {
    md += "No probes.csv found; run `probe-memory` first.\n\n";
  } else {
    std::size_t scored = 0, original_not_easier = 0, icl_n = 0, icl_hit = 0;
    for (const auto& p : *in.probes) {
      if (p.log_ppl_diff) {
        ++scored;
        original_not_easier += *p.log_ppl_diff >= 0;
      }
      if (p.icl_correct) {
        ++icl_n;
        icl_hit += *p.icl_correct;
      }
    }
    auto pct = [](std::size_t a, std::size_t b) {
      return format_percent(b ? std::optional<double>(100.0 * static_cast<double>(a) / static_cast<double>(b))
                              : std::nullopt);
    };
    md += fmt::format("Facts with ppl(o) >= ppl(o'): {} of {} ({}%).\n\n", original_not_easier,
                      scored, pct(original_not_easier, scored));
    md += fmt::format("ICL accuracy on o: {} of {} ({}%).\n\n", icl_hit, icl_n, pct(icl_hit, icl_n));
    if (in.scores) {
      md += "### Spearman by relation (ICL correctness vs popularity)\n\n";
      md += "| relation | n | frequency | connection | cooccurrence | flag |\n|---|---|---|---|---|---|\n";
      for (const auto& rc : spearman_by_relation(in.facts, *in.scores, *in.probes)) {
        md += fmt::format("| {} | {} | {} | {} | {} | {} |\n", rc.relation, rc.n,
                          fmt_rho(rc.rho.at(Measure::Frequency)),
                          fmt_rho(rc.rho.at(Measure::Connection)),
                          fmt_rho(rc.rho.at(Measure::Cooccurrence)),
                          rc.negative_outlier() ? "negative" : "");
      }
      md += "\n";
    }
  }

  md += "## Dialogue probe\n\n";
  if (!in.transcripts) {
    md += "No transcripts.jsonl found; run `probe-dialogue` first.\n\n";
  } else {
    std::map<Verdict, std::size_t> verdicts;
    std::size_t errors = 0;
    for (const auto& t : *in.transcripts) {
      ++verdicts[t.verdict];
      errors += !t.error.empty();
    }
    md += fmt::format("Transcripts: {} ({} ended by an endpoint error).\n\n", in.transcripts->size(),
                      errors);
    md += "| verdict | count |\n|---|---|\n";
    for (auto v : {Verdict::EditFailed, Verdict::ConfusionReported, Verdict::NoConfusionReported,
                   Verdict::Unparsed}) {
      md += fmt::format("| {} | {} |\n", to_string(v), verdicts[v]);
    }
    md += "\n";
    if (in.sheet_csv) {
      const auto s = summarize_annotations(*in.sheet_csv);
      md += "| criterion | % |\n|---|---|\n";
      for (const auto& [name, v] : s.auto_percent) {
        md += fmt::format("| {} | {} |\n", name, format_percent(v));
      }
      for (auto c : kAnnotationCriteria) {
        md += fmt::format("| {} | {} |\n", c, format_percent(s.human_percent.at(std::string(c))));
      }
      md += fmt::format("| any confusion | {} |\n", format_percent(s.any_confusion));
      md += fmt::format("| any hallucination | {} |\n\n", format_percent(s.any_hallucination));
    }
  }
  return md;
}

}  // namespace editprobe
