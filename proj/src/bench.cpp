#include "comracer/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace comracer {

namespace {

Ratio safe_div(std::int64_t num, std::int64_t den) { return den == 0 ? Ratio(0) : Ratio(num, den); }

void fill_ratios(std::int64_t tp, std::int64_t fp, std::int64_t fn, Ratio& p, Ratio& r, Ratio& f1) {
  if (tp == 0 && fp == 0 && fn == 0) {
    p = r = f1 = Ratio(1);
    return;
  }
  if (tp == 0) {
    p = r = f1 = Ratio(0);
    return;
  }
  p = safe_div(tp, tp + fp);
  r = safe_div(tp, tp + fn);
  f1 = Ratio(2) * p * r / (p + r);
}

}  // namespace

CaseScore score_case(const CaseLabel& label, const Prediction& prediction) {
  if (label.case_id != prediction.case_id) {
    throw BenchError("prediction for '" + prediction.case_id + "' scored against case '" +
                     label.case_id + "'");
  }
  std::set<std::string> entries(label.entry_functions.begin(), label.entry_functions.end());
  std::set<std::string> truth(label.vulnerable.begin(), label.vulnerable.end());
  std::set<std::string> pred(prediction.predicted.begin(), prediction.predicted.end());
  for (const auto& name : pred) {
    if (!entries.count(name)) {
      throw BenchError("case '" + label.case_id + "': '" + name + "' is not an entry function");
    }
  }
  CaseScore s;
  s.case_id = label.case_id;
  for (const auto& name : pred) (truth.count(name) ? s.tp : s.fp) += 1;
  for (const auto& name : truth) s.fn += pred.count(name) ? 0 : 1;
  fill_ratios(s.tp, s.fp, s.fn, s.precision, s.recall, s.f1);
  return s;
}

Metrics aggregate(const std::vector<CaseScore>& cases) {
  if (cases.empty()) throw BenchError("aggregate needs at least one case");
  Metrics m;
  m.per_case = cases;
  Ratio sum(0);
  for (const auto& c : cases) {
    sum += c.f1;
    m.tp += c.tp;
    m.fp += c.fp;
    m.fn += c.fn;
  }
  m.macro_f1 = sum / static_cast<std::int64_t>(cases.size());
  fill_ratios(m.tp, m.fp, m.fn, m.micro_precision, m.micro_recall, m.micro_f1);
  return m;
}

std::vector<CaseScore> best_of_k(const std::vector<std::vector<CaseScore>>& runs) {
  if (runs.empty()) throw BenchError("best_of_k needs at least one run");
  std::vector<CaseScore> best = runs[0];
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].size() != best.size()) throw BenchError("runs cover different case sets");
    for (std::size_t i = 0; i < best.size(); ++i) {
      if (runs[r][i].case_id != best[i].case_id) throw BenchError("runs cover different case sets");
      if (runs[r][i].f1 > best[i].f1) best[i] = runs[r][i];
    }
  }
  return best;
}

std::vector<CaseScore> score_run(const std::vector<CaseLabel>& corpus,
                                 const std::vector<Prediction>& run) {
  std::set<std::string> known;
  for (const auto& label : corpus) known.insert(label.case_id);
  for (const auto& p : run) {
    if (!known.count(p.case_id)) throw BenchError("prediction for unknown case '" + p.case_id + "'");
  }
  std::vector<CaseScore> out;
  for (const auto& label : corpus) {
    auto it = std::find_if(run.begin(), run.end(), [&](const auto& p) { return p.case_id == label.case_id; });
    out.push_back(score_case(label, it == run.end() ? Prediction{label.case_id, {}} : *it));
  }
  return out;
}

double to_double(const Ratio& r) { return boost::rational_cast<double>(r); }

std::string fixed3(const Ratio& r) {
  // round half up on the exact value
  Ratio scaled = r * 1000 + Ratio(1, 2);
  std::int64_t milli = scaled.numerator() / scaled.denominator();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld.%03lld", static_cast<long long>(milli / 1000),
                static_cast<long long>(milli % 1000));
  return buf;
}

}  // namespace comracer
