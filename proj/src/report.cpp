#include "comracer/report.hpp"

#include <algorithm>
#include <sstream>

namespace comracer {

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::base: return "base";
    case Mode::e4: return "e4";
    case Mode::e4e5: return "e4e5";
  }
  return "?";
}

std::optional<Mode> parse_mode(std::string_view s) {
  if (s == "base") return Mode::base;
  if (s == "e4") return Mode::e4;
  if (s == "e4e5") return Mode::e4e5;
  return std::nullopt;
}

AnalysisOpts with_mode(AnalysisOpts opts, Mode m) {
  opts.rr_filter = m != Mode::base;
  opts.deref_recursion = m == Mode::e4e5;
  return opts;
}

const SymbolTable& default_symbol_table() {
  static const SymbolTable table = {
      {"EnterCriticalSection", SymbolTag::lock_acquire},
      {"TryEnterCriticalSection", SymbolTag::lock_acquire},
      {"LeaveCriticalSection", SymbolTag::lock_release},
      {"AcquireSRWLockExclusive", SymbolTag::lock_acquire},
      {"AcquireSRWLockShared", SymbolTag::lock_acquire},
      {"ReleaseSRWLockExclusive", SymbolTag::lock_release},
      {"ReleaseSRWLockShared", SymbolTag::lock_release},
      {"WaitForSingleObject", SymbolTag::lock_acquire},
      {"ReleaseMutex", SymbolTag::lock_release},
      {"??3@YAXPEAX@Z", SymbolTag::free},    // operator delete
      {"??_V@YAXPEAX@Z", SymbolTag::free},   // operator delete[]
      {"free", SymbolTag::free},
      {"CoTaskMemFree", SymbolTag::free},
      {"SysFreeString", SymbolTag::free},
      {"??2@YAPEAX_K@Z", SymbolTag::alloc},  // operator new
      {"??_U@YAPEAX_K@Z", SymbolTag::alloc}, // operator new[]
      {"malloc", SymbolTag::alloc},
      {"CoTaskMemAlloc", SymbolTag::alloc},
      {"SysAllocString", SymbolTag::alloc},
  };
  return table;
}

AnalysisResult analyze_image(const BinaryImage& image, std::string name, Mode mode,
                             const AnalysisOpts& base_opts) {
  AnalysisOpts opts = with_mode(base_opts, mode);
  AnalysisResult r;
  r.image = std::move(name);
  r.mode = mode;
  r.resolution = recover_virtual_calls(image, RecoveryOptions{opts.track_stack_slots});
  for (const auto& entry : image.entries()) {
    r.summaries.push_back(analyze_method(image, entry, r.resolution, opts));
  }
  r.races = detect_races(r.summaries, opts);
  r.vulnerable = vulnerable_functions(r.races);
  return r;
}

namespace {

Json lockset_json(const Lockset& l) {
  Json out = Json::array();
  for (const auto& id : l) out.push_back(id.str());
  return out;
}

Json side_json(const FieldAccess& a) {
  return Json{{"method", a.method},
              {"site", hex(a.site)},
              {"kind", kind_name(a.kind)},
              {"lockset", lockset_json(a.lockset)}};
}

std::string lockset_text(const Lockset& l) {
  if (l.empty()) return "{}";
  std::string s;
  for (const auto& id : l) s += (s.empty() ? "{" : ", ") + id.str();
  return s + "}";
}

const Json& require(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw std::invalid_argument(where + ": missing \"" + key + "\"");
  }
  return j.at(key);
}

std::vector<std::string> names(const Json& j, const std::string& where) {
  if (!j.is_array()) throw std::invalid_argument(where + ": expected a list of names");
  std::vector<std::string> out;
  for (const auto& x : j) {
    if (!x.is_string()) throw std::invalid_argument(where + ": expected a list of names");
    out.push_back(x.get<std::string>());
  }
  return out;
}

Json ratio_json(const Ratio& r) { return Json(std::stod(fixed3(r))); }

}  // namespace

Json access_json(const FieldAccess& a) {
  Json j{{"path", a.path.str()},
         {"kind", kind_name(a.kind)},
         {"lockset", lockset_json(a.lockset)},
         {"site", hex(a.site)}};
  if (a.stored_alloc) j["stored_alloc"] = hex(*a.stored_alloc);
  if (a.null_guarded) j["null_guarded"] = true;
  return j;
}

Json summary_json(const MethodSummary& s) {
  Json accesses = Json::array();
  for (const auto& a : s.accesses) accesses.push_back(access_json(a));
  Json j{{"method", s.method}, {"accesses", accesses}};
  if (!s.diagnostics.empty()) j["diagnostics"] = s.diagnostics;
  return j;
}

Json report_json(const AnalysisResult& r, bool with_summaries) {
  Json races = Json::array();
  for (const auto& rep : r.races) {
    races.push_back(Json{{"path", rep.path.str()},
                         {"class", class_name(rep.cls)},
                         {"self", rep.self_race},
                         {"a", side_json(rep.a)},
                         {"b", side_json(rep.b)}});
  }
  Json j{{"image", r.image}, {"mode", mode_name(r.mode)}, {"races", races},
         {"vulnerable", Json(std::vector<std::string>(r.vulnerable.begin(), r.vulnerable.end()))}};
  std::vector<std::string> diags;
  for (const auto& s : r.summaries) {
    for (const auto& d : s.diagnostics) diags.push_back(s.method + ": " + d);
  }
  for (const auto& u : r.resolution.unresolved) {
    diags.push_back(u.function + ": virtual call at " + hex(u.call_site) + " unresolved: " + u.reason);
  }
  j["diagnostics"] = diags;
  if (with_summaries) {
    Json sums = Json::array();
    for (const auto& s : r.summaries) sums.push_back(summary_json(s));
    j["summaries"] = sums;
  }
  return j;
}

std::string report_markdown(const AnalysisResult& r) {
  std::ostringstream out;
  out << "# " << r.image << " (" << mode_name(r.mode) << ")\n\n";
  if (r.races.empty()) {
    out << "No races.\n";
  } else {
    out << "| path | class | self | a | b |\n|---|---|---|---|---|\n";
    for (const auto& rep : r.races) {
      auto side = [](const FieldAccess& a) {
        return a.method + " " + std::string(kind_name(a.kind)) + " @" + hex(a.site) + " " +
               lockset_text(a.lockset);
      };
      out << "| `" << rep.path.str() << "` | " << class_name(rep.cls) << " | "
          << (rep.self_race ? "yes" : "no") << " | " << side(rep.a) << " | " << side(rep.b) << " |\n";
    }
  }
  out << "\nVulnerable:";
  if (r.vulnerable.empty()) out << " none";
  for (const auto& v : r.vulnerable) out << " " << v;
  out << "\n";
  return out.str();
}

Json resolution_json(const Resolution& r) {
  Json resolved = Json::array();
  for (const auto& [site, rc] : r.resolved) {
    Json cands = Json::array();
    for (const auto& c : rc.candidates) {
      cands.push_back(Json{{"vtable", hex(c.vtable)}, {"target", hex(c.target)}, {"name", c.name}});
    }
    resolved.push_back(Json{{"call_site", hex(site)},
                            {"function", rc.function},
                            {"method_offset", rc.method_offset},
                            {"candidates", cands}});
  }
  Json unresolved = Json::array();
  for (const auto& u : r.unresolved) {
    unresolved.push_back(Json{{"call_site", hex(u.call_site)}, {"function", u.function}, {"reason", u.reason}});
  }
  return Json{{"resolved", resolved}, {"unresolved", unresolved}, {"virtual_calls", r.virtual_calls}};
}

Scenario scenario_from_json(const Json& j) {
  Scenario sc;
  const Json& threads = require(j, "threads", "scenario");
  if (!threads.is_array()) throw std::invalid_argument("scenario: \"threads\" must be a list");
  for (const auto& t : threads) {
    ThreadProgram prog;
    const Json* ops = &t;
    if (t.is_object()) {
      ops = &require(t, "ops", "thread");
      if (t.contains("inputs")) prog.inputs = names(t.at("inputs"), "thread inputs");
    }
    for (const auto& op : names(*ops, "thread ops")) prog.ops.push_back(parse_op(op));
    sc.threads.push_back(std::move(prog));
  }
  if (j.contains("init")) {
    for (const auto& [field, label] : j.at("init").items()) {
      if (label.is_null()) continue;
      if (!label.is_number_integer()) throw std::invalid_argument("scenario: init labels are integers or null");
      sc.init[field] = label.get<int>();
    }
  }
  return sc;
}

Json scenario_json(const Scenario& s) {
  Json threads = Json::array();
  for (const auto& t : s.threads) {
    Json ops = Json::array();
    for (const auto& op : t.ops) ops.push_back(to_string(op));
    Json jt{{"ops", ops}};
    if (!t.inputs.empty()) jt["inputs"] = t.inputs;
    threads.push_back(jt);
  }
  Json j{{"threads", threads}};
  if (!s.init.empty()) j["init"] = s.init;
  return j;
}

Json verdict_json(const Scenario& s, const Verdict& v) {
  auto witness = [&](const std::optional<Schedule>& w) {
    return w ? Json(render_schedule(s, *w)) : Json(nullptr);
  };
  return Json{{"uaf", v.uaf},
              {"df", v.df},
              {"uaf_witness", witness(v.uaf_witness)},
              {"df_witness", witness(v.df_witness)},
              {"explored", v.explored},
              {"schedules", v.schedules}};
}

std::vector<CaseLabel> corpus_from_json(const Json& j) {
  std::vector<CaseLabel> out;
  for (const auto& c : require(j, "cases", "corpus")) {
    CaseLabel label;
    label.case_id = require(c, "case_id", "corpus case").get<std::string>();
    label.entry_functions = names(require(c, "entry_functions", label.case_id), label.case_id);
    label.vulnerable = names(require(c, "vulnerable", label.case_id), label.case_id);
    if (label.entry_functions.empty()) {
      throw std::invalid_argument("case '" + label.case_id + "' has no entry functions");
    }
    for (const auto& v : label.vulnerable) {
      if (std::find(label.entry_functions.begin(), label.entry_functions.end(), v) ==
          label.entry_functions.end()) {
        throw std::invalid_argument("case '" + label.case_id + "': vulnerable '" + v +
                                    "' is not an entry function");
      }
    }
    out.push_back(std::move(label));
  }
  return out;
}

std::vector<PredictionRun> predictions_from_json(const Json& j) {
  std::vector<PredictionRun> out;
  for (const auto& r : require(j, "runs", "predictions")) {
    PredictionRun run;
    run.run_id = require(r, "run_id", "run").get<std::string>();
    if (r.contains("mode")) run.mode = r.at("mode").get<std::string>();
    for (const auto& c : require(r, "cases", run.run_id)) {
      Prediction p;
      p.case_id = require(c, "case_id", run.run_id).get<std::string>();
      p.predicted = names(require(c, "predicted", p.case_id), p.case_id);
      run.cases.push_back(std::move(p));
    }
    out.push_back(std::move(run));
  }
  return out;
}

Json predictions_json(const std::vector<PredictionRun>& runs) {
  Json jr = Json::array();
  for (const auto& r : runs) {
    Json cases = Json::array();
    for (const auto& c : r.cases) cases.push_back(Json{{"case_id", c.case_id}, {"predicted", c.predicted}});
    Json x{{"run_id", r.run_id}};
    if (!r.mode.empty()) x["mode"] = r.mode;
    x["cases"] = cases;
    jr.push_back(x);
  }
  return Json{{"runs", jr}};
}

std::vector<BenchGroup> run_bench(const std::vector<CaseLabel>& corpus,
                                  const std::vector<PredictionRun>& runs, std::size_t best_of) {
  if (best_of == 0) throw BenchError("--best-of must be at least 1");
  std::vector<std::string> order;
  for (const char* m : {"base", "e4", "e4e5"}) {
    if (std::any_of(runs.begin(), runs.end(), [&](const auto& r) { return r.mode == m; })) order.push_back(m);
  }
  for (const auto& r : runs) {
    std::string m = r.mode.empty() ? "all" : r.mode;
    if (std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);
  }
  std::vector<BenchGroup> out;
  for (const auto& m : order) {
    std::vector<std::vector<CaseScore>> scored;
    for (const auto& r : runs) {
      if ((r.mode.empty() ? "all" : r.mode) != m || scored.size() == best_of) continue;
      scored.push_back(score_run(corpus, r.cases));
    }
    out.push_back(BenchGroup{m, scored.size(), aggregate(best_of_k(scored))});
  }
  return out;
}

Json bench_json(const std::vector<BenchGroup>& groups) {
  Json jg = Json::array();
  for (const auto& g : groups) {
    Json cases = Json::array();
    for (const auto& c : g.metrics.per_case) {
      cases.push_back(Json{{"case_id", c.case_id}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn},
                           {"precision", ratio_json(c.precision)},
                           {"recall", ratio_json(c.recall)},
                           {"f1", ratio_json(c.f1)}});
    }
    const auto& m = g.metrics;
    jg.push_back(Json{{"mode", g.mode},
                      {"runs", g.runs_used},
                      {"per_case", cases},
                      {"macro_f1", ratio_json(m.macro_f1)},
                      {"micro_precision", ratio_json(m.micro_precision)},
                      {"micro_recall", ratio_json(m.micro_recall)},
                      {"micro_f1", ratio_json(m.micro_f1)},
                      {"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}});
  }
  return Json{{"groups", jg}};
}

std::string bench_markdown(const std::vector<CaseLabel>& corpus, const std::vector<BenchGroup>& groups) {
  auto title = [](const std::string& m) -> std::string {
    if (m == "base") return "Base";
    if (m == "e4") return "+E4";
    if (m == "e4e5") return "+E4/E5";
    return m;
  };
  std::ostringstream out;
  out << "| case |";
  for (const auto& g : groups) out << " " << title(g.mode) << " P | R | F1 |";
  out << "\n|---|";
  for (std::size_t i = 0; i < groups.size(); ++i) out << "---|---|---|";
  out << "\n";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    out << "| " << corpus[i].case_id << " |";
    for (const auto& g : groups) {
      const auto& c = g.metrics.per_case[i];
      out << " " << fixed3(c.precision) << " | " << fixed3(c.recall) << " | " << fixed3(c.f1) << " |";
    }
    out << "\n";
  }
  out << "| macro F1 |";
  for (const auto& g : groups) out << " | | " << fixed3(g.metrics.macro_f1) << " |";
  out << "\n| micro |";
  for (const auto& g : groups) {
    out << " " << fixed3(g.metrics.micro_precision) << " | " << fixed3(g.metrics.micro_recall) << " | "
        << fixed3(g.metrics.micro_f1) << " |";
  }
  out << "\n";
  return out.str();
}

}  // namespace comracer
