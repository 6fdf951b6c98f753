// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

#include "../naive_oracle.hpp"
#include "../support.hpp"

using namespace comracer;

namespace {

struct Check {
  std::vector<std::string> failures;
  void expect(bool ok, std::string what) {
    if (!ok) failures.push_back(std::move(what));
  }
};

const auto R = AccessKind::read;
const auto W = AccessKind::write;
const auto F = AccessKind::free;

const MethodSummary& summary_of(const AnalysisResult& r, std::string_view method) {
  for (const auto& s : r.summaries) {
    if (s.method == method) return s;
  }
  throw LookupError("no summary for " + std::string(method));
}

std::multiset<ConflictClass> classes(const std::vector<RaceReport>& rs) {
  std::multiset<ConflictClass> out;
  for (const auto& r : rs) out.insert(r.cls);
  return out;
}

/// (class, method a, site a, method b, site b) with the pair in (method, site) order.
using Pair = std::tuple<std::string, std::string, Address, std::string, Address>;

std::set<Pair> pairs(const std::vector<RaceReport>& rs) {
  std::set<Pair> out;
  for (const auto& r : rs) {
    auto a = std::pair{r.a.method, r.a.site};
    auto b = std::pair{r.b.method, r.b.site};
    if (b < a) std::swap(a, b);
    out.emplace(std::string(class_name(r.cls)), a.first, a.second, b.first, b.second);
  }
  return out;
}

// ---------------------------------------------------------------------------

void ticket_end_to_end(Check& c) {
  auto result = test::run_fixture("set_print_ticket.asm", Mode::e4e5);
  c.expect(classes(result.races) == std::multiset<ConflictClass>{ConflictClass::read_free, ConflictClass::write_free,
                                                                 ConflictClass::free_free, ConflictClass::read_write},
           "self-race classes are not exactly RF, WF, FF, RW");
  for (const auto& r : result.races) {
    c.expect(r.self_race && r.path == path_of({0x50}), "report off this+0x50 or not a self-race");
  }

  const FieldPath field = path_of({0x50});
  ThreadProgram p = summary_to_program(summary_of(result, "SetPrintTicket"), field);
  Scenario sc;
  sc.threads = {p, p};
  sc.init[field.str()] = 1;
  Verdict v = enumerate(sc);
  c.expect(v.uaf && v.df, "oracle does not confirm both faults");
  if (!v.uaf_witness || !v.df_witness) return;

  // Fig. 2(a): T1 reallocates and publishes, T2 loads and frees that buffer, T1 uses it.
  const Schedule uaf{0, 0, 0, 0, 0, 1, 1, 1, 0};
  c.expect(*v.uaf_witness == uaf, "UAF witness " + render_schedule(sc, *v.uaf_witness));
  // Fig. 2(b): both threads pass the null check before either frees.
  const Schedule df{0, 1, 0, 1, 0, 1};
  c.expect(*v.df_witness == df, "DF witness " + render_schedule(sc, *v.df_witness));
  c.expect(replay(sc, *v.uaf_witness).fault == Fault::uaf, "UAF witness does not replay");
  c.expect(replay(sc, *v.df_witness).fault == Fault::df, "DF witness does not replay");
}

void setter_getter(Check& c) {
  auto result = test::run_fixture("scan_payload.asm", Mode::e4e5);
  const FieldPath field = path_of({0xc0});
  std::multiset<ConflictClass> cross;
  for (const auto& r : result.races) {
    if (!r.self_race && r.path == field) cross.insert(r.cls);
  }
  c.expect(cross == std::multiset<ConflictClass>{ConflictClass::read_free, ConflictClass::read_write},
           "cross-method reports on this+0xc0 are not exactly RF and RW");
  c.expect(result.vulnerable == std::set<std::string>{"get_ScanResponsePayload", "put_ScanResponsePayload"},
           "vulnerable set is not {setter, getter}");

  ThreadProgram setter = summary_to_program(summary_of(result, "put_ScanResponsePayload"), field);
  ThreadProgram getter = summary_to_program(summary_of(result, "get_ScanResponsePayload"), field);
  Scenario sc;
  sc.threads = {setter, setter, getter};
  sc.init[field.str()] = 1;
  Verdict v = enumerate(sc);
  c.expect(v.df, "two setters do not double free");
  c.expect(v.uaf, "getter never uses a freed pointer");
}

void vtable_recovery(Check& c) {
  BinaryImage image = test::load_fixture("vtable_spill.asm");
  Resolution r = recover_virtual_calls(image);
  auto it = r.resolved.find(0x132b);
  c.expect(it != r.resolved.end(), "virtual call at 0x132b unresolved");
  if (it != r.resolved.end()) {
    c.expect(it->second.candidates == std::set<CallTarget>{{0x5000, 0x1200, "CWidget_Refresh"}},
             "0x132b does not resolve to exactly CWidget_Refresh");
  }
  RecoveryOptions no_spills;
  no_spills.track_stack_slots = false;
  Resolution without = recover_virtual_calls(image, no_spills);
  c.expect(without.resolved.empty(), "resolution survives without spill tracking");
  c.expect(without.unresolved.size() == without.virtual_calls, "call left neither resolved nor diagnosed");
}

void one_branch_merge(Check& c) {
  auto one = test::run_fixture("e1_one_branch.asm", Mode::e4e5);
  c.expect(pairs(one.races) == std::set<Pair>{{"read/write", "Query", 0x3114, "Update", 0x300c}},
           "one-branch fixture report set differs");
  for (const auto& r : one.races) {
    const auto& read = r.a.kind == R ? r.a : r.b;
    c.expect(read.lockset.empty(), "post-join read carries a lock");
  }
  auto both = test::run_fixture("e1_both_branches.asm", Mode::e4e5);
  c.expect(both.races.empty(), "both-branch fixture reports something");
}

void disjoint_locksets(Check& c) {
  auto distinct = test::run_fixture("e2_distinct_locks.asm", Mode::e4e5);
  std::set<Pair> got = pairs(distinct.races);
  c.expect(got.size() == 1, "distinct-lock fixture does not give exactly one report");
  if (got.size() == 1) {
    const auto& [cls, ma, sa, mb, sb] = *got.begin();
    c.expect(cls == "read/write" && ma == "Reader" && mb == "Writer", "distinct-lock report is not Reader/Writer RW");
  }
  auto same = test::run_fixture("e2_same_lock.asm", Mode::e4e5);
  c.expect(same.races.empty(), "same-lock fixture reports something");
}

std::vector<MethodSummary> random_summaries(std::mt19937& rng) {
  const char* names[] = {"A", "B", "C"};
  const std::int64_t offs[] = {0x10, 0x18};
  const AccessKind kinds[] = {R, W, F};
  std::vector<MethodSummary> out;
  const unsigned n = 1 + rng() % 3;
  for (unsigned m = 0; m < n; ++m) {
    MethodSummary s;
    s.method = names[m];
    const unsigned k = rng() % 6;
    for (unsigned i = 0; i < k; ++i) {
      FieldAccess a;
      a.method = s.method;
      a.path = path_of({offs[rng() % 2]});
      a.kind = kinds[rng() % 3];
      a.site = 0x100 * (m + 1) + 4 * i;
      if (rng() % 3 == 0) a.lockset.insert(LockId{path_of({0x30}), false});
      if (rng() % 4 == 0) a.lockset.insert(LockId{path_of({0x38}), false});
      s.accesses.push_back(a);
    }
    out.push_back(s);
  }
  return out;
}

void rr_filter(Check& c) {
  std::mt19937 rng(1000);
  AnalysisOpts base, e4;
  e4.rr_filter = true;
  int with_rr = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    auto ss = random_summaries(rng);
    auto all = detect_races(ss, base);
    auto kept = filter_rr(all);
    auto e4_reports = detect_races(ss, e4);
    bool subset = std::all_of(e4_reports.begin(), e4_reports.end(),
                              [&](const RaceReport& r) { return std::binary_search(all.begin(), all.end(), r); });
    if (!subset) c.expect(false, "reports(+E4) not within reports(Base) at iteration " + std::to_string(iter));
    bool removed_only_rr = true;
    for (const auto& r : all) {
      bool removed = !std::binary_search(kept.begin(), kept.end(), r);
      if (removed != (r.a.kind == R && r.b.kind == R)) removed_only_rr = false;
    }
    if (!removed_only_rr) c.expect(false, "filter_rr removed a non R/R pair at iteration " + std::to_string(iter));
    if (kept.size() < all.size()) ++with_rr;
  }
  c.expect(with_rr > 100, "too few random sets exercised the filter");

  auto cross = [](const std::vector<RaceReport>& rs) {
    return std::count_if(rs.begin(), rs.end(), [](const RaceReport& r) { return !r.self_race; });
  };
  auto b = test::run_fixture("e4_three_pairs.asm", Mode::base);
  auto f = test::run_fixture("e4_three_pairs.asm", Mode::e4);
  c.expect(cross(b.races) == 3, "hand corpus base pairs = " + std::to_string(cross(b.races)));
  c.expect(cross(f.races) == 2, "hand corpus +E4 pairs = " + std::to_string(cross(f.races)));
}

void subobject_paths(Check& c) {
  const FieldPath nested = path_of({0x20, 0x68});
  auto on = test::run_fixture("e5_subobject.asm", Mode::e4e5);
  bool found = false;
  for (const auto& r : on.races) {
    if (r.path == nested && !r.self_race) found = true;
  }
  c.expect(found, "+E4/E5 misses the cross-method conflict on the nested path");
  Json report = report_json(on);
  bool rendered = false;
  for (const auto& r : report["races"]) rendered = rendered || r["path"] == "[this+0x20]+0x68";
  c.expect(rendered, "nested path not rendered as [this+0x20]+0x68");

  for (Mode m : {Mode::base, Mode::e4}) {
    auto off = test::run_fixture("e5_subobject.asm", m);
    for (const auto& r : off.races) {
      c.expect(r.path != nested, std::string(mode_name(m)) + " reports on the nested path");
    }
  }
}

void produce_limitation(Check& c) {
  for (Mode m : {Mode::base, Mode::e4, Mode::e4e5}) {
    auto result = test::run_fixture("produce_wrapper.asm", m);
    c.expect(summary_of(result, "Produce").accesses.empty(),
             std::string(mode_name(m)) + ": Produce was attributed the callee's write");
    for (const auto& r : result.races) {
      c.expect(r.a.method != "Produce" && r.b.method != "Produce",
               std::string(mode_name(m)) + ": a report involves Produce");
    }
  }
}

/// Lock-free accesses on one field for one method, with uses of loaded and stored values.
MethodSummary random_field_method(std::mt19937& rng, const std::string& name, Address base) {
  MethodSummary s;
  s.method = name;
  const unsigned n = 1 + rng() % 3;
  Address site = base;
  for (unsigned i = 0; i < n; ++i) {
    FieldAccess a;
    a.method = name;
    a.path = path_of({0x50});
    a.kind = static_cast<AccessKind>(rng() % 3);
    a.site = site;
    if (a.kind == W && rng() % 2) a.stored_alloc = site - 2;
    if (a.kind == F) a.null_guarded = rng() % 2 == 0;
    s.accesses.push_back(a);
    if (a.kind == R && rng() % 2) s.uses.push_back(ValueUse{site + 1, a.path});
    if (a.stored_alloc && rng() % 2) s.uses.push_back(ValueUse{site + 1, *a.stored_alloc});
    site += 4;
  }
  return s;
}

void oracle_soundness(Check& c) {
  std::mt19937 rng(9);
  const FieldPath field = path_of({0x50});
  AnalysisOpts opts;
  opts.rr_filter = true;
  opts.ww_self = false;
  int programs = 0, confirmed = 0;
  while (programs < 500) {
    MethodSummary a = random_field_method(rng, "A", 0x100);
    MethodSummary b = rng() % 3 == 0 ? a : random_field_method(rng, "B", 0x200);
    Scenario sc;
    sc.threads = {summary_to_program(a, field), summary_to_program(b, field)};
    sc.init[field.str()] = 1;
    if (sc.threads[0].ops.size() + sc.threads[1].ops.size() > 8) continue;
    ++programs;

    Verdict v = enumerate(sc);
    test::NaiveResult n = test::naive_enumerate(sc);
    if (v.uaf != n.uaf || v.df != n.df || v.schedules != n.executions) {
      c.expect(false, "memoized and naive enumerators disagree on program " + std::to_string(programs));
    }
    if (!v.uaf && !v.df) continue;
    ++confirmed;
    std::vector<MethodSummary> involved{a};
    if (b.method != a.method) involved.push_back(b);
    auto reports = detect_races(involved, opts);
    bool on_field = std::any_of(reports.begin(), reports.end(), [&](const RaceReport& r) { return r.path == field; });
    if (!on_field) c.expect(false, "confirmed fault with no report, program " + std::to_string(programs));
  }
  c.expect(confirmed >= 50, "only " + std::to_string(confirmed) + " programs were faulty");
}

void metrics_protocol(Check& c) {
  std::vector<CaseLabel> corpus{{"A", {"f1", "f2", "f3", "f4"}, {"f1", "f2"}},
                                {"B", {"g1", "g2"}, {"g1"}},
                                {"C", {"h1", "h2", "h3"}, {"h1", "h2"}}};
  auto good = score_run(corpus, {{"A", {"f1", "f3"}}, {"B", {"g1"}}, {"C", {"h3"}}});
  c.expect(good[0].precision == Ratio(1, 2) && good[0].recall == Ratio(1, 2) && good[0].f1 == Ratio(1, 2),
           "case A is not (0.5, 0.5, 0.5)");
  c.expect(good[1].precision == Ratio(1) && good[1].recall == Ratio(1) && good[1].f1 == Ratio(1), "case B is not (1, 1, 1)");
  c.expect(good[2].precision == Ratio(0) && good[2].recall == Ratio(0) && good[2].f1 == Ratio(0), "case C is not (0, 0, 0)");
  c.expect(good[2].tp == 0 && good[2].fp == 1 && good[2].fn == 2, "case C counts differ");
  Metrics m = aggregate(good);
  c.expect(m.macro_f1 == Ratio(1, 2) && fixed3(m.macro_f1) == "0.500", "macro F1 is not 0.500");
  c.expect(m.micro_f1 == Ratio(4, 9) && fixed3(m.micro_f1) == "0.444", "micro F1 is not 4/9");

  auto weak = score_run(corpus, {{"A", {"f1", "f2"}}, {"B", {"g2"}}, {"C", {"h1"}}});
  auto mid = score_run(corpus, {{"A", {}}, {"B", {"g1", "g2"}}, {"C", {"h1", "h2"}}});
  auto best = best_of_k({good, weak, mid});
  c.expect(best[0].f1 == Ratio(1) && best[0].tp == 2, "case A does not take run 2's maximum");
  c.expect(best[1].f1 == Ratio(1) && best[1].fp == 0, "case B does not keep run 1 on the tie");
  c.expect(best[2].f1 == Ratio(1), "case C does not take run 3's maximum");
  c.expect(aggregate(best).macro_f1 == Ratio(1), "best-of-3 macro is not 1");
}

}  // namespace

int main() {
  using Clock = std::chrono::steady_clock;
  struct Criterion {
    int id;
    const char* what;
    void (*run)(Check&);
    double limit_s;
  };
  const Criterion criteria[] = {
      {1, "ticket fixture: four self-race classes, oracle UAF and DF with the two interleavings", ticket_end_to_end, 1},
      {2, "setter/getter on this+0xc0: cross RF and RW, oracle DF and UAF", setter_getter, 5},
      {3, "vtable recovery through the rdi store and a stack spill, lost without spill tracking", vtable_recovery, 0},
      {4, "one-branch lock gives an unguarded read, both-branch gives nothing", one_branch_merge, 0},
      {5, "distinct locks race, the same lock does not", disjoint_locksets, 0},
      {6, "read/read filter over 1000 random sets, 3 to 2 on the hand corpus", rr_filter, 0},
      {7, "nested path [this+0x20]+0x68 only with sub-object recursion", subobject_paths, 0},
      {8, "branch-free interface adjustment stays unattributed", produce_limitation, 0},
      {9, "every oracle-confirmed fault is reported, memoized equals naive (500 programs)", oracle_soundness, 0},
      {10, "P/R/F1 conventions, macro/micro, best-of-3 selection", metrics_protocol, 0},
  };

  const auto start = Clock::now();
  int failed = 0;
  for (const auto& cr : criteria) {
    Check c;
    const auto t0 = Clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (cr.limit_s > 0 && secs >= cr.limit_s) {
      c.expect(false, "took " + std::to_string(secs) + " s, limit " + std::to_string(cr.limit_s) + " s");
    }
    const bool ok = c.failures.empty();
    failed += ok ? 0 : 1;
    std::printf("%s criterion %d: %s (%.3f s)\n", ok ? "PASS" : "FAIL", cr.id, cr.what, secs);
    for (const auto& f : c.failures) std::printf("    %s\n", f.c_str());
  }
  const double total = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("%d of %zu criteria passed in %.3f s\n", static_cast<int>(std::size(criteria)) - failed,
              std::size(criteria), total);
  return failed == 0 ? 0 : 1;
}
