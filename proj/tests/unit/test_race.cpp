#include <doctest.h>

#include <algorithm>
#include <random>

#include "../support.hpp"

using namespace comracer;

namespace {

FieldAccess access(std::string method, std::initializer_list<std::int64_t> path, AccessKind kind,
                   Address site, Lockset locks = {}) {
  FieldAccess a;
  a.method = std::move(method);
  a.path = path_of(path);
  a.kind = kind;
  a.site = site;
  a.lockset = std::move(locks);
  return a;
}

MethodSummary summary(std::string method, std::vector<FieldAccess> accesses) {
  MethodSummary s;
  s.method = std::move(method);
  s.accesses = std::move(accesses);
  return s;
}

AnalysisOpts opts_for(bool rr_filter, bool ww_self) {
  AnalysisOpts o;
  o.rr_filter = rr_filter;
  o.ww_self = ww_self;
  return o;
}

using Classes = std::multiset<ConflictClass>;

Classes classes_of(const std::vector<RaceReport>& reports) {
  Classes out;
  for (const auto& r : reports) out.insert(r.cls);
  return out;
}

const auto R = AccessKind::read;
const auto W = AccessKind::write;
const auto F = AccessKind::free;

}  // namespace

TEST_CASE("classify") {
  CHECK(classify(R, F) == ConflictClass::read_free);
  CHECK(classify(F, R) == ConflictClass::read_free);
  CHECK(classify(W, F) == ConflictClass::write_free);
  CHECK(classify(F, F) == ConflictClass::free_free);
  CHECK(classify(W, R) == ConflictClass::read_write);
  CHECK(classify(R, R) == ConflictClass::read_read);
  CHECK(!classify(W, W));
  CHECK(class_name(ConflictClass::read_free) == "read/free");
}

TEST_CASE("the ticket summary self-races four ways") {
  auto s = summary("SetPrintTicket", {access("SetPrintTicket", {0x50}, R, 0x1009),
                                      access("SetPrintTicket", {0x50}, F, 0x1012),
                                      access("SetPrintTicket", {0x50}, W, 0x101f)});
  auto reports = detect_races({s}, opts_for(true, true));
  CHECK(classes_of(reports) == Classes{ConflictClass::read_free, ConflictClass::write_free,
                                       ConflictClass::free_free, ConflictClass::read_write});
  for (const auto& r : reports) {
    CHECK(r.self_race);
    CHECK(r.path == path_of({0x50}));
  }
  CHECK(vulnerable_functions(reports) == std::set<std::string>{"SetPrintTicket"});
}

TEST_CASE("setter and getter on one reference pointer") {
  auto setter = summary("put_Payload", {access("put_Payload", {0xc0}, R, 0x2000),
                                        access("put_Payload", {0xc0}, W, 0x2008),
                                        access("put_Payload", {0xc0}, F, 0x2010)});
  auto getter = summary("get_Payload", {access("get_Payload", {0xc0}, R, 0x2100)});
  auto reports = detect_races({setter, getter}, opts_for(true, true));
  Classes cross;
  for (const auto& r : reports) {
    if (!r.self_race) cross.insert(r.cls);
  }
  CHECK(cross == Classes{ConflictClass::read_free, ConflictClass::read_write});
  CHECK(vulnerable_functions(reports) == std::set<std::string>{"get_Payload", "put_Payload"});
}

TEST_CASE("a common lock suppresses the pair") {
  Lockset l{LockId{path_of({0x30}), false}};
  auto a = summary("A", {access("A", {0x10}, W, 0x100, l)});
  auto b = summary("B", {access("B", {0x10}, R, 0x200, l)});
  CHECK(detect_races({a, b}, opts_for(true, true)).empty());
  CHECK(vulnerable_functions({}).empty());
}

TEST_CASE("distinct locks do not protect") {
  auto a = summary("A", {access("A", {0x10}, W, 0x100, {LockId{path_of({0x30}), false}})});
  auto b = summary("B", {access("B", {0x10}, R, 0x200, {LockId{path_of({0x38}), false}})});
  auto reports = detect_races({a, b}, opts_for(true, true));
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].cls == ConflictClass::read_write);
  CHECK(!reports[0].self_race);
}

TEST_CASE("lone unguarded writes and the ww-self switch") {
  auto w = summary("Set", {access("Set", {0x10}, W, 0x100)});
  auto on = detect_races({w}, opts_for(true, true));
  REQUIRE(on.size() == 1);
  CHECK(on[0].cls == ConflictClass::write_write);
  CHECK(on[0].self_race);
  CHECK(detect_races({w}, opts_for(true, false)).empty());

  auto guarded = summary("Set", {access("Set", {0x10}, W, 0x100, {LockId{path_of({0x30}), false}})});
  CHECK(detect_races({guarded}, opts_for(true, true)).empty());

  // two writers across methods are not a class of their own
  auto other = summary("Reset", {access("Reset", {0x10}, W, 0x200)});
  for (const auto& r : detect_races({w, other}, opts_for(true, true))) CHECK(r.self_race);
}

TEST_CASE("filter_rr") {
  RaceReport rr{path_of({0x10}), access("A", {0x10}, R, 1), access("B", {0x10}, R, 2), ConflictClass::read_read,
                false};
  RaceReport rw{path_of({0x10}), access("A", {0x10}, R, 1), access("B", {0x10}, W, 3), ConflictClass::read_write,
                false};
  CHECK(filter_rr({rr, rw}) == std::vector<RaceReport>{rw});
  CHECK(filter_rr({}).empty());
}

TEST_CASE("three cross pairs, one read/read, drop to two") {
  auto base = test::run_fixture("e4_three_pairs.asm", Mode::base);
  auto e4 = test::run_fixture("e4_three_pairs.asm", Mode::e4);
  auto cross = [](const std::vector<RaceReport>& rs) {
    std::size_t n = 0;
    for (const auto& r : rs) n += r.self_race ? 0 : 1;
    return n;
  };
  CHECK(cross(base.races) == 3);
  CHECK(cross(e4.races) == 2);
}

namespace {

/// Reference pair enumeration: every unordered pair (with repetition) of
/// accesses on one path, written without sharing code with the detector.
std::set<std::tuple<std::string, Address, std::string, Address>> reference_pairs(
    const std::vector<MethodSummary>& ss, bool drop_rr) {
  std::vector<FieldAccess> all;
  for (const auto& s : ss) all.insert(all.end(), s.accesses.begin(), s.accesses.end());
  std::set<std::tuple<std::string, Address, std::string, Address>> out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i; j < all.size(); ++j) {
      const auto& a = all[i];
      const auto& b = all[j];
      if (a.path != b.path) continue;
      bool shared = false;
      for (const auto& l : a.lockset) shared = shared || b.lockset.count(l) > 0;
      if (shared) continue;
      int reads = (a.kind == R) + (b.kind == R);
      int writes = (a.kind == W) + (b.kind == W);
      if (writes == 2) continue;
      if (drop_rr && reads == 2) continue;
      // order the pair by (method, site) so it matches however it was found
      auto ka = std::tie(a.method, a.site, a.kind);
      auto kb = std::tie(b.method, b.site, b.kind);
      if (kb < ka) {
        out.emplace(b.method, b.site, a.method, a.site);
      } else {
        out.emplace(a.method, a.site, b.method, b.site);
      }
    }
  }
  return out;
}

std::vector<MethodSummary> random_summaries(std::mt19937& rng) {
  const char* names[] = {"A", "B", "C"};
  const std::int64_t offs[] = {0x10, 0x18};
  const AccessKind kinds[] = {R, W, F};
  std::vector<MethodSummary> out;
  unsigned n = 1 + rng() % 3;
  for (unsigned m = 0; m < n; ++m) {
    MethodSummary s;
    s.method = names[m];
    unsigned k = rng() % 5;
    for (unsigned i = 0; i < k; ++i) {
      Lockset l;
      if (rng() % 3 == 0) l.insert(LockId{path_of({0x30}), false});
      if (rng() % 4 == 0) l.insert(LockId{path_of({0x38}), false});
      FieldAccess a = access(s.method, {offs[rng() % 2]}, kinds[rng() % 3], 0x100 * (m + 1) + 4 * i, l);
      if (rng() % 5 == 0) a.path = path_of({0x20, 0x68});
      s.accesses.push_back(a);
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("pairs match a reference enumeration") {
  std::mt19937 rng(23);
  for (int iter = 0; iter < 1000; ++iter) {
    auto ss = random_summaries(rng);
    for (bool rr : {false, true}) {
      auto reports = detect_races(ss, opts_for(rr, false));
      std::set<std::tuple<std::string, Address, std::string, Address>> got;
      for (const auto& r : reports) {
        CHECK(r.a.path == r.path);
        CHECK(r.b.path == r.path);
        CHECK(r.self_race == (r.a.method == r.b.method));
        got.emplace(r.a.method, r.a.site, r.b.method, r.b.site);
      }
      CHECK(got.size() == reports.size());
      CHECK(got == reference_pairs(ss, rr));
    }
  }
}

TEST_CASE("the read/read filter only removes read/read pairs") {
  std::mt19937 rng(29);
  for (int iter = 0; iter < 1000; ++iter) {
    auto ss = random_summaries(rng);
    auto all = detect_races(ss, opts_for(false, false));
    auto kept = filter_rr(all);
    for (const auto& r : kept) CHECK(std::binary_search(all.begin(), all.end(), r));
    for (const auto& r : all) {
      bool removed = !std::binary_search(kept.begin(), kept.end(), r);
      CHECK(removed == (r.a.kind == R && r.b.kind == R));
    }
    CHECK(kept == detect_races(ss, opts_for(true, false)));
  }
}

TEST_CASE("output does not depend on summary order") {
  std::mt19937 rng(31);
  for (int iter = 0; iter < 500; ++iter) {
    auto ss = random_summaries(rng);
    auto first = detect_races(ss, opts_for(true, true));
    std::shuffle(ss.begin(), ss.end(), rng);
    for (auto& s : ss) std::shuffle(s.accesses.begin(), s.accesses.end(), rng);
    CHECK(detect_races(ss, opts_for(true, true)) == first);
  }
}

TEST_CASE("ablation: each enhancement only removes or deepens reports") {
  for (const char* name : {"set_print_ticket.asm", "scan_payload.asm", "e1_one_branch.asm",
                           "e2_distinct_locks.asm", "e4_three_pairs.asm", "e5_subobject.asm",
                           "produce_wrapper.asm", "stack_struct.asm"}) {
    CAPTURE(name);
    auto base = test::run_fixture(name, Mode::base).races;
    auto e4 = test::run_fixture(name, Mode::e4).races;
    auto e45 = test::run_fixture(name, Mode::e4e5).races;
    for (const auto& r : e4) CHECK(std::binary_search(base.begin(), base.end(), r));
    for (const auto& r : e4) CHECK(std::binary_search(e45.begin(), e45.end(), r));
  }
}

namespace {

/// Lock-free accesses on one field for a method, with uses of loaded values.
MethodSummary random_field_method(std::mt19937& rng, const std::string& name, Address base) {
  MethodSummary s;
  s.method = name;
  unsigned n = 1 + rng() % 3;
  Address site = base;
  for (unsigned i = 0; i < n; ++i) {
    FieldAccess a = access(name, {0x50}, static_cast<AccessKind>(rng() % 3), site);
    if (a.kind == W && rng() % 2) a.stored_alloc = site - 2;
    if (a.kind == F) a.null_guarded = rng() % 2 == 0;
    s.accesses.push_back(a);
    if (a.kind == R && rng() % 2) s.uses.push_back(ValueUse{site + 1, path_of({0x50})});
    if (a.stored_alloc && rng() % 2) s.uses.push_back(ValueUse{site + 1, *a.stored_alloc});
    site += 4;
  }
  return s;
}

}  // namespace

TEST_CASE("every oracle-confirmed fault is reported on its field") {
  std::mt19937 rng(37);
  int confirmed = 0;
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<MethodSummary> methods{random_field_method(rng, "A", 0x100), random_field_method(rng, "B", 0x200)};
    Scenario sc;
    unsigned threads = 2 + rng() % 2;
    std::set<std::string> running;
    for (unsigned t = 0; t < threads; ++t) {
      const auto& m = methods[rng() % 2];
      sc.threads.push_back(summary_to_program(m, path_of({0x50})));
      running.insert(m.method);
    }
    sc.init[path_of({0x50}).str()] = 1;
    std::size_t total = 0;
    for (const auto& t : sc.threads) total += t.ops.size();
    if (total > kMaxTotalOps) continue;

    std::vector<MethodSummary> involved;
    for (const auto& m : methods) {
      if (running.count(m.method)) involved.push_back(m);
    }
    Verdict v = enumerate(sc);
    if (!v.uaf && !v.df) continue;
    ++confirmed;
    auto reports = detect_races(involved, opts_for(true, false));
    bool on_field = std::any_of(reports.begin(), reports.end(),
                                [](const RaceReport& r) { return r.path == path_of({0x50}); });
    CHECK(on_field);
  }
  CHECK(confirmed > 20);
}
