#include <doctest.h>

#include <random>

#include "comracer/values.hpp"

using namespace comracer;

TEST_CASE("field path rendering") {
  CHECK(path_of({0x50}).str() == "this+0x50");
  CHECK(path_of({0x20, 0x68}).str() == "[this+0x20]+0x68");
  CHECK(path_of({0x20, 0x8, 0x10}).str() == "[[this+0x20]+0x8]+0x10");
  CHECK(path_of({-0x8}).str() == "this-0x8");
}

TEST_CASE("lock identities") {
  CHECK(lock_id_of(ThisDerived{0x30}, 2)->str() == "this+0x30");
  CHECK(lock_id_of(FieldContents{path_of({0x30}), 0}, 2)->str() == "[this+0x30]");
  CHECK(lock_id_of(FieldContents{path_of({0x20}), 0x30}, 2)->str() == "[this+0x20]+0x30");
  CHECK(!lock_id_of(FieldContents{path_of({0x20}), 0x30}, 1));
  CHECK(!lock_id_of(Unknown{}, 2));
  CHECK(!lock_id_of(StackAddr{0x20}, 2));
}

TEST_CASE("merge examples") {
  MachineState x = MachineState::method_entry();
  x.set(Reg::rbx, FieldContents{path_of({0x10}), 0});
  x.locks[LockId{path_of({0x30}), false}] = 2;
  CHECK(merge_states(x, x) == x);

  MachineState held, free;
  held.locks[LockId{path_of({0x30}), false}] = 1;
  MachineState m = merge_states(held, free);
  CHECK(m.lock_count(LockId{path_of({0x30}), false}) == 0);
  CHECK(m.lockset().empty());

  MachineState a = MachineState::method_entry();
  MachineState b;
  CHECK(is_unknown(merge_states(a, b).reg(Reg::rcx)));
}

TEST_CASE("stack slots hold values, unknown clears them") {
  MachineState s;
  s.set_slot(0x20, ThisDerived{0});
  CHECK(s.slot(0x20) == AbstractValue{ThisDerived{0}});
  s.set_slot(0x20, Unknown{});
  CHECK(s.stack.empty());
}

TEST_CASE("clobbering keeps callee-saved registers") {
  MachineState s;
  for (std::size_t i = 0; i < kRegCount; ++i) s.regs[i] = ThisDerived{static_cast<std::int64_t>(i)};
  s.clobber_volatile();
  for (Reg r : {Reg::rax, Reg::rcx, Reg::rdx, Reg::r8, Reg::r9, Reg::r10, Reg::r11}) CHECK(is_unknown(s.reg(r)));
  for (Reg r : {Reg::rbx, Reg::rbp, Reg::rsi, Reg::rdi, Reg::r12, Reg::r13, Reg::r14, Reg::r15}) {
    CHECK(!is_unknown(s.reg(r)));
  }
}

namespace {

AbstractValue random_value(std::mt19937& rng) {
  switch (rng() % 6) {
    case 0: return Unknown{};
    case 1: return ThisDerived{static_cast<std::int64_t>(8 * (rng() % 3))};
    case 2: return FieldContents{path_of({static_cast<std::int64_t>(8 * (rng() % 2))}), 0};
    case 3: return AllocFresh{0x100 + rng() % 2};
    case 4: return VtablePtr{ThisDerived{0}};
    default: return StackAddr{0x20};
  }
}

MachineState random_state(std::mt19937& rng) {
  MachineState s;
  for (Reg r : {Reg::rax, Reg::rbx, Reg::rcx, Reg::rdi}) s.set(r, random_value(rng));
  for (std::int64_t slot : {0x20, 0x28}) {
    if (rng() % 2) s.set_slot(slot, random_value(rng));
  }
  for (std::int64_t off : {0x30, 0x38, 0x40}) {
    int c = static_cast<int>(rng() % 4);
    if (c > 0) s.locks[LockId{path_of({off}), rng() % 2 == 0}] = c;
  }
  return s;
}

}  // namespace

TEST_CASE("merge is commutative, associative and idempotent") {
  std::mt19937 rng(42);
  for (int i = 0; i < 2000; ++i) {
    MachineState a = random_state(rng), b = random_state(rng), c = random_state(rng);
    CHECK(merge_states(a, b) == merge_states(b, a));
    CHECK(merge_states(merge_states(a, b), c) == merge_states(a, merge_states(b, c)));
    CHECK(merge_states(a, a) == a);
    MachineState m = merge_states(a, b);
    for (const auto& [id, count] : m.locks) {
      CHECK(count >= 1);
      CHECK(count == std::min(a.lock_count(id), b.lock_count(id)));
    }
  }
}
