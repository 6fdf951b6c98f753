#pragma once

// Abstract domain shared by vtable recovery and the taint engine: this-relative
// pointer values, field paths, lock identities and the per-point machine state.

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "comracer/isa.hpp"

namespace comracer {

/// Chain of byte offsets, outermost first: [0x20, 0x68] is `[this+0x20]+0x68`.
struct FieldPath {
  std::vector<std::int64_t> offsets;

  auto operator<=>(const FieldPath&) const = default;

  std::size_t depth() const { return offsets.size(); }
  FieldPath extended(std::int64_t off) const;
  std::string str() const;
};

FieldPath path_of(std::initializer_list<std::int64_t> offsets);

struct Unknown {
  auto operator<=>(const Unknown&) const = default;
};
/// this + disp.
struct ThisDerived {
  std::int64_t disp = 0;
  auto operator<=>(const ThisDerived&) const = default;
};
/// Word stored at `path`, plus `disp` (disp != 0 only after lea on the contents).
struct FieldContents {
  FieldPath path;
  std::int64_t disp = 0;
  auto operator<=>(const FieldContents&) const = default;
};
/// Address of a vtable in the data section.
struct VtableRef {
  Address addr = 0;
  auto operator<=>(const VtableRef&) const = default;
};
/// rsp + disp.
struct StackAddr {
  std::int64_t disp = 0;
  auto operator<=>(const StackAddr&) const = default;
};
/// Result of the allocation (or object-producing call) at `site`.
struct AllocFresh {
  Address site = 0;
  auto operator<=>(const AllocFresh&) const = default;
};

/// Values that can own a vtable pointer at offset 0.
using ObjectValue = std::variant<ThisDerived, FieldContents, AllocFresh>;

/// Word loaded from offset 0 of `object`.
struct VtablePtr {
  ObjectValue object;
  auto operator<=>(const VtablePtr&) const = default;
};

using AbstractValue =
    std::variant<Unknown, ThisDerived, FieldContents, VtableRef, StackAddr, AllocFresh, VtablePtr>;

std::string to_string(const AbstractValue& v);
std::string to_string(const ObjectValue& v);
AbstractValue as_value(const ObjectValue& o);
/// ThisDerived(d), FieldContents(p) with disp 0, or AllocFresh.
std::optional<ObjectValue> as_object(const AbstractValue& v);
bool is_unknown(const AbstractValue& v);

/// Lock object identity: the address `path` (this+0x30, [this+0x20]+0x30) or,
/// when `contents` is set, the pointer stored at `path` ([this+0x30]).
struct LockId {
  FieldPath path;
  bool contents = false;

  auto operator<=>(const LockId&) const = default;
  std::string str() const;
};

/// Lock identity named by a pointer value; empty for Unknown and non-this values.
std::optional<LockId> lock_id_of(const AbstractValue& v, std::size_t max_depth);

using Lockset = std::set<LockId>;

struct MachineState {
  std::array<AbstractValue, kRegCount> regs{};
  std::map<std::int64_t, AbstractValue> stack;  // absent slot = Unknown
  std::map<LockId, int> locks;                  // absent lock = count 0

  auto operator<=>(const MachineState&) const = default;

  const AbstractValue& reg(Reg r) const { return regs[static_cast<std::size_t>(r)]; }
  void set(Reg r, AbstractValue v);
  AbstractValue slot(std::int64_t disp) const;
  void set_slot(std::int64_t disp, AbstractValue v);
  int lock_count(const LockId& l) const;
  Lockset lockset() const;
  void clobber_volatile();

  /// rcx = this, nothing else known, no locks.
  static MachineState method_entry();
};

/// Registers and slots survive only where both sides agree; lock counts take the
/// minimum (absent = 0).
MachineState merge_states(const MachineState& a, const MachineState& b);

struct AnalysisOpts {
  bool rr_filter = false;        // E4
  bool deref_recursion = false;  // E5
  bool ww_self = true;
  int lock_cap = 16;
  std::size_t depth = 2;         // max field path segments
  int unroll = 1;                // times a function may appear on the call stack
  std::size_t max_call_depth = 8;
  bool track_stack_slots = true;  // M2 spill tracking; off only in tests
};

}  // namespace comracer
