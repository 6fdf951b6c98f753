#pragma once

// Abstract interpretation core shared by vtable recovery and the taint engine:
// data-instruction semantics and the per-block worklist fixpoint. Call
// semantics differ between the two clients and are supplied by them.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "comracer/cfg.hpp"
#include "comracer/isa.hpp"
#include "comracer/values.hpp"

namespace comracer {

enum class AccessKind : std::uint8_t { read, write, free };

std::string_view kind_name(AccessKind k);

struct FieldAccess {
  std::string method;
  FieldPath path;
  AccessKind kind = AccessKind::read;
  Lockset lockset;
  Address site = 0;
  /// Write of a fresh allocation: the allocating call site.
  std::optional<Address> stored_alloc;
  /// Free reached only through the non-null side of a null test on the freed value.
  bool null_guarded = false;

  bool operator==(const FieldAccess&) const = default;
};

/// Dereference of, or first-argument pass of, a tracked pointer value:
/// the contents of a field path, or a fresh allocation (by site).
struct ValueUse {
  Address site = 0;
  std::variant<FieldPath, Address> value;

  auto operator<=>(const ValueUse&) const = default;
};

/// `test r,r` / `cmp r,0` on the contents of a field.
struct NullTest {
  Address site = 0;
  FieldPath path;
};

/// A vtable address stored into an object slot.
struct VtableStoreFact {
  std::string function;
  Address site = 0;
  ObjectValue object;
  std::int64_t field_offset = 0;
  Address vtable = 0;

  bool operator==(const VtableStoreFact&) const = default;
};

struct Effects {
  std::vector<FieldAccess> accesses;
  std::vector<ValueUse> uses;
  std::vector<NullTest> null_tests;
  std::vector<VtableStoreFact> facts;
  std::vector<std::string> diagnostics;

  void append(Effects&& other);
};

struct DataStepConfig {
  const BinaryImage* image = nullptr;
  bool deref_fields = false;
  std::size_t depth = 2;
  bool track_stack_slots = true;
};

/// Semantics of every mnemonic except `call`. Emissions go to `fx` when given.
void step_data(MachineState& state, const Instruction& insn, const DataStepConfig& cfg,
               Effects* fx);

/// Record a use if `v` is a field's contents or a fresh allocation.
void note_use(const AbstractValue& v, Address site, Effects* fx);

using StepFn = std::function<void(MachineState&, const Instruction&, Effects*)>;
using StateObserver = std::function<void(const Instruction&, const MachineState&)>;

struct FunctionRun {
  std::vector<std::optional<MachineState>> block_in;
  /// Merge of the states reaching every `ret`; empty if no ret is reachable.
  std::optional<MachineState> exit;
  std::size_t max_block_updates = 0;
  bool iteration_capped = false;
};

/// Worklist fixpoint in bfs order (in-state = merge of predecessor out-states),
/// followed by one emitting pass. Unreachable blocks get `entry` as in-state and
/// do not feed reachable ones. `observe` sees the state before each instruction
/// of the emitting pass.
FunctionRun run_fixpoint(const Function& fn, const Cfg& cfg, const MachineState& entry,
                         const StepFn& step, Effects* fx, const StateObserver& observe = {});

}  // namespace comracer
