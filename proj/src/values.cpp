#include "comracer/values.hpp"

#include <algorithm>

namespace comracer {

FieldPath FieldPath::extended(std::int64_t off) const {
  FieldPath p = *this;
  p.offsets.push_back(off);
  return p;
}

std::string FieldPath::str() const {
  if (offsets.empty()) return "this";
  std::string s = "this";
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (i > 0) s = "[" + s + "]";
    auto off = offsets[i];
    s += off < 0 ? signed_hex(off) : "+" + hex(static_cast<std::uint64_t>(off));
  }
  return s;
}

FieldPath path_of(std::initializer_list<std::int64_t> offsets) { return FieldPath{offsets}; }

namespace {

std::string with_disp(std::string base, std::int64_t disp) {
  if (disp == 0) return base;
  return base + (disp < 0 ? signed_hex(disp) : "+" + hex(static_cast<std::uint64_t>(disp)));
}

}  // namespace

std::string to_string(const AbstractValue& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Unknown>) {
          return "unknown";
        } else if constexpr (std::is_same_v<T, ThisDerived>) {
          return with_disp("this", x.disp);
        } else if constexpr (std::is_same_v<T, FieldContents>) {
          return with_disp("[" + x.path.str() + "]", x.disp);
        } else if constexpr (std::is_same_v<T, VtableRef>) {
          return "vtable@" + hex(x.addr);
        } else if constexpr (std::is_same_v<T, StackAddr>) {
          return with_disp("rsp", x.disp);
        } else if constexpr (std::is_same_v<T, AllocFresh>) {
          return "alloc@" + hex(x.site);
        } else {
          return "vptr(" + to_string(x.object) + ")";
        }
      },
      v);
}

std::string to_string(const ObjectValue& v) { return to_string(as_value(v)); }

AbstractValue as_value(const ObjectValue& o) {
  return std::visit([](const auto& x) -> AbstractValue { return x; }, o);
}

std::optional<ObjectValue> as_object(const AbstractValue& v) {
  if (const auto* t = std::get_if<ThisDerived>(&v)) return *t;
  if (const auto* f = std::get_if<FieldContents>(&v); f && f->disp == 0) return *f;
  if (const auto* a = std::get_if<AllocFresh>(&v)) return *a;
  return std::nullopt;
}

bool is_unknown(const AbstractValue& v) { return std::holds_alternative<Unknown>(v); }

std::string LockId::str() const { return contents ? "[" + path.str() + "]" : path.str(); }

std::optional<LockId> lock_id_of(const AbstractValue& v, std::size_t max_depth) {
  std::optional<LockId> id;
  if (const auto* t = std::get_if<ThisDerived>(&v)) {
    id = LockId{path_of({t->disp}), false};
  } else if (const auto* f = std::get_if<FieldContents>(&v)) {
    id = f->disp == 0 ? LockId{f->path, true} : LockId{f->path.extended(f->disp), false};
  }
  if (id && id->path.depth() > max_depth) return std::nullopt;
  return id;
}

void MachineState::set(Reg r, AbstractValue v) { regs[static_cast<std::size_t>(r)] = std::move(v); }

AbstractValue MachineState::slot(std::int64_t disp) const {
  auto it = stack.find(disp);
  return it == stack.end() ? AbstractValue{Unknown{}} : it->second;
}

void MachineState::set_slot(std::int64_t disp, AbstractValue v) {
  if (is_unknown(v)) {
    stack.erase(disp);
  } else {
    stack[disp] = std::move(v);
  }
}

int MachineState::lock_count(const LockId& l) const {
  auto it = locks.find(l);
  return it == locks.end() ? 0 : it->second;
}

Lockset MachineState::lockset() const {
  Lockset held;
  for (const auto& [id, count] : locks) {
    if (count >= 1) held.insert(id);
  }
  return held;
}

void MachineState::clobber_volatile() {
  for (std::size_t i = 0; i < kRegCount; ++i) {
    if (is_volatile(static_cast<Reg>(i))) regs[i] = Unknown{};
  }
}

MachineState MachineState::method_entry() {
  MachineState s;
  s.set(Reg::rcx, ThisDerived{0});
  return s;
}

MachineState merge_states(const MachineState& a, const MachineState& b) {
  MachineState out;
  for (std::size_t i = 0; i < kRegCount; ++i) {
    out.regs[i] = a.regs[i] == b.regs[i] ? a.regs[i] : AbstractValue{Unknown{}};
  }
  for (const auto& [disp, v] : a.stack) {
    auto it = b.stack.find(disp);
    if (it != b.stack.end() && it->second == v) out.stack.emplace(disp, v);
  }
  for (const auto& [id, count] : a.locks) {
    int m = std::min(count, b.lock_count(id));
    if (m > 0) out.locks.emplace(id, m);
  }
  return out;
}

}  // namespace comracer
