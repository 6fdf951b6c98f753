#include "comracer/vtable.hpp"

#include <algorithm>

namespace comracer {

const FunctionFacts* FactBase::find(std::string_view name) const {
  auto it = functions.find(name);
  return it == functions.end() ? nullptr : &it->second;
}

std::vector<VtableStoreFact> FactBase::all_stores() const {
  std::vector<VtableStoreFact> out;
  for (const auto& [name, f] : functions) out.insert(out.end(), f.stores.begin(), f.stores.end());
  return out;
}

namespace {

/// Base object and offset of a pointer into it.
std::optional<std::pair<ObjectValue, std::int64_t>> object_base(const AbstractValue& v) {
  if (const auto* t = std::get_if<ThisDerived>(&v)) return std::pair{ObjectValue{ThisDerived{0}}, t->disp};
  if (const auto* f = std::get_if<FieldContents>(&v)) {
    return std::pair{ObjectValue{FieldContents{f->path, 0}}, f->disp};
  }
  if (const auto* a = std::get_if<AllocFresh>(&v)) return std::pair{ObjectValue{*a}, std::int64_t{0}};
  return std::nullopt;
}

class FactCollector {
 public:
  FactCollector(const BinaryImage& image, const RecoveryOptions& opts) : image_(image), opts_(opts) {}

  FactBase run() {
    for (const auto& fn : image_.functions()) facts_of(fn);
    return std::move(base_);
  }

 private:
  const FunctionFacts& facts_of(const Function& fn) {
    if (const auto* done = base_.find(fn.name)) return *done;
    static const FunctionFacts empty;
    if (!in_progress_.insert(fn.name).second) return empty;  // recursion: no summary yet

    FunctionFacts out;
    Cfg cfg = build_cfg(fn);
    DataStepConfig data{&image_, false, 2, opts_.track_stack_slots};
    Effects fx;
    auto step = [&](MachineState& s, const Instruction& insn, Effects* e) {
      if (insn.op == Mnemonic::call) {
        call_step(s, insn, fn, e);
      } else {
        step_data(s, insn, data, e);
      }
    };
    auto observe = [&](const Instruction& insn, const MachineState& s) {
      if (insn.op == Mnemonic::call) out.call_states.insert_or_assign(insn.address, s);
    };
    auto run = run_fixpoint(fn, cfg, MachineState::method_entry(), step, &fx, observe);
    for (auto& f : fx.facts) {
      f.function = fn.name;
      out.stores.push_back(std::move(f));
    }
    if (run.exit) out.returns = run.exit->reg(Reg::rax);
    out.diagnostics = std::move(cfg.diagnostics);
    out.diagnostics.insert(out.diagnostics.end(), fx.diagnostics.begin(), fx.diagnostics.end());

    in_progress_.erase(fn.name);
    return base_.functions.emplace(fn.name, std::move(out)).first->second;
  }

  void call_step(MachineState& s, const Instruction& insn, const Function& caller, Effects* fx) {
    const AbstractValue rcx = s.reg(Reg::rcx);
    s.clobber_volatile();
    auto target = insn.direct_target();
    if (!target) return;
    if (auto sym = symbol_at(image_, *target); sym && sym->tag == SymbolTag::alloc) {
      s.set(Reg::rax, AllocFresh{insn.address});
      return;
    }
    const Function* callee = image_.function_at_entry(*target);
    if (!callee || callee == &caller) return;
    const FunctionFacts& cf = facts_of(*callee);
    if (auto base = object_base(rcx)) {
      for (const auto& f : cf.stores) {
        if (!std::holds_alternative<ThisDerived>(f.object) || !fx) continue;
        fx->facts.push_back(
            VtableStoreFact{"", insn.address, base->first, base->second + f.field_offset, f.vtable});
      }
    }
    if (cf.returns == AbstractValue{ThisDerived{0}}) {
      s.set(Reg::rax, rcx);
    } else if (std::holds_alternative<AllocFresh>(cf.returns)) {
      s.set(Reg::rax, AllocFresh{insn.address});
    }
  }

  const BinaryImage& image_;
  RecoveryOptions opts_;
  FactBase base_;
  std::set<std::string, std::less<>> in_progress_;
};

std::optional<Reg> dispatch_register(const Instruction& call) {
  if (call.operands.empty()) return std::nullopt;
  const auto& op = call.operands[0];
  if (const auto* r = std::get_if<Reg>(&op)) return *r;
  if (const auto* m = std::get_if<Mem>(&op); m && !m->index) return m->base;
  return std::nullopt;
}

std::set<Address> follow(const BinaryImage& image, std::string_view function,
                         const ObjectValue& object, const FactBase& facts, int budget) {
  std::set<Address> out;
  const auto* ff = facts.find(function);
  if (!ff || budget <= 0) return out;
  for (const auto& f : ff->stores) {
    if (f.field_offset == 0 && f.object == object) out.insert(f.vtable);
  }
  if (!out.empty()) return out;

  // Factory: the object is the result of a call whose callee returns a fresh object.
  const auto* fresh = std::get_if<AllocFresh>(&object);
  if (!fresh) return out;
  const Instruction* call = image.instruction_at(fresh->site);
  if (!call || call->op != Mnemonic::call) return out;
  auto target = call->direct_target();
  const Function* callee = target ? image.function_at_entry(*target) : nullptr;
  if (!callee) return out;
  const auto* cf = facts.find(callee->name);
  if (!cf) return out;
  if (const auto* inner = std::get_if<AllocFresh>(&cf->returns)) {
    return follow(image, callee->name, ObjectValue{*inner}, facts, budget - 1);
  }
  return out;
}

}  // namespace

FactBase collect_facts(const BinaryImage& image, const RecoveryOptions& opts) {
  return FactCollector(image, opts).run();
}

std::vector<const Instruction*> collect_calls(const Function& fn) {
  std::vector<const Instruction*> out;
  for (const auto& insn : fn.instructions) {
    if (insn.op == Mnemonic::call) out.push_back(&insn);
  }
  return out;
}

bool is_virtual_call(const Instruction& call, const MachineState& state) {
  return trace_object(call, state).has_value();
}

std::optional<ObjectValue> trace_object(const Instruction& call, const MachineState& state) {
  if (call.op != Mnemonic::call) return std::nullopt;
  auto r = dispatch_register(call);
  if (!r) return std::nullopt;
  if (const auto* vp = std::get_if<VtablePtr>(&state.reg(*r))) return vp->object;
  return std::nullopt;
}

std::set<Address> follow_object_chain(const BinaryImage& image, std::string_view function,
                                      const ObjectValue& object, const FactBase& facts) {
  return follow(image, function, object, facts, 8);
}

std::int64_t parse_method_offset(const Instruction& call) {
  if (!call.operands.empty()) {
    if (const auto* m = std::get_if<Mem>(&call.operands[0])) return m->disp;
  }
  return 0;
}

std::optional<Address> lookup_vtable(const BinaryImage& image, Address vtable, std::int64_t offset) {
  const Address slot = vtable + static_cast<Address>(offset);
  if (!image.is_data(slot)) return std::nullopt;
  Address word = read_data_word(image, slot);
  if (!image.is_function_entry(word)) return std::nullopt;
  return word;
}

Resolution recover_virtual_calls(const BinaryImage& image, const RecoveryOptions& opts) {
  Resolution res;
  FactBase facts = collect_facts(image, opts);
  for (const auto& [name, ff] : facts.functions) {
    for (const auto& f : ff.stores) {
      if (f.field_offset != 0) res.secondary.push_back(f);
    }
  }
  for (const auto& fn : image.functions()) {
    const auto* ff = facts.find(fn.name);
    for (const Instruction* call : collect_calls(fn)) {
      auto it = ff->call_states.find(call->address);
      if (it == ff->call_states.end()) continue;
      auto object = trace_object(*call, it->second);
      if (!object) continue;
      ++res.virtual_calls;
      auto unresolved = [&](std::string reason) {
        res.unresolved.push_back(UnresolvedCall{call->address, fn.name, std::move(reason)});
      };
      const std::int64_t offset = parse_method_offset(*call);
      if (offset < 0 || offset % 8 != 0) {
        unresolved("method offset " + signed_hex(offset) + " is not a vtable slot");
        continue;
      }
      auto vtables = follow_object_chain(image, fn.name, *object, facts);
      if (vtables.empty()) {
        unresolved("no vtable store found for " + to_string(*object));
        continue;
      }
      ResolvedCall rc{call->address, fn.name, offset, {}};
      for (Address vt : vtables) {
        if (auto target = lookup_vtable(image, vt, offset)) {
          std::string callee = image.function_at_entry(*target)->name;
          rc.candidates.insert(CallTarget{vt, *target, callee});
        }
      }
      if (rc.candidates.empty()) {
        unresolved("vtable slot " + hex(static_cast<Address>(offset)) + " holds no function entry");
        continue;
      }
      res.resolved.emplace(call->address, std::move(rc));
    }
  }
  std::sort(res.unresolved.begin(), res.unresolved.end(),
            [](const auto& a, const auto& b) { return a.call_site < b.call_site; });
  return res;
}

}  // namespace comracer
