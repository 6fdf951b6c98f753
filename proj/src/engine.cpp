#include "comracer/engine.hpp"

#include <set>

namespace comracer {

std::string_view kind_name(AccessKind k) {
  switch (k) {
    case AccessKind::read: return "read";
    case AccessKind::write: return "write";
    case AccessKind::free: return "free";
  }
  return "?";
}

void Effects::append(Effects&& other) {
  auto move_into = [](auto& dst, auto& src) {
    dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
  };
  move_into(accesses, other.accesses);
  move_into(uses, other.uses);
  move_into(null_tests, other.null_tests);
  move_into(facts, other.facts);
  move_into(diagnostics, other.diagnostics);
}

void note_use(const AbstractValue& v, Address site, Effects* fx) {
  if (!fx) return;
  if (const auto* f = std::get_if<FieldContents>(&v)) {
    fx->uses.push_back(ValueUse{site, f->path});
  } else if (const auto* a = std::get_if<AllocFresh>(&v)) {
    fx->uses.push_back(ValueUse{site, a->site});
  }
}

namespace {

/// Where a memory operand points, as far as the domain can tell.
struct Location {
  enum class Kind { none, stack, field, object } kind = Kind::none;
  std::int64_t slot = 0;
  /// Field path when the slot is a trackable field (kind field).
  std::optional<FieldPath> path;
  /// Object-relative view (kind field or object): base object + offset inside it.
  std::optional<ObjectValue> object;
  std::int64_t object_offset = 0;
  AbstractValue base = Unknown{};
};

Location locate(const MachineState& s, const Mem& m, const DataStepConfig& cfg, Effects* fx,
                Address site) {
  Location loc;
  if (m.base == Reg::rsp) {
    if (!m.index) {
      loc.kind = Location::Kind::stack;
      loc.slot = m.disp;
    }
    return loc;
  }
  if (m.index) return loc;
  loc.base = s.reg(m.base);
  const auto& base = loc.base;
  if (const auto* t = std::get_if<ThisDerived>(&base)) {
    loc.kind = Location::Kind::field;
    loc.path = path_of({t->disp + m.disp});
    loc.object = ThisDerived{0};
    loc.object_offset = t->disp + m.disp;
  } else if (const auto* f = std::get_if<FieldContents>(&base)) {
    loc.kind = Location::Kind::object;
    loc.object = FieldContents{f->path, 0};
    loc.object_offset = f->disp + m.disp;
    if (cfg.deref_fields) {
      FieldPath p = f->path.extended(f->disp + m.disp);
      if (p.depth() <= cfg.depth) {
        loc.kind = Location::Kind::field;
        loc.path = std::move(p);
      } else if (fx) {
        fx->diagnostics.push_back("access " + p.str() + " at " + hex(site) +
                                  " exceeds path depth " + std::to_string(cfg.depth) +
                                  "; dropped");
      }
    }
  } else if (const auto* st = std::get_if<StackAddr>(&base)) {
    loc.kind = Location::Kind::stack;
    loc.slot = st->disp + m.disp;
  } else if (const auto* a = std::get_if<AllocFresh>(&base)) {
    loc.kind = Location::Kind::object;
    loc.object = *a;
    loc.object_offset = m.disp;
  }
  return loc;
}

void emit(Effects* fx, const MachineState& s, const FieldPath& p, AccessKind k, Address site,
          std::optional<Address> stored_alloc = std::nullopt) {
  if (!fx) return;
  fx->accesses.push_back(FieldAccess{"", p, k, s.lockset(), site, stored_alloc, false});
}

AbstractValue immediate_value(const Imm& imm, const DataStepConfig& cfg) {
  auto addr = static_cast<Address>(imm.value);
  if (cfg.image && cfg.image->is_data(addr)) return VtableRef{addr};
  return Unknown{};
}

AbstractValue source_value(const MachineState& s, const Operand& op, const DataStepConfig& cfg) {
  if (const auto* r = std::get_if<Reg>(&op)) return s.reg(*r);
  if (const auto* imm = std::get_if<Imm>(&op)) return immediate_value(*imm, cfg);
  return Unknown{};
}

/// Memory read as part of a non-mov instruction (cmp/test/arithmetic source).
void read_memory_operand(const MachineState& s, const Operand& op, const DataStepConfig& cfg,
                         Effects* fx, Address site) {
  const auto* m = std::get_if<Mem>(&op);
  if (!m) return;
  auto loc = locate(s, *m, cfg, fx, site);
  if (loc.kind == Location::Kind::field && loc.object_offset != 0) {
    emit(fx, s, *loc.path, AccessKind::read, site);
  }
  note_use(loc.base, site, fx);
}

void set_dest(MachineState& s, Reg r, AbstractValue v) {
  if (r == Reg::rsp) return;  // stack pointer adjustments keep slot addressing stable
  s.set(r, std::move(v));
}

void do_load(MachineState& s, Reg dst, const Operand& src, const DataStepConfig& cfg, Effects* fx,
             Address site) {
  if (std::holds_alternative<RipRel>(src)) {
    set_dest(s, dst, Unknown{});  // globals are outside the this-rooted domain
    return;
  }
  const auto& m = std::get<Mem>(src);
  auto loc = locate(s, m, cfg, fx, site);
  note_use(loc.base, site, fx);
  AbstractValue result = Unknown{};
  switch (loc.kind) {
    case Location::Kind::stack:
      if (cfg.track_stack_slots) result = s.slot(loc.slot);
      break;
    case Location::Kind::field:
    case Location::Kind::object:
      if (loc.object && loc.object_offset == 0) {
        result = VtablePtr{*loc.object};
      } else if (loc.path) {
        emit(fx, s, *loc.path, AccessKind::read, site);
        result = FieldContents{*loc.path, 0};
      }
      break;
    case Location::Kind::none:
      break;
  }
  set_dest(s, dst, std::move(result));
}

void do_store(MachineState& s, const Mem& m, const AbstractValue& value, const DataStepConfig& cfg,
              Effects* fx, Address site) {
  auto loc = locate(s, m, cfg, fx, site);
  note_use(loc.base, site, fx);
  const auto* vt = std::get_if<VtableRef>(&value);
  if (vt && loc.object && fx) {
    fx->facts.push_back(VtableStoreFact{"", site, *loc.object, loc.object_offset, vt->addr});
  }
  switch (loc.kind) {
    case Location::Kind::stack:
      if (cfg.track_stack_slots) s.set_slot(loc.slot, value);
      break;
    case Location::Kind::field:
      if (!vt) {
        std::optional<Address> alloc;
        if (const auto* a = std::get_if<AllocFresh>(&value)) alloc = a->site;
        emit(fx, s, *loc.path, AccessKind::write, site, alloc);
      }
      break;
    default:
      break;
  }
}

}  // namespace

void step_data(MachineState& s, const Instruction& insn, const DataStepConfig& cfg, Effects* fx) {
  const auto& ops = insn.operands;
  const Address site = insn.address;
  switch (insn.op) {
    case Mnemonic::mov: {
      const auto* dst_reg = std::get_if<Reg>(&ops[0]);
      if (dst_reg) {
        if (std::holds_alternative<Mem>(ops[1]) || std::holds_alternative<RipRel>(ops[1])) {
          do_load(s, *dst_reg, ops[1], cfg, fx, site);
        } else {
          set_dest(s, *dst_reg, source_value(s, ops[1], cfg));
        }
      } else if (const auto* m = std::get_if<Mem>(&ops[0])) {
        do_store(s, *m, source_value(s, ops[1], cfg), cfg, fx, site);
      }
      break;
    }
    case Mnemonic::lea: {
      Reg dst = std::get<Reg>(ops[0]);
      AbstractValue result = Unknown{};
      if (const auto* rip = std::get_if<RipRel>(&ops[1])) {
        if (cfg.image && cfg.image->is_data(rip->target)) result = VtableRef{rip->target};
      } else {
        const auto& m = std::get<Mem>(ops[1]);
        if (m.index) {
          // scaled addressing is not a this alias
        } else if (m.base == Reg::rsp) {
          result = StackAddr{m.disp};
        } else {
          const auto& base = s.reg(m.base);
          if (const auto* t = std::get_if<ThisDerived>(&base)) {
            result = ThisDerived{t->disp + m.disp};
          } else if (const auto* f = std::get_if<FieldContents>(&base)) {
            result = FieldContents{f->path, f->disp + m.disp};
          } else if (const auto* st = std::get_if<StackAddr>(&base)) {
            result = StackAddr{st->disp + m.disp};
          }
        }
      }
      set_dest(s, dst, std::move(result));
      break;
    }
    case Mnemonic::cmp:
    case Mnemonic::test: {
      for (const auto& op : ops) read_memory_operand(s, op, cfg, fx, site);
      const auto* r0 = std::get_if<Reg>(&ops[0]);
      bool null_test = false;
      if (r0) {
        if (const auto* r1 = std::get_if<Reg>(&ops[1])) null_test = insn.op == Mnemonic::test && *r0 == *r1;
        if (const auto* imm = std::get_if<Imm>(&ops[1])) null_test = imm->value == 0;
      }
      if (null_test && fx) {
        if (const auto* f = std::get_if<FieldContents>(&s.reg(*r0)); f && f->disp == 0) {
          fx->null_tests.push_back(NullTest{site, f->path});
        }
      }
      break;
    }
    case Mnemonic::add:
    case Mnemonic::sub:
    case Mnemonic::xor_:
    case Mnemonic::and_:
    case Mnemonic::sbb:
    case Mnemonic::neg: {
      if (ops.size() == 2) read_memory_operand(s, ops[1], cfg, fx, site);
      if (const auto* r = std::get_if<Reg>(&ops[0])) {
        set_dest(s, *r, Unknown{});
      } else if (const auto* m = std::get_if<Mem>(&ops[0])) {
        read_memory_operand(s, ops[0], cfg, fx, site);
        do_store(s, *m, Unknown{}, cfg, fx, site);
      }
      break;
    }
    case Mnemonic::call:
    case Mnemonic::jmp:
    case Mnemonic::jcc:
    case Mnemonic::ret:
    case Mnemonic::nop:
      break;
  }
}

FunctionRun run_fixpoint(const Function& fn, const Cfg& cfg, const MachineState& entry,
                         const StepFn& step, Effects* fx, const StateObserver& observe) {
  FunctionRun run;
  const std::size_t n = cfg.blocks.size();
  run.block_in.assign(n, std::nullopt);
  if (n == 0) return run;

  auto order = bfs_order(cfg);
  std::vector<std::size_t> rank(n, n);
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;

  auto run_block = [&](BlockId b, MachineState state, Effects* out_fx, bool observing) {
    for (const auto& insn : cfg.blocks[b].instructions(fn)) {
      if (observing && observe) observe(insn, state);
      step(state, insn, out_fx);
    }
    return state;
  };

  std::vector<std::size_t> updates(n, 0);
  std::set<std::size_t> pending{rank[cfg.entry]};
  run.block_in[cfg.entry] = entry;
  const std::size_t cap = 64 * n + 1024;
  std::size_t steps = 0;
  while (!pending.empty()) {
    if (++steps > cap) {
      run.iteration_capped = true;
      if (fx) fx->diagnostics.push_back("fixpoint iteration cap hit in " + fn.name);
      break;
    }
    BlockId b = order[*pending.begin()];
    pending.erase(pending.begin());
    MachineState out = run_block(b, *run.block_in[b], nullptr, false);
    for (BlockId succ : cfg.successors[b]) {
      auto& in = run.block_in[succ];
      MachineState merged = in ? merge_states(*in, out) : out;
      if (!in || merged != *in) {
        in = std::move(merged);
        ++updates[succ];
        pending.insert(rank[succ]);
      }
    }
  }
  for (auto u : updates) run.max_block_updates = std::max(run.max_block_updates, u);

  std::vector<BlockId> all = order;
  for (BlockId b = 0; b < n; ++b) {
    if (rank[b] == n) all.push_back(b);
  }
  for (BlockId b : all) {
    MachineState in = run.block_in[b] ? *run.block_in[b] : entry;
    MachineState out = run_block(b, in, fx, true);
    if (cfg.blocks[b].reachable && cfg.blocks[b].terminator.kind == Terminator::Kind::ret) {
      run.exit = run.exit ? merge_states(*run.exit, out) : out;
    }
  }
  return run;
}

}  // namespace comracer
