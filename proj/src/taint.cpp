#include "comracer/taint.hpp"

#include <algorithm>
#include <map>
#include <tuple>

namespace comracer {

namespace {

struct RunResult {
  std::optional<MachineState> exit;
  Effects fx;
};

class MethodAnalyzer {
 public:
  MethodAnalyzer(const BinaryImage& image, const Resolution& resolved, const AnalysisOpts& opts)
      : image_(image), resolved_(resolved), opts_(opts),
        data_{&image, opts.deref_recursion, opts.depth, opts.track_stack_slots} {}

  const RunResult& run(const Function& fn, const MachineState& entry);
  void step(MachineState& s, const Instruction& insn, Effects* fx);

  std::vector<std::string> diagnostics;
  Lockset acquired;
  std::size_t max_updates = 0;

 private:
  void call(MachineState& s, const Instruction& insn, Effects* fx);
  void lock_call(MachineState& s, const Instruction& insn, int delta, Effects* fx);
  void member_call(MachineState& s, const Instruction& insn, const std::vector<const Function*>& targets,
                   Effects* fx);
  void mark_null_guards(const Function& fn, const Cfg& cfg, Effects& fx) const;
  void note(Effects* fx, std::string msg) {
    if (fx) fx->diagnostics.push_back(std::move(msg));
  }

  const BinaryImage& image_;
  const Resolution& resolved_;
  AnalysisOpts opts_;
  DataStepConfig data_;
  std::vector<const Function*> stack_;
  std::map<std::pair<Address, MachineState>, RunResult> cache_;
};

const RunResult& MethodAnalyzer::run(const Function& fn, const MachineState& entry) {
  auto key = std::pair{fn.entry, entry};
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;

  stack_.push_back(&fn);
  RunResult result;
  Cfg cfg = build_cfg(fn);
  for (auto& d : cfg.diagnostics) result.fx.diagnostics.push_back(fn.name + ": " + d);
  auto fr = run_fixpoint(
      fn, cfg, entry, [this](MachineState& s, const Instruction& i, Effects* e) { step(s, i, e); },
      &result.fx);
  stack_.pop_back();

  max_updates = std::max(max_updates, fr.max_block_updates);
  result.exit = std::move(fr.exit);
  mark_null_guards(fn, cfg, result.fx);
  return cache_.emplace(std::move(key), std::move(result)).first->second;
}

void MethodAnalyzer::mark_null_guards(const Function& fn, const Cfg& cfg, Effects& fx) const {
  for (auto& acc : fx.accesses) {
    if (acc.kind != AccessKind::free || !fn.at(acc.site)) continue;
    BlockId free_block = *cfg.block_at(fn, acc.site);
    for (const auto& nt : fx.null_tests) {
      if (nt.path != acc.path || !fn.at(nt.site)) continue;
      BlockId b = *cfg.block_at(fn, nt.site);
      const auto& term = cfg.blocks[b].terminator;
      if (b == free_block || term.kind != Terminator::Kind::branch) continue;
      if (!dominates(cfg, b, free_block)) continue;
      int sides = 0;
      for (BlockId succ : cfg.successors[b]) sides += reaches(cfg, succ, free_block, b) ? 1 : 0;
      if (sides == 1) acc.null_guarded = true;
    }
  }
}

void MethodAnalyzer::step(MachineState& s, const Instruction& insn, Effects* fx) {
  if (insn.op == Mnemonic::call) {
    call(s, insn, fx);
  } else {
    step_data(s, insn, data_, fx);
  }
}

void MethodAnalyzer::lock_call(MachineState& s, const Instruction& insn, int delta, Effects* fx) {
  auto id = lock_id_of(s.reg(Reg::rcx), opts_.depth);
  if (!id) {
    note(fx, "lock call at " + hex(insn.address) + " on " + to_string(s.reg(Reg::rcx)) +
                 " has no lock identity; ignored");
    return;
  }
  if (delta > 0) acquired.insert(*id);
  int count = std::clamp(s.lock_count(*id) + delta, 0, opts_.lock_cap);
  if (count == 0) {
    s.locks.erase(*id);
  } else {
    s.locks[*id] = count;
  }
}

void MethodAnalyzer::call(MachineState& s, const Instruction& insn, Effects* fx) {
  const AbstractValue rcx = s.reg(Reg::rcx);
  auto target = insn.direct_target();
  if (target) {
    auto sym = symbol_at(image_, *target);
    SymbolTag tag = sym ? sym->tag : SymbolTag::plain;
    switch (tag) {
      case SymbolTag::lock_acquire:
      case SymbolTag::lock_release:
        lock_call(s, insn, tag == SymbolTag::lock_acquire ? 1 : -1, fx);
        s.clobber_volatile();
        return;
      case SymbolTag::free:
        if (const auto* f = std::get_if<FieldContents>(&rcx); f && f->disp == 0) {
          if (fx) fx->accesses.push_back(FieldAccess{"", f->path, AccessKind::free, s.lockset(), insn.address, std::nullopt, false});
        }
        s.clobber_volatile();
        return;
      case SymbolTag::alloc:
        s.clobber_volatile();
        s.set(Reg::rax, AllocFresh{insn.address});
        return;
      case SymbolTag::plain:
        break;
    }
    note_use(rcx, insn.address, fx);
    if (const Function* callee = image_.function_at_entry(*target)) {
      member_call(s, insn, {callee}, fx);
      return;
    }
    s.clobber_volatile();
    return;
  }

  note_use(rcx, insn.address, fx);
  if (auto it = resolved_.resolved.find(insn.address); it != resolved_.resolved.end()) {
    std::vector<const Function*> targets;
    for (const auto& c : it->second.candidates) targets.push_back(image_.function_at_entry(c.target));
    member_call(s, insn, targets, fx);
    return;
  }
  note(fx, "indirect call at " + hex(insn.address) + " unresolved; callee effects unknown");
  s.clobber_volatile();
}

void MethodAnalyzer::member_call(MachineState& s, const Instruction& insn,
                                 const std::vector<const Function*>& targets, Effects* fx) {
  const AbstractValue& rcx = s.reg(Reg::rcx);
  const bool is_this = rcx == AbstractValue{ThisDerived{0}};
  const auto* sub = std::get_if<FieldContents>(&rcx);
  const bool is_sub = opts_.deref_recursion && sub && sub->disp == 0;
  if (!is_this && !is_sub) {
    note(fx, "call at " + hex(insn.address) + " with rcx = " + to_string(rcx) + " not followed");
    s.clobber_volatile();
    return;
  }
  if (stack_.size() >= opts_.max_call_depth) {
    note(fx, "call at " + hex(insn.address) + " exceeds call depth " +
                 std::to_string(opts_.max_call_depth) + "; truncated");
    s.clobber_volatile();
    return;
  }

  MachineState callee_entry;
  callee_entry.regs = s.regs;
  callee_entry.locks = s.locks;

  std::optional<MachineState> joined;
  for (const Function* fn : targets) {
    auto on_stack = static_cast<int>(std::count(stack_.begin(), stack_.end(), fn));
    if (on_stack >= opts_.unroll) {
      note(fx, "recursive call to " + fn->name + " at " + hex(insn.address) + " cut");
      MachineState out = s;
      out.clobber_volatile();
      joined = joined ? merge_states(*joined, out) : out;
      continue;
    }
    const RunResult& r = run(*fn, callee_entry);
    if (fx) {
      Effects copy = r.fx;
      fx->append(std::move(copy));
    }
    if (!r.exit) continue;  // callee never returns
    MachineState out = s;
    out.clobber_volatile();
    out.locks = r.exit->locks;
    out.set(Reg::rax, r.exit->reg(Reg::rax));
    joined = joined ? merge_states(*joined, out) : out;
  }
  if (joined) {
    s = std::move(*joined);
  } else {
    s.clobber_volatile();
  }
}

std::vector<FieldAccess> dedupe(std::vector<FieldAccess> in, const std::string& method) {
  std::map<std::tuple<FieldPath, AccessKind, Address>, FieldAccess> merged;
  for (auto& a : in) {
    a.method = method;
    auto key = std::tuple{a.path, a.kind, a.site};
    auto [it, fresh] = merged.try_emplace(key, a);
    if (fresh) continue;
    Lockset common;
    std::set_intersection(it->second.lockset.begin(), it->second.lockset.end(), a.lockset.begin(),
                          a.lockset.end(), std::inserter(common, common.end()));
    it->second.lockset = std::move(common);
    it->second.null_guarded = it->second.null_guarded && a.null_guarded;
    if (it->second.stored_alloc != a.stored_alloc) it->second.stored_alloc.reset();
  }
  std::vector<FieldAccess> out;
  for (auto& [k, a] : merged) out.push_back(std::move(a));
  std::stable_sort(out.begin(), out.end(), [](const FieldAccess& x, const FieldAccess& y) {
    return std::tie(x.site, x.path, x.kind) < std::tie(y.site, y.path, y.kind);
  });
  return out;
}

}  // namespace

void transfer(MachineState& state, const Instruction& insn, const BinaryImage& image,
              const Resolution& resolved, const AnalysisOpts& opts, Effects* fx) {
  MethodAnalyzer analyzer(image, resolved, opts);
  analyzer.step(state, insn, fx);
}

MethodSummary analyze_method(const BinaryImage& image, std::string_view method,
                             const Resolution& resolved, const AnalysisOpts& opts) {
  const Function* fn = image.function(method);
  if (!fn) throw LookupError("no function named " + std::string(method));
  MethodAnalyzer analyzer(image, resolved, opts);
  const RunResult& r = analyzer.run(*fn, MachineState::method_entry());

  MethodSummary summary;
  summary.method = fn->name;
  summary.accesses = dedupe(r.fx.accesses, fn->name);
  summary.uses = r.fx.uses;
  std::sort(summary.uses.begin(), summary.uses.end());
  summary.uses.erase(std::unique(summary.uses.begin(), summary.uses.end()), summary.uses.end());
  summary.diagnostics = r.fx.diagnostics;
  std::sort(summary.diagnostics.begin(), summary.diagnostics.end());
  summary.diagnostics.erase(std::unique(summary.diagnostics.begin(), summary.diagnostics.end()),
                            summary.diagnostics.end());
  summary.max_block_updates = analyzer.max_updates;
  summary.acquired = analyzer.acquired;
  return summary;
}

}  // namespace comracer
