#pragma once

// End-to-end pipeline (resolve, analyze, detect) and the JSON/Markdown
// interchange formats used by the command line tool.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "comracer/bench.hpp"
#include "comracer/oracle.hpp"
#include "comracer/race.hpp"

namespace comracer {

using Json = nlohmann::ordered_json;

enum class Mode : std::uint8_t { base, e4, e4e5 };

std::string_view mode_name(Mode m);
std::optional<Mode> parse_mode(std::string_view s);
/// `opts` with rr_filter/deref_recursion set from the mode.
AnalysisOpts with_mode(AnalysisOpts opts, Mode m);

using SymbolTable = std::map<std::string, SymbolTag, std::less<>>;

/// Windows API names for critical sections, SRW locks, mutex waits and the
/// C/C++ and COM allocators.
const SymbolTable& default_symbol_table();

struct AnalysisResult {
  std::string image;
  Mode mode = Mode::e4e5;
  Resolution resolution;
  std::vector<MethodSummary> summaries;
  std::vector<RaceReport> races;
  std::set<std::string> vulnerable;
};

/// Resolves virtual calls, analyzes every entry method and detects races.
AnalysisResult analyze_image(const BinaryImage& image, std::string name, Mode mode,
                             const AnalysisOpts& opts);

Json access_json(const FieldAccess& a);
Json summary_json(const MethodSummary& s);
Json report_json(const AnalysisResult& r, bool with_summaries = false);
std::string report_markdown(const AnalysisResult& r);
Json resolution_json(const Resolution& r);

Scenario scenario_from_json(const Json& j);
Json scenario_json(const Scenario& s);
Json verdict_json(const Scenario& s, const Verdict& v);

std::vector<CaseLabel> corpus_from_json(const Json& j);

struct PredictionRun {
  std::string run_id;
  /// Ablation configuration the run was produced with; empty if unlabeled.
  std::string mode;
  std::vector<Prediction> cases;
};
std::vector<PredictionRun> predictions_from_json(const Json& j);
Json predictions_json(const std::vector<PredictionRun>& runs);

struct BenchGroup {
  std::string mode;  // "all" for unlabeled runs
  std::size_t runs_used = 0;
  Metrics metrics;
};

/// Groups runs by mode (base, e4, e4e5 first, in that order), keeps the first
/// `best_of` runs of each group and selects per-case maxima.
std::vector<BenchGroup> run_bench(const std::vector<CaseLabel>& corpus,
                                  const std::vector<PredictionRun>& runs, std::size_t best_of);
Json bench_json(const std::vector<BenchGroup>& groups);
std::string bench_markdown(const std::vector<CaseLabel>& corpus, const std::vector<BenchGroup>& groups);

}  // namespace comracer
