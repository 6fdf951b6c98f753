#include "comracer/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "comracer/report.hpp"

namespace comracer {

namespace {

struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

struct RunConfig {
  std::string mode = "e4e5";
  bool ww_self = true;
  int lock_cap = 16;
  int depth = 2;
  std::string format = "json";
  SymbolTable symbols = default_symbol_table();
};

/// Fills `cfg` from a config file; command line flags are applied afterwards.
void load_config(const std::string& path, RunConfig& cfg) {
  Json j = read_json(path);
  if (!j.is_object()) throw InputError(path + ": config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "mode") {
      cfg.mode = value.get<std::string>();
    } else if (key == "ww_self") {
      cfg.ww_self = value.get<bool>();
    } else if (key == "lock_cap") {
      cfg.lock_cap = value.get<int>();
    } else if (key == "depth") {
      cfg.depth = value.get<int>();
    } else if (key == "format") {
      cfg.format = value.get<std::string>();
    } else if (key == "symbols") {
      for (const auto& [name, tag] : value.items()) {
        auto t = parse_tag(tag.get<std::string>());
        if (!t) throw InputError(path + ": unknown tag '" + tag.get<std::string>() + "' for " + name);
        cfg.symbols[name] = *t;
      }
    } else {
      throw InputError(path + ": unknown config key '" + key + "'");
    }
  }
}

Mode checked_mode(const RunConfig& cfg) {
  auto m = parse_mode(cfg.mode);
  if (!m) throw InputError("unknown mode '" + cfg.mode + "' (base, e4, e4e5)");
  if (cfg.lock_cap < 1) throw InputError("lock cap must be at least 1");
  if (cfg.depth < 1) throw InputError("depth must be at least 1");
  if (cfg.format != "json" && cfg.format != "md") throw InputError("format must be json or md");
  return *m;
}

AnalysisOpts opts_of(const RunConfig& cfg) {
  AnalysisOpts o;
  o.ww_self = cfg.ww_self;
  o.lock_cap = cfg.lock_cap;
  o.depth = static_cast<std::size_t>(cfg.depth);
  return o;
}

BinaryImage load_image(const std::string& path, const SymbolTable& symbols) {
  std::string text = read_file(path);
  try {
    BinaryImage image = parse_fixture(text);
    image.apply_symbol_defaults(symbols);
    return image;
  } catch (const ParseError& e) {
    throw InputError(path + ":" + std::to_string(e.line()) + ":" + std::to_string(e.column()) + ": " +
                     e.what());
  }
}

std::string stem(const std::string& path) { return std::filesystem::path(path).stem().string(); }

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Race-induced use-after-free and double-free detection for COM-style binaries",
               "comracer"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;
  std::optional<bool> ww_flag;
  std::string mode_flag, format_flag;
  int lock_cap_flag = 0, depth_flag = 0;

  auto add_analysis_flags = [&](CLI::App* sub) {
    sub->add_option("--mode", mode_flag, "base | e4 | e4e5 (default e4e5)");
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--lock-cap", lock_cap_flag, "lock count cap");
    sub->add_option("--depth", depth_flag, "maximum field path depth");
    sub->add_flag_callback("--ww-self", [&] { ww_flag = true; }, "report lone unguarded writes (default)");
    sub->add_flag_callback("--no-ww-self", [&] { ww_flag = false; }, "do not report lone writes");
  };
  auto finish_config = [&] {
    if (!config_path.empty()) load_config(config_path, cfg);
    if (!mode_flag.empty()) cfg.mode = mode_flag;
    if (!format_flag.empty()) cfg.format = format_flag;
    if (ww_flag) cfg.ww_self = *ww_flag;
    if (lock_cap_flag != 0) cfg.lock_cap = lock_cap_flag;
    if (depth_flag != 0) cfg.depth = depth_flag;
    return checked_mode(cfg);
  };

  std::string fixture, dot_path;
  bool with_summaries = false;
  auto* analyze = app.add_subcommand("analyze", "detect races in a fixture image");
  analyze->add_option("fixture", fixture, "fixture file")->required();
  add_analysis_flags(analyze);
  analyze->add_option("--format", format_flag, "json | md");
  analyze->add_option("--dot", dot_path, "write the control-flow graphs as DOT");
  analyze->add_flag("--summaries", with_summaries, "include per-method access summaries");

  std::string scenario_path;
  auto* oracle = app.add_subcommand("oracle", "enumerate interleavings of a scenario");
  oracle->add_option("scenario", scenario_path, "scenario JSON")->required();

  std::string corpus_path, preds_path;
  std::size_t best_of = 3;
  auto* bench = app.add_subcommand("bench", "score predictions against a labeled corpus");
  bench->add_option("corpus", corpus_path, "corpus JSON")->required();
  bench->add_option("predictions", preds_path, "predictions JSON")->required();
  bench->add_option("--best-of", best_of, "runs per configuration to select from (default 3)");
  bench->add_option("--format", format_flag, "json | md");

  auto* resolve = app.add_subcommand("resolve", "resolve virtual calls in a fixture image");
  resolve->add_option("fixture", fixture, "fixture file")->required();
  resolve->add_option("--config", config_path, "JSON config file");

  std::vector<std::string> fixtures;
  std::string run_id = "run0";
  auto* predict = app.add_subcommand("predict", "analyze fixtures and emit a predictions run");
  predict->add_option("fixtures", fixtures, "fixture files; case ids are file stems")->required();
  add_analysis_flags(predict);
  predict->add_option("--run-id", run_id, "run id (default run0)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? 0 : 1;
  }

  try {
    if (analyze->parsed()) {
      Mode mode = finish_config();
      BinaryImage image = load_image(fixture, cfg.symbols);
      auto result = analyze_image(image, stem(fixture), mode, opts_of(cfg));
      if (!dot_path.empty()) {
        std::ofstream dot(dot_path);
        if (!dot) throw InputError("cannot write " + dot_path);
        dot << "digraph comracer {\n";
        for (const auto& fn : image.functions()) dot << to_dot(build_cfg(fn), fn);
        dot << "}\n";
      }
      if (cfg.format == "md") {
        out << report_markdown(result);
      } else {
        out << report_json(result, with_summaries).dump(2) << "\n";
      }
    } else if (oracle->parsed()) {
      Scenario sc = scenario_from_json(read_json(scenario_path));
      out << verdict_json(sc, enumerate(sc)).dump(2) << "\n";
    } else if (bench->parsed()) {
      if (!format_flag.empty()) cfg.format = format_flag;
      if (cfg.format != "json" && cfg.format != "md") throw InputError("format must be json or md");
      auto corpus = corpus_from_json(read_json(corpus_path));
      auto groups = run_bench(corpus, predictions_from_json(read_json(preds_path)), best_of);
      if (cfg.format == "md") {
        out << bench_markdown(corpus, groups);
      } else {
        out << bench_json(groups).dump(2) << "\n";
      }
    } else if (resolve->parsed()) {
      if (!config_path.empty()) load_config(config_path, cfg);
      BinaryImage image = load_image(fixture, cfg.symbols);
      out << resolution_json(recover_virtual_calls(image)).dump(2) << "\n";
    } else if (predict->parsed()) {
      Mode mode = finish_config();
      PredictionRun run{run_id, std::string(mode_name(mode)), {}};
      for (const auto& f : fixtures) {
        auto result = analyze_image(load_image(f, cfg.symbols), stem(f), mode, opts_of(cfg));
        run.cases.push_back(Prediction{stem(f), {result.vulnerable.begin(), result.vulnerable.end()}});
      }
      out << predictions_json({run}).dump(2) << "\n";
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const Json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace comracer
