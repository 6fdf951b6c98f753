#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "comracer/report.hpp"

namespace comracer::test {

inline std::string fixture_path(std::string_view name) {
  return std::string(COMRACER_FIXTURES) + "/" + std::string(name);
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline BinaryImage load_fixture(std::string_view name) {
  BinaryImage image = parse_fixture(read_text(fixture_path(name)));
  image.apply_symbol_defaults(default_symbol_table());
  return image;
}

inline AnalysisResult run_fixture(std::string_view name, Mode mode, AnalysisOpts opts = {}) {
  return analyze_image(load_fixture(name), std::string(name), mode, opts);
}

inline const Function& function(const BinaryImage& image, std::string_view name) {
  const Function* f = image.function(name);
  if (!f) throw LookupError("fixture has no function " + std::string(name));
  return *f;
}

}  // namespace comracer::test
