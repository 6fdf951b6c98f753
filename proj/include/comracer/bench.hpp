#pragma once

// Scoring of predicted vulnerable entry functions against labeled cases.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/rational.hpp>

namespace comracer {

using Ratio = boost::rational<std::int64_t>;

struct CaseLabel {
  std::string case_id;
  std::vector<std::string> entry_functions;
  std::vector<std::string> vulnerable;
};

struct Prediction {
  std::string case_id;
  std::vector<std::string> predicted;
};

struct CaseScore {
  std::string case_id;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  Ratio precision;
  Ratio recall;
  Ratio f1;
};

struct Metrics {
  std::vector<CaseScore> per_case;
  Ratio macro_f1;
  Ratio micro_precision;
  Ratio micro_recall;
  Ratio micro_f1;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
};

class BenchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// P/R/F1 over name sets. Empty truth and empty prediction score (1,1,1); no
/// true positive scores 0 everywhere.
CaseScore score_case(const CaseLabel& label, const Prediction& prediction);

Metrics aggregate(const std::vector<CaseScore>& cases);

/// Per case, the score of the run with the highest F1 (ties: earliest run).
std::vector<CaseScore> best_of_k(const std::vector<std::vector<CaseScore>>& runs);

/// Scores one run of predictions against a corpus, in corpus order. Cases
/// missing from the run count as empty predictions.
std::vector<CaseScore> score_run(const std::vector<CaseLabel>& corpus,
                                 const std::vector<Prediction>& run);

double to_double(const Ratio& r);
/// Rounded to 3 decimals, e.g. "0.444".
std::string fixed3(const Ratio& r);

}  // namespace comracer
