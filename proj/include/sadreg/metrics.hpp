// Relative target registration error (rTRE) and robustness.
//
// Conventions: rTRE is 100 * euclidean error / diagonal of the fixed image. A pair's
// robustness is the fraction of landmarks whose final rTRE is strictly below their
// initial rTRE. A corpus is summarized by the median of per-pair median rTRE and the
// mean of per-pair robustness.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "sadreg/registration.hpp"

namespace sadreg::metrics {

using reg::Point;

double rtre(Point estimated, Point target, std::size_t height, std::size_t width);

double median(std::vector<double> values);

struct PairEvaluation {
    std::string pair_id;
    std::vector<double> rtre_initial;
    std::vector<double> rtre_final;
    double median_initial = 0.0;
    double median_final = 0.0;
    double robustness = 0.0;
};

// Scores landmarks already mapped into the fixed frame.
PairEvaluation evaluate_landmarks(const std::vector<Point> &initial, const std::vector<Point> &final,
                                  const std::vector<Point> &target, std::size_t height, std::size_t width);

// landmarks_b are moved by transform_landmarks(field, .) and compared with landmarks_a.
PairEvaluation evaluate_pair(const std::vector<Point> &landmarks_a, const std::vector<Point> &landmarks_b,
                             const reg::DisplacementField &field);

struct CorpusReport {
    std::size_t pairs = 0;
    double median_rtre_initial = 0.0;
    double median_rtre_final = 0.0;
    double robustness = 0.0;
};

CorpusReport evaluate_corpus(std::span<const PairEvaluation> evals);

inline constexpr int kReportSchemaVersion = 1;

std::string pairs_csv(std::span<const PairEvaluation> evals);
// JSON object with schema_version, pairs, median_rtre_initial, median_rtre_final, robustness.
std::string summary_json(const CorpusReport &report);

} // namespace sadreg::metrics
