#include "sadreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace sadreg::metrics {

double rtre(Point estimated, Point target, std::size_t height, std::size_t width) {
    const double diag = std::hypot(static_cast<double>(height), static_cast<double>(width));
    return 100.0 * std::hypot(estimated.x - target.x, estimated.y - target.y) / diag;
}

double median(std::vector<double> values) {
    if (values.empty()) {
        throw std::invalid_argument("median of an empty set");
    }
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

PairEvaluation evaluate_landmarks(const std::vector<Point> &initial, const std::vector<Point> &final,
                                  const std::vector<Point> &target, std::size_t height, std::size_t width) {
    if (initial.size() != target.size() || final.size() != target.size()) {
        throw std::invalid_argument("landmark count mismatch: " + std::to_string(initial.size()) + " / " +
                                    std::to_string(final.size()) + " vs " + std::to_string(target.size()));
    }
    if (target.empty()) {
        throw std::invalid_argument("no landmarks to evaluate");
    }
    PairEvaluation e;
    std::size_t improved = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        e.rtre_initial.push_back(rtre(initial[i], target[i], height, width));
        e.rtre_final.push_back(rtre(final[i], target[i], height, width));
        improved += e.rtre_final.back() < e.rtre_initial.back() ? 1 : 0;
    }
    e.median_initial = median(e.rtre_initial);
    e.median_final = median(e.rtre_final);
    e.robustness = static_cast<double>(improved) / static_cast<double>(target.size());
    return e;
}

PairEvaluation evaluate_pair(const std::vector<Point> &landmarks_a, const std::vector<Point> &landmarks_b,
                             const reg::DisplacementField &field) {
    if (landmarks_a.size() != landmarks_b.size()) {
        throw std::invalid_argument("mismatched landmark counts: " + std::to_string(landmarks_a.size()) + " vs " +
                                    std::to_string(landmarks_b.size()));
    }
    const auto moved = reg::transform_landmarks(field, landmarks_b);
    return evaluate_landmarks(landmarks_b, moved.points, landmarks_a, field.height(), field.width());
}

CorpusReport evaluate_corpus(std::span<const PairEvaluation> evals) {
    if (evals.empty()) {
        throw std::invalid_argument("evaluate_corpus: empty corpus");
    }
    std::vector<double> initial, final;
    double robustness = 0.0;
    for (const auto &e : evals) {
        initial.push_back(e.median_initial);
        final.push_back(e.median_final);
        robustness += e.robustness;
    }
    CorpusReport r;
    r.pairs = evals.size();
    r.median_rtre_initial = median(std::move(initial));
    r.median_rtre_final = median(std::move(final));
    r.robustness = robustness / static_cast<double>(evals.size());
    return r;
}

std::string pairs_csv(std::span<const PairEvaluation> evals) {
    std::string out = "pair_id,landmarks,median_rtre_initial,median_rtre_final,robustness\n";
    char buf[160];
    for (const auto &e : evals) {
        std::snprintf(buf, sizeof buf, ",%zu,%.17g,%.17g,%.17g\n", e.rtre_initial.size(), e.median_initial,
                      e.median_final, e.robustness);
        out += e.pair_id + buf;
    }
    return out;
}

std::string summary_json(const CorpusReport &report) {
    nlohmann::ordered_json j;
    j["schema_version"] = kReportSchemaVersion;
    j["pairs"] = report.pairs;
    j["median_rtre_initial"] = report.median_rtre_initial;
    j["median_rtre_final"] = report.median_rtre_final;
    j["robustness"] = report.robustness;
    return j.dump(2) + "\n";
}

} // namespace sadreg::metrics
