#pragma once

#include "trellis/errors.hpp"
#include "trellis/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

// Sample selection: reward-variance prioritization over preliminary
// rollouts, difficulty filtering, and stratified per-subject-per-grade
// quota allocation.

namespace trellis::selection {

struct CellCount {
    Subject subject = Subject::Math;
    int grade = kGradeMin;
    long long count = 0;  // concepts in this (subject, grade) cell
};

struct SelectionReport {
    std::string problem_id;
    double variance = 0.0;
    double mean_reward = 0.0;
    bool prioritized = false;
};

struct MeanVariance {
    double mean = 0.0;
    double variance = 0.0;
};

// Population mean/variance of the per-solution aggregates, where a
// solution's aggregate is the mean of its step scores.
inline MeanVariance reward_variance(const std::vector<std::vector<double>>& step_scores_per_solution) {
    if (step_scores_per_solution.size() < 2)
        throw InsufficientSamples("reward_variance needs at least 2 solutions, got " +
                                  std::to_string(step_scores_per_solution.size()));
    std::vector<double> aggregates;
    aggregates.reserve(step_scores_per_solution.size());
    for (const auto& scores : step_scores_per_solution) {
        if (scores.empty())
            throw std::invalid_argument("reward_variance: a solution has no step scores");
        double sum = 0.0;
        for (double s : scores) sum += s;
        aggregates.push_back(sum / static_cast<double>(scores.size()));
    }
    double mean = 0.0;
    for (double a : aggregates) mean += a;
    mean /= static_cast<double>(aggregates.size());
    double var = 0.0;
    for (double a : aggregates) var += (a - mean) * (a - mean);
    var /= static_cast<double>(aggregates.size());
    return MeanVariance{mean, var};
}

// Ids of the top ceil(top_fraction * n) reports by variance, descending;
// equal variances order by id.
inline std::vector<std::string> select_samples(const std::vector<SelectionReport>& reports,
                                               double top_fraction) {
    if (reports.empty()) throw std::invalid_argument("select_samples: reports must be non-empty");
    if (top_fraction <= 0.0 || top_fraction > 1.0)
        throw std::invalid_argument("top_fraction must be in (0,1]");
    std::vector<const SelectionReport*> order;
    order.reserve(reports.size());
    for (const auto& r : reports) order.push_back(&r);
    std::stable_sort(order.begin(), order.end(),
                     [](const SelectionReport* a, const SelectionReport* b) {
                         if (a->variance != b->variance) return a->variance > b->variance;
                         return a->problem_id < b->problem_id;
                     });
    const auto take = static_cast<std::size_t>(
        std::ceil(top_fraction * static_cast<double>(reports.size())));
    std::vector<std::string> ids;
    ids.reserve(take);
    for (std::size_t i = 0; i < take && i < order.size(); ++i) ids.push_back(order[i]->problem_id);
    return ids;
}

// ---------------------------------------------------------------------------
// Stratified quotas
// ---------------------------------------------------------------------------

using QuotaKey = std::pair<Subject, int>;  // (subject, grade)

// Allocate `total` slots across cells proportionally to their counts.
// Each cell's weight is w = count/sum * total; the base quota is w rounded
// half-to-even, and the residual versus `total` is settled on fractional
// remainders: shortfall goes to the rounded-down cells with the largest
// remainders, surplus comes back from the rounded-up cells with the
// smallest. Quotas sum to total exactly and each stays within 1 of its
// weight.
inline std::map<QuotaKey, long long> stratified_quotas(const std::vector<CellCount>& counts,
                                                       long long total) {
    if (total < 1) throw std::invalid_argument("stratified_quotas: total must be positive");
    std::map<QuotaKey, long long> merged;
    long long grand = 0;
    for (const auto& c : counts) {
        if (c.count < 0) throw std::invalid_argument("stratified_quotas: negative cell count");
        if (c.grade < kGradeMin || c.grade > kGradeMax)
            throw std::invalid_argument("stratified_quotas: grade out of range");
        merged[{c.subject, c.grade}] += c.count;
        grand += c.count;
    }
    if (grand == 0) throw EmptyCorpus("stratified_quotas: all cell counts are zero");

    struct Cell {
        QuotaKey key;
        long long quota;
        double remainder;  // weight - floor(weight)
        bool rounded_up;
    };
    std::vector<Cell> cells;
    cells.reserve(merged.size());
    long long assigned = 0;
    for (const auto& [key, count] : merged) {
        const double w = static_cast<double>(count) / static_cast<double>(grand) *
                         static_cast<double>(total);
        const auto base = static_cast<long long>(std::nearbyint(w));  // half-to-even
        cells.push_back(Cell{key, base, w - std::floor(w), static_cast<double>(base) > w});
        assigned += base;
    }

    long long residual = total - assigned;
    if (residual > 0) {
        // Give to rounded-down cells, largest remainders first.
        std::vector<Cell*> order;
        for (auto& c : cells)
            if (!c.rounded_up) order.push_back(&c);
        std::stable_sort(order.begin(), order.end(), [](const Cell* a, const Cell* b) {
            if (a->remainder != b->remainder) return a->remainder > b->remainder;
            return a->key < b->key;
        });
        for (std::size_t i = 0; i < order.size() && residual > 0; ++i, --residual)
            order[i]->quota += 1;
    } else if (residual < 0) {
        // Take back from rounded-up cells, smallest remainders first.
        std::vector<Cell*> order;
        for (auto& c : cells)
            if (c.rounded_up) order.push_back(&c);
        std::stable_sort(order.begin(), order.end(), [](const Cell* a, const Cell* b) {
            if (a->remainder != b->remainder) return a->remainder < b->remainder;
            return a->key < b->key;
        });
        for (std::size_t i = 0; i < order.size() && residual < 0; ++i, ++residual)
            order[i]->quota -= 1;
    }
    if (residual != 0)
        throw std::logic_error("stratified_quotas: residual not settled: " +
                               std::to_string(residual));

    std::map<QuotaKey, long long> quotas;
    for (const auto& c : cells) quotas[c.key] = c.quota;
    return quotas;
}

// ---------------------------------------------------------------------------
// Difficulty filter
// ---------------------------------------------------------------------------

struct ProblemStats {
    std::string problem_id;
    double model_accuracy = 0.0;
    bool text_only_solvable = false;
};

// Drop problems a model already solves more than 70% of the time, and
// problems solvable without their images.
inline std::vector<std::string> difficulty_filter(const std::vector<ProblemStats>& stats,
                                                  double accuracy_ceiling = 0.70) {
    std::vector<std::string> retained;
    for (const auto& s : stats) {
        if (s.model_accuracy < 0.0 || s.model_accuracy > 1.0)
            throw std::invalid_argument("difficulty_filter: accuracy out of [0,1] for " +
                                        s.problem_id);
        if (s.model_accuracy <= accuracy_ceiling && !s.text_only_solvable)
            retained.push_back(s.problem_id);
    }
    return retained;
}

} // namespace trellis::selection
