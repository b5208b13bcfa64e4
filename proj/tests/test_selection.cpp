#include <catch2/catch_amalgamated.hpp>

#include <trellis/selection.hpp>

#include "support/helpers.hpp"

#include <algorithm>
#include <cmath>
#include <map>

using namespace trellis;
using namespace trellis::selection;

namespace {

// Independent largest-remainder oracle: floor every weight, then hand the
// residual to the largest fractional remainders (ties by key).
std::map<QuotaKey, long long> hamilton_oracle(const std::vector<CellCount>& counts,
                                              long long total) {
    std::map<QuotaKey, long long> merged;
    long long grand = 0;
    for (const auto& c : counts) {
        merged[{c.subject, c.grade}] += c.count;
        grand += c.count;
    }
    struct Cell {
        QuotaKey key;
        double weight;
        long long quota;
        double remainder;
    };
    std::vector<Cell> cells;
    long long assigned = 0;
    for (const auto& [key, count] : merged) {
        const double w = static_cast<double>(count) / static_cast<double>(grand) *
                         static_cast<double>(total);
        const auto fl = static_cast<long long>(std::floor(w));
        cells.push_back(Cell{key, w, fl, w - std::floor(w)});
        assigned += fl;
    }
    std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
        if (a.remainder != b.remainder) return a.remainder > b.remainder;
        return a.key < b.key;
    });
    for (long long i = 0; i < total - assigned; ++i) cells[static_cast<std::size_t>(i)].quota += 1;
    std::map<QuotaKey, long long> out;
    for (const auto& c : cells) out[c.key] = c.quota;
    return out;
}

std::vector<CellCount> random_counts(std::uint64_t seed, long long max_count = 10000) {
    std::vector<CellCount> counts;
    for (Subject s : kAllSubjects)
        for (int g = kGradeMin; g <= kGradeMax; ++g) {
            const std::uint64_t h = rng::combine(rng::combine(seed, static_cast<std::uint64_t>(s)),
                                                 static_cast<std::uint64_t>(g));
            counts.push_back(CellCount{s, g, static_cast<long long>(rng::mix(h) % (max_count + 1))});
        }
    if (std::all_of(counts.begin(), counts.end(), [](const CellCount& c) { return c.count == 0; }))
        counts[0].count = 1;
    return counts;
}

bool has_half_remainder(const std::vector<CellCount>& counts, long long total) {
    long long grand = 0;
    for (const auto& c : counts) grand += c.count;
    for (const auto& c : counts) {
        const double w = static_cast<double>(c.count) / static_cast<double>(grand) *
                         static_cast<double>(total);
        if (std::abs(w - std::floor(w) - 0.5) < 1e-9) return true;
    }
    return false;
}

} // namespace

TEST_CASE("reward_variance aggregates per solution then takes population stats") {
    SECTION("constant aggregates have zero variance") {
        const auto mv = reward_variance({{0.5}, {0.4, 0.6}, {0.5, 0.5, 0.5}});
        CHECK_THAT(mv.mean, Catch::Matchers::WithinAbs(0.5, 1e-15));
        CHECK_THAT(mv.variance, Catch::Matchers::WithinAbs(0.0, 1e-15));
    }
    SECTION("two-point population variance") {
        const auto mv = reward_variance({{0.0}, {1.0}});
        CHECK(mv.mean == 0.5);
        CHECK(mv.variance == 0.25);
    }
    SECTION("matches a textbook recompute on scripted solutions") {
        std::vector<std::vector<double>> solutions;
        for (std::uint64_t s = 0; s < 5; ++s) {
            std::vector<double> scores;
            for (std::uint64_t i = 0; i < 3 + s; ++i) scores.push_back(rng::u01(rng::draw(s, i)));
            solutions.push_back(std::move(scores));
        }
        std::vector<double> aggregates;
        for (const auto& sol : solutions) {
            double sum = 0.0;
            for (double x : sol) sum += x;
            aggregates.push_back(sum / static_cast<double>(sol.size()));
        }
        double mean = 0.0;
        for (double a : aggregates) mean += a;
        mean /= 5.0;
        double var = 0.0;
        for (double a : aggregates) var += (a - mean) * (a - mean);
        var /= 5.0;

        const auto mv = reward_variance(solutions);
        CHECK_THAT(mv.mean, Catch::Matchers::WithinAbs(mean, 1e-12));
        CHECK_THAT(mv.variance, Catch::Matchers::WithinAbs(var, 1e-12));
        CHECK(mv.variance >= 0.0);
    }
    SECTION("fewer than two solutions is an error") {
        CHECK_THROWS_AS(reward_variance({{0.5}}), InsufficientSamples);
        CHECK_THROWS_AS(reward_variance({}), InsufficientSamples);
    }
    SECTION("a solution with no scores is invalid") {
        CHECK_THROWS_AS(reward_variance({{0.5}, {}}), std::invalid_argument);
    }
}

TEST_CASE("select_samples ranks by variance with lexicographic ties") {
    SECTION("full selection returns every id, variance-sorted") {
        std::vector<SelectionReport> reports{{"b", 0.1, 0.5, false},
                                             {"a", 0.3, 0.5, false},
                                             {"c", 0.2, 0.5, false}};
        CHECK(select_samples(reports, 1.0) == std::vector<std::string>{"a", "c", "b"});
    }
    SECTION("top third picks the argmax") {
        std::vector<SelectionReport> reports{{"a", 0.3, 0.5, false},
                                             {"b", 0.1, 0.5, false},
                                             {"c", 0.2, 0.5, false}};
        CHECK(select_samples(reports, 1.0 / 3.0) == std::vector<std::string>{"a"});
    }
    SECTION("equal variances order by id") {
        std::vector<SelectionReport> reports{{"z", 0.2, 0.5, false},
                                             {"m", 0.2, 0.5, false},
                                             {"a", 0.2, 0.5, false}};
        CHECK(select_samples(reports, 1.0) == std::vector<std::string>{"a", "m", "z"});
    }
    SECTION("matches an independent sort-then-slice oracle on 100 random reports") {
        std::vector<SelectionReport> reports;
        for (int i = 0; i < 100; ++i)
            reports.push_back(SelectionReport{"p" + std::to_string(i),
                                              rng::u01(rng::draw(55, static_cast<std::uint64_t>(i))),
                                              0.5, false});
        auto sorted = reports;
        std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
            if (a.variance != b.variance) return a.variance > b.variance;
            return a.problem_id < b.problem_id;
        });
        std::vector<std::string> expected;
        for (std::size_t i = 0; i < 25; ++i) expected.push_back(sorted[i].problem_id);
        CHECK(select_samples(reports, 0.25) == expected);
    }
    SECTION("ceil rounds partial counts up") {
        std::vector<SelectionReport> reports{{"a", 0.3, 0.5, false}, {"b", 0.1, 0.5, false}};
        CHECK(select_samples(reports, 0.6).size() == 2);  // ceil(1.2)
    }
    SECTION("bad inputs") {
        CHECK_THROWS_AS(select_samples({}, 0.5), std::invalid_argument);
        std::vector<SelectionReport> one{{"a", 0.1, 0.5, false}};
        CHECK_THROWS_AS(select_samples(one, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(select_samples(one, 1.5), std::invalid_argument);
    }
}

TEST_CASE("stratified quotas split proportionally and sum exactly") {
    SECTION("two equal cells share evenly") {
        std::vector<CellCount> counts{{Subject::Math, 7, 40}, {Subject::Physics, 8, 40}};
        const auto q = stratified_quotas(counts, 10);
        CHECK(q.at({Subject::Math, 7}) == 5);
        CHECK(q.at({Subject::Physics, 8}) == 5);
    }
    SECTION("exact proportionality needs no redistribution") {
        std::vector<CellCount> counts{{Subject::Math, 7, 30}, {Subject::Biology, 9, 10}};
        const auto q = stratified_quotas(counts, 4);
        CHECK(q.at({Subject::Math, 7}) == 3);
        CHECK(q.at({Subject::Biology, 9}) == 1);
    }
    SECTION("duplicate cells merge before allocation") {
        std::vector<CellCount> counts{{Subject::Math, 7, 10}, {Subject::Math, 7, 20},
                                      {Subject::Biology, 9, 10}};
        const auto q = stratified_quotas(counts, 4);
        CHECK(q.at({Subject::Math, 7}) == 3);
        CHECK(q.size() == 2);
    }
    SECTION("all-zero counts raise EmptyCorpus") {
        std::vector<CellCount> counts{{Subject::Math, 7, 0}, {Subject::Biology, 9, 0}};
        CHECK_THROWS_AS(stratified_quotas(counts, 10), EmptyCorpus);
    }
    SECTION("random tables: exact sum, each within 1 of its weight, oracle equality") {
        const long long total = 160000;
        for (std::uint64_t trial = 0; trial < 120; ++trial) {
            const auto counts = random_counts(rng::draw(313, trial));
            const auto quotas = stratified_quotas(counts, total);

            long long grand = 0;
            for (const auto& c : counts) grand += c.count;
            long long sum = 0;
            for (const auto& [key, quota] : quotas) sum += quota;
            REQUIRE(sum == total);

            std::map<QuotaKey, long long> merged;
            for (const auto& c : counts) merged[{c.subject, c.grade}] += c.count;
            for (const auto& [key, quota] : quotas) {
                const double w = static_cast<double>(merged.at(key)) /
                                 static_cast<double>(grand) * static_cast<double>(total);
                CAPTURE(trial, w, quota);
                REQUIRE(std::abs(static_cast<double>(quota) - w) <= 1.0 + 1e-9);
            }
            // Half-remainder ties are the one place the two formulations may
            // legitimately pick different (equally valid) cells.
            if (!has_half_remainder(counts, total))
                REQUIRE(quotas == hamilton_oracle(counts, total));
        }
    }
    SECTION("growing one cell never shrinks its quota") {
        for (std::uint64_t trial = 0; trial < 60; ++trial) {
            auto counts = random_counts(rng::draw(777, trial), 500);
            const std::size_t target = rng::mix(trial) % counts.size();
            const long long total = 1000;
            const auto before = stratified_quotas(counts, total);
            const QuotaKey key{counts[target].subject, counts[target].grade};
            counts[target].count += 1 + static_cast<long long>(rng::mix(trial ^ 5) % 50);
            const auto after = stratified_quotas(counts, total);
            CAPTURE(trial);
            REQUIRE(after.at(key) >= before.at(key));
        }
    }
}

TEST_CASE("difficulty filter drops the easy and the image-free-solvable") {
    std::vector<ProblemStats> stats{
        {"too-easy", 0.71, false},    // strictly above the ceiling: removed
        {"boundary", 0.70, false},    // at the ceiling: retained
        {"text-only", 0.10, true},    // solvable without the image: removed
        {"keeper", 0.55, false},
    };
    const auto retained = difficulty_filter(stats);
    CHECK(retained == std::vector<std::string>{"boundary", "keeper"});

    CHECK_THROWS_AS(difficulty_filter({{"bad", 1.2, false}}), std::invalid_argument);
}
