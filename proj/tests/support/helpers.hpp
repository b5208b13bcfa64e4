#pragma once

#include <trellis/rng.hpp>
#include <trellis/types.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

// Shared test utilities: seeded generators for domain values and a scratch
// directory guard.

namespace testutil {

using namespace trellis;

inline ActionKind random_action(std::uint64_t h) {
    return kAllActions[rng::mix(h) % kAllActions.size()];
}

inline StepLabel random_label(std::uint64_t h) {
    return kAllStepLabels[rng::mix(h) % kAllStepLabels.size()];
}

inline std::string random_word(std::uint64_t h) {
    static const char* kWords[] = {"area",   "angle", "force",  "cell",   "ion",
                                   "slope",  "ratio", "volume", "vector", "graph"};
    return kWords[rng::mix(h) % 10] + std::to_string(rng::mix(h ^ 0xabc) % 100);
}

inline ReasoningStep random_step(std::uint64_t h) {
    return ReasoningStep{random_action(h), random_word(h ^ 1) + " " + random_word(h ^ 2),
                         "actor-" + std::to_string(rng::mix(h ^ 3) % 4)};
}

inline std::vector<ReasoningStep> random_steps(std::uint64_t seed, std::size_t count) {
    std::vector<ReasoningStep> steps;
    for (std::size_t i = 0; i < count; ++i) steps.push_back(random_step(rng::draw(seed, i)));
    return steps;
}

inline Problem sample_problem(const std::string& id = "p1") {
    Problem p;
    p.id = id;
    p.statement = "What is the area of the shaded region?";
    p.image_refs = {"asset://fig-" + id};
    p.subject = Subject::Math;
    p.grade = 9;
    p.concept_ids = {"geometry.area"};
    p.ground_truth = "12";
    return p;
}

// Creates a unique scratch directory under the system temp dir and removes
// it on destruction.
struct ScratchDir {
    std::filesystem::path path;

    explicit ScratchDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("trellis-test-" + tag + "-" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

} // namespace testutil
