#pragma once

#include "trellis/canonical.hpp"
#include "trellis/digest.hpp"
#include "trellis/gateway.hpp"
#include "trellis/json_codec.hpp"
#include "trellis/jsonl.hpp"
#include "trellis/log.hpp"
#include "trellis/prompts.hpp"
#include "trellis/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

// Trajectory post-filtering and training-data construction: the two-stage
// quality gate, self-consistency and rejection sampling, error injection,
// dialogue critique, QC filters and curriculum export.

namespace trellis::datagen {

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

enum class RecordFormat { Stepwise, Critique };
enum class RecordSource { MctsPath, ErrorInjection, Dialogue };
enum class CurriculumStage { Stage1Stepwise, Stage2Critique };

inline std::string_view to_string(RecordFormat f) {
    return f == RecordFormat::Stepwise ? "stepwise" : "critique";
}
inline std::string_view to_string(RecordSource s) {
    switch (s) {
        case RecordSource::MctsPath: return "mcts_path";
        case RecordSource::ErrorInjection: return "error_injection";
        case RecordSource::Dialogue: return "dialogue";
    }
    return "?";
}
inline std::string_view to_string(CurriculumStage s) {
    return s == CurriculumStage::Stage1Stepwise ? "stage1_stepwise" : "stage2_critique";
}

// One exportable training example. `step_texts` is the underlying step
// sequence (pre-segmented for the stepwise format, decomposed from the full
// answer for the critique format); `steps` are the annotation quadruples,
// one per step text.
struct DatasetRecord {
    std::string problem_id;
    RecordFormat format = RecordFormat::Stepwise;
    std::vector<std::string> step_texts;
    std::vector<StepCritique> steps;
    RecordSource source = RecordSource::MctsPath;
    CurriculumStage curriculum_stage = CurriculumStage::Stage1Stepwise;

    bool operator==(const DatasetRecord&) const = default;
};

inline json encode(const DatasetRecord& r) {
    json j;
    j["problem_id"] = r.problem_id;
    j["format"] = std::string(to_string(r.format));
    j["step_texts"] = r.step_texts;
    j["steps"] = json::array();
    for (const auto& s : r.steps) j["steps"].push_back(codec::encode(s));
    j["source"] = std::string(to_string(r.source));
    j["curriculum_stage"] = std::string(to_string(r.curriculum_stage));
    return j;
}

inline DatasetRecord decode_record(const json& j) {
    DatasetRecord r;
    r.problem_id = j.at("problem_id").get<std::string>();
    const std::string fmt = j.at("format").get<std::string>();
    if (fmt == "stepwise")
        r.format = RecordFormat::Stepwise;
    else if (fmt == "critique")
        r.format = RecordFormat::Critique;
    else
        throw std::invalid_argument("unknown record format: " + fmt);
    r.step_texts = j.at("step_texts").get<std::vector<std::string>>();
    for (const auto& sj : j.at("steps")) r.steps.push_back(codec::decode_critique(sj));
    const std::string src = j.at("source").get<std::string>();
    if (src == "mcts_path")
        r.source = RecordSource::MctsPath;
    else if (src == "error_injection")
        r.source = RecordSource::ErrorInjection;
    else if (src == "dialogue")
        r.source = RecordSource::Dialogue;
    else
        throw std::invalid_argument("unknown record source: " + src);
    const std::string stage = j.at("curriculum_stage").get<std::string>();
    if (stage == "stage1_stepwise")
        r.curriculum_stage = CurriculumStage::Stage1Stepwise;
    else if (stage == "stage2_critique")
        r.curriculum_stage = CurriculumStage::Stage2Critique;
    else
        throw std::invalid_argument("unknown curriculum stage: " + stage);
    return r;
}

struct InjectionSpec {
    std::size_t step_index = 0;
    StepLabel error_type = StepLabel::ComputationalError;
    std::string generator_id;

    void validate() const {
        if (error_type == StepLabel::CorrectStep)
            throw std::invalid_argument("InjectionSpec.error_type cannot be correct_step");
    }
};

// ---------------------------------------------------------------------------
// Two-stage trajectory filter
// ---------------------------------------------------------------------------

// Stage 1 keeps only trajectories whose every step is labeled correct;
// stage 2 additionally requires the mean critique score to clear the
// confidence floor. Critiques must align one-to-one with steps.
inline std::vector<Trajectory> filter_trajectories(
    const std::vector<std::pair<Trajectory, std::vector<StepCritique>>>& candidates,
    double confidence_floor) {
    std::vector<Trajectory> retained;
    for (const auto& [trajectory, critiques] : candidates) {
        if (critiques.size() != trajectory.steps.size())
            throw AlignmentError("trajectory " + trajectory.problem_id + " has " +
                                 std::to_string(trajectory.steps.size()) + " steps but " +
                                 std::to_string(critiques.size()) + " critiques");
        bool all_correct = true;
        double sum = 0.0;
        for (const auto& c : critiques) {
            sum += c.score;
            if (c.label != StepLabel::CorrectStep) all_correct = false;
        }
        const double mean =
            critiques.empty() ? 0.0 : sum / static_cast<double>(critiques.size());
        if (all_correct && !critiques.empty() && mean >= confidence_floor)
            retained.push_back(trajectory);
    }
    return retained;
}

// ---------------------------------------------------------------------------
// Self-consistency and rejection sampling
// ---------------------------------------------------------------------------

struct VoteResult {
    std::string winner;
    std::size_t support = 0;
};

// Modal answer among already-canonicalized candidates; ties resolve to the
// lexicographically smallest form.
inline VoteResult self_consistency_vote(const std::vector<std::string>& answers) {
    if (answers.empty()) throw std::invalid_argument("self_consistency_vote: no answers");
    std::map<std::string, std::size_t> counts;
    for (const auto& a : answers) ++counts[a];
    VoteResult best;
    for (const auto& [answer, count] : counts) {  // map order = lexicographic
        if (count > best.support) {
            best.winner = answer;
            best.support = count;
        }
    }
    return best;
}

// Keep trajectories whose canonical final answer equals the gold answer.
// Trajectories without a final answer are skipped with a warning.
inline std::vector<Trajectory> rejection_sample(const std::vector<Trajectory>& trajectories,
                                                const std::string& gold) {
    if (gold.empty()) throw std::invalid_argument("rejection_sample: gold answer is empty");
    const std::string target = canonical_answer(gold);
    std::vector<Trajectory> retained;
    for (const auto& t : trajectories) {
        if (!t.final_answer) {
            logging::warn("rejection_sample: trajectory for " + t.problem_id +
                          " has no final answer, skipped");
            continue;
        }
        if (canonical_answer(*t.final_answer) == target) retained.push_back(t);
    }
    return retained;
}

// ---------------------------------------------------------------------------
// Error injection
// ---------------------------------------------------------------------------

struct InjectionResult {
    std::vector<std::string> steps;     // reference steps with one rewritten
    std::vector<StepCritique> gold;     // gold quadruples: error at the target, correct elsewhere
};

inline std::string injection_request_id(const InjectionSpec& spec) {
    return "inject:" + std::string(to_string(spec.error_type)) + ":" +
           std::to_string(spec.step_index);
}

// Rewrite exactly the targeted step to exhibit the requested error type;
// every other step stays byte-identical. The rewriter returning the
// original text is a failure.
inline InjectionResult inject_error(const std::vector<std::string>& reference_steps,
                                    const InjectionSpec& spec, ActorModel& actor) {
    spec.validate();
    if (spec.step_index >= reference_steps.size())
        throw std::out_of_range("inject_error: step_index " + std::to_string(spec.step_index) +
                                " out of range for " + std::to_string(reference_steps.size()) +
                                " steps");

    Problem request;
    request.id = injection_request_id(spec);
    request.statement =
        build_prompt("inject_error", make_problem(request.id, "-"), {},
                     {{"error_type", std::string(to_string(spec.error_type))},
                      {"step", reference_steps[spec.step_index]}});

    const ReasoningStep rewritten =
        actor.generate(request, {}, ActionKind::Thinking, /*temperature=*/1.0);
    if (rewritten.content == reference_steps[spec.step_index])
        throw InjectionFailed("rewriter returned the original step unchanged (actor " +
                              actor.id() + ", step " + std::to_string(spec.step_index) + ")");

    InjectionResult result;
    result.steps = reference_steps;
    result.steps[spec.step_index] = rewritten.content;
    result.gold.reserve(result.steps.size());
    for (std::size_t i = 0; i < result.steps.size(); ++i) {
        if (i == spec.step_index) {
            result.gold.push_back(StepCritique{result.steps[i], spec.error_type,
                                               "injected " + std::string(to_string(spec.error_type)),
                                               0.0});
        } else {
            result.gold.push_back(StepCritique{result.steps[i], StepLabel::CorrectStep,
                                               "reference step", 1.0});
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Dialogue critique
// ---------------------------------------------------------------------------

using Segmenter = std::function<std::vector<std::string>(const Problem&, const std::string&)>;

// Rule-based fallback: split on sentence terminators and newlines.
inline std::vector<std::string> default_segmenter(const Problem&, const std::string& answer) {
    std::vector<std::string> steps;
    std::string current;
    auto flush = [&] {
        std::size_t b = current.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) {
            current.clear();
            return;
        }
        std::size_t e = current.find_last_not_of(" \t\r\n");
        steps.push_back(current.substr(b, e - b + 1));
        current.clear();
    };
    for (std::size_t i = 0; i < answer.size(); ++i) {
        const char c = answer[i];
        current += c;
        const bool terminator = c == '!' || c == '?' || c == ';' || c == '\n' ||
                                (c == '.' && (i + 1 == answer.size() ||
                                              std::isspace(static_cast<unsigned char>(answer[i + 1]))));
        if (terminator) flush();
    }
    flush();
    return steps;
}

// Decompose a student answer into steps, have the teacher critique each
// one, and emit a critique-format record (stage 2 curriculum).
inline DatasetRecord build_dialogue_critique(const Problem& problem,
                                             const std::string& student_answer,
                                             RewardModel& teacher,
                                             const Segmenter& segmenter = default_segmenter) {
    if (student_answer.empty())
        throw std::invalid_argument("build_dialogue_critique: student answer is empty");
    const std::vector<std::string> pieces = segmenter(problem, student_answer);
    if (pieces.empty())
        throw SegmentationError("segmentation produced zero steps for " + problem.id);

    DatasetRecord record;
    record.problem_id = problem.id;
    record.format = RecordFormat::Critique;
    record.source = RecordSource::Dialogue;
    record.curriculum_stage = CurriculumStage::Stage2Critique;
    record.step_texts = pieces;

    std::vector<ReasoningStep> prefix;
    for (const auto& text : pieces) {
        ReasoningStep step{ActionKind::Thinking, text, "student"};
        record.steps.push_back(teacher.critique(problem, prefix, step));
        prefix.push_back(std::move(step));
    }
    return record;
}

// ---------------------------------------------------------------------------
// QC filters
// ---------------------------------------------------------------------------

struct QcConfig {
    double coverage_cap = 0.4;  // max share of one error type per batch
    std::uint64_t seed = 0;
};

struct QcRejection {
    std::size_t record_index = 0;
    std::string rule;    // "format" | "annotation" | "coverage"
    std::string detail;
};

struct QcOutcome {
    std::vector<DatasetRecord> retained;
    std::vector<QcRejection> rejections;
};

// Per-record second-pass labels for the annotation-consistency check,
// aligned with the input batch; an empty inner vector means no second pass
// for that record.
using SecondPassLabels = std::vector<std::vector<StepLabel>>;

namespace detail {

// A record's dominant error signature: its first non-correct label, if any.
inline std::optional<StepLabel> error_signature(const DatasetRecord& r) {
    for (const auto& s : r.steps)
        if (s.label != StepLabel::CorrectStep) return s.label;
    return std::nullopt;
}

inline std::string record_fingerprint(const DatasetRecord& r) {
    return digest_hex(encode(r).dump());
}

} // namespace detail

// Drop records that (a) deviate from the required shape (step/quadruple
// count mismatch, empty or out-of-range quadruples), (b) disagree with a
// second annotation pass on any label, or (c) overshoot the per-batch error
// coverage cap, down-sampled deterministically from the run seed. The
// report lists every rejection with its rule.
inline QcOutcome qc_filters(const std::vector<DatasetRecord>& records,
                            const std::optional<SecondPassLabels>& duplicate_annotations = {},
                            const QcConfig& config = {}) {
    if (duplicate_annotations && duplicate_annotations->size() != records.size())
        throw AlignmentError("second-pass annotations count " +
                             std::to_string(duplicate_annotations->size()) +
                             " does not match batch size " + std::to_string(records.size()));

    QcOutcome out;
    std::vector<std::size_t> kept;  // indices surviving (a) and (b)
    for (std::size_t i = 0; i < records.size(); ++i) {
        const DatasetRecord& r = records[i];
        std::string defect;
        if (r.steps.empty())
            defect = "record has no steps";
        else if (r.steps.size() != r.step_texts.size())
            defect = std::to_string(r.step_texts.size()) + " steps but " +
                     std::to_string(r.steps.size()) + " quadruples";
        else {
            for (const auto& s : r.steps) {
                if (s.content.empty()) {
                    defect = "quadruple with empty content";
                    break;
                }
                if (s.score < 0.0 || s.score > 1.0) {
                    defect = "quadruple score out of [0,1]";
                    break;
                }
            }
        }
        if (!defect.empty()) {
            out.rejections.push_back(QcRejection{i, "format", defect});
            continue;
        }
        if (duplicate_annotations && !(*duplicate_annotations)[i].empty()) {
            const auto& second = (*duplicate_annotations)[i];
            if (second.size() != r.steps.size()) {
                out.rejections.push_back(
                    QcRejection{i, "annotation", "second pass has different step count"});
                continue;
            }
            bool disagreement = false;
            for (std::size_t k = 0; k < second.size(); ++k)
                if (second[k] != r.steps[k].label) {
                    out.rejections.push_back(
                        QcRejection{i, "annotation",
                                    "label disagreement at step " + std::to_string(k + 1)});
                    disagreement = true;
                    break;
                }
            if (disagreement) continue;
        }
        kept.push_back(i);
    }

    // Coverage cap: at most floor(cap * batch) records per error type, the
    // batch being what survived (a) and (b). Survivors are chosen by
    // seed-hash rank so the draw is deterministic and order-independent.
    const auto cap = static_cast<std::size_t>(
        std::floor(config.coverage_cap * static_cast<double>(kept.size())));
    std::map<StepLabel, std::vector<std::size_t>> by_type;
    for (std::size_t idx : kept) {
        if (auto sig = detail::error_signature(records[idx])) by_type[*sig].push_back(idx);
    }
    std::vector<bool> drop(records.size(), false);
    for (auto& [label, indices] : by_type) {
        if (indices.size() <= cap) continue;
        std::vector<std::pair<std::uint64_t, std::size_t>> ranked;
        ranked.reserve(indices.size());
        for (std::size_t idx : indices)
            ranked.emplace_back(rng::combine(config.seed, detail::record_fingerprint(records[idx])),
                                idx);
        std::sort(ranked.begin(), ranked.end());
        for (std::size_t k = cap; k < ranked.size(); ++k) {
            drop[ranked[k].second] = true;
            out.rejections.push_back(QcRejection{
                ranked[k].second, "coverage",
                std::string(to_string(label)) + " exceeds cap of " + std::to_string(cap)});
        }
    }
    for (std::size_t idx : kept)
        if (!drop[idx]) out.retained.push_back(records[idx]);
    std::stable_sort(out.rejections.begin(), out.rejections.end(),
                     [](const QcRejection& a, const QcRejection& b) {
                         return a.record_index < b.record_index;
                     });
    return out;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

struct ManifestFile {
    std::string path;       // relative to the export root
    std::size_t records = 0;
    std::string sha;        // content digest of the file bytes
};

struct Manifest {
    std::vector<ManifestFile> files;
    std::size_t total_records = 0;
};

inline json encode(const Manifest& m) {
    json j;
    j["total_records"] = m.total_records;
    j["files"] = json::array();
    for (const auto& f : m.files)
        j["files"].push_back({{"path", f.path}, {"records", f.records}, {"digest", f.sha}});
    return j;
}

// Write records as JSONL partitioned by curriculum stage and source
// (<stage>/<source>.jsonl under the root) plus a manifest.json listing
// paths, counts and content digests. Re-export of identical inputs is
// byte-identical.
inline Manifest export_dataset(const std::vector<DatasetRecord>& records,
                               const std::filesystem::path& root) {
    std::map<std::pair<CurriculumStage, RecordSource>, std::vector<const DatasetRecord*>> parts;
    for (const auto& r : records) parts[{r.curriculum_stage, r.source}].push_back(&r);

    Manifest manifest;
    manifest.total_records = records.size();
    try {
        for (const auto& [key, rows] : parts) {
            const auto& [stage, source] = key;
            const std::string rel =
                std::string(to_string(stage)) + "/" + std::string(to_string(source)) + ".jsonl";
            std::string buf;
            for (const DatasetRecord* r : rows) {
                buf += encode(*r).dump();
                buf += '\n';
            }
            write_file_atomic(root / rel, buf);
            manifest.files.push_back(ManifestFile{rel, rows.size(), digest_hex(buf)});
        }
        write_file_atomic(root / "manifest.json", encode(manifest).dump(2) + "\n");
    } catch (const ExportError&) {
        throw;
    } catch (const std::exception& e) {
        throw ExportError(std::string("export failed: ") + e.what());
    }
    return manifest;
}

} // namespace trellis::datagen
