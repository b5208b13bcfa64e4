#include <catch2/catch_amalgamated.hpp>

#include <trellis/datagen.hpp>
#include <trellis/log.hpp>
#include <trellis/scripted.hpp>

#include "support/helpers.hpp"

#include <fstream>

using namespace trellis;
using namespace trellis::datagen;

namespace {

const Problem kProblem = testutil::sample_problem();

Trajectory make_trajectory(const std::string& answer) {
    Trajectory t;
    t.problem_id = kProblem.id;
    t.steps = {{ActionKind::Caption, "the figure shows a square", "a"},
               {ActionKind::Thinking, "side is 2, area is side squared", "a"},
               {ActionKind::SelfReflection, "checked the arithmetic", "a"},
               {ActionKind::Answer, answer, "a"}};
    t.final_answer = answer;
    return t;
}

std::vector<StepCritique> critiques_for(const Trajectory& t, double score,
                                        StepLabel label = StepLabel::CorrectStep) {
    std::vector<StepCritique> out;
    for (const auto& s : t.steps) out.push_back(StepCritique{s.content, label, "e", score});
    return out;
}

DatasetRecord make_record(const std::string& id, StepLabel label,
                          std::size_t steps = 2,
                          RecordSource source = RecordSource::ErrorInjection) {
    DatasetRecord r;
    r.problem_id = id;
    r.format = RecordFormat::Stepwise;
    r.source = source;
    r.curriculum_stage = CurriculumStage::Stage1Stepwise;
    for (std::size_t i = 0; i < steps; ++i) {
        const std::string text = "step " + std::to_string(i) + " of " + id;
        r.step_texts.push_back(text);
        r.steps.push_back(StepCritique{text, i == 0 ? label : StepLabel::CorrectStep, "e",
                                       label == StepLabel::CorrectStep ? 1.0 : 0.2});
    }
    return r;
}

} // namespace

TEST_CASE("filter_trajectories applies both quality gates") {
    const Trajectory good = make_trajectory("4");

    SECTION("all-correct, confident trajectory is retained") {
        const auto kept = filter_trajectories({{good, critiques_for(good, 0.9)}}, 0.6);
        REQUIRE(kept.size() == 1);
        CHECK(kept[0] == good);
    }
    SECTION("a single error label rejects the whole trajectory") {
        auto critiques = critiques_for(good, 0.9);
        critiques[1].label = StepLabel::ComputationalError;
        CHECK(filter_trajectories({{good, critiques}}, 0.6).empty());
    }
    SECTION("all-correct but unconfident is rejected by the stage-2 gate") {
        // mean 0.3 < floor 0.6, recomputed from the critique scores
        const auto critiques = critiques_for(good, 0.3);
        double sum = 0.0;
        for (const auto& c : critiques) sum += c.score;
        REQUIRE(sum / static_cast<double>(critiques.size()) < 0.6);
        CHECK(filter_trajectories({{good, critiques}}, 0.6).empty());
    }
    SECTION("misaligned critiques are an error") {
        auto critiques = critiques_for(good, 0.9);
        critiques.pop_back();
        CHECK_THROWS_AS(filter_trajectories({{good, critiques}}, 0.6), AlignmentError);
    }
}

TEST_CASE("self-consistency vote") {
    SECTION("majority wins") {
        const auto v = self_consistency_vote({"A", "A", "B"});
        CHECK(v.winner == "A");
        CHECK(v.support == 2);
    }
    SECTION("ties break to the lexicographically smallest form") {
        const auto v = self_consistency_vote({"B", "A"});
        CHECK(v.winner == "A");
        CHECK(v.support == 1);
    }
    SECTION("matches a frequency-count oracle on scripted answers") {
        const std::vector<std::string> answers{"x", "y", "x", "z", "x", "y", "x", "z", "y"};
        std::map<std::string, std::size_t> freq;
        for (const auto& a : answers) ++freq[a];
        std::string best;
        std::size_t best_count = 0;
        for (const auto& [a, c] : freq)
            if (c > best_count) {
                best = a;
                best_count = c;
            }
        const auto v = self_consistency_vote(answers);
        CHECK(v.winner == best);
        CHECK(v.support == best_count);
        CHECK(v.winner == "x");
        CHECK(v.support == 4);
    }
    SECTION("empty input is invalid") {
        CHECK_THROWS_AS(self_consistency_vote({}), std::invalid_argument);
    }
}

TEST_CASE("rejection sampling keeps only gold-consistent trajectories") {
    SECTION("equality filter") {
        const auto kept = rejection_sample(
            {make_trajectory("4"), make_trajectory("5"), make_trajectory("4")}, "4");
        CHECK(kept.size() == 2);
    }
    SECTION("nothing matches, nothing kept") {
        CHECK(rejection_sample({make_trajectory("7"), make_trajectory("8")}, "4").empty());
    }
    SECTION("canonicalization equates 1/2 and 0.5") {
        const auto kept = rejection_sample({make_trajectory(" 1/2 ")}, "0.5");
        REQUIRE(kept.size() == 1);
    }
    SECTION("answerless trajectories are skipped with a warning") {
        std::vector<std::string> warnings;
        logging::set_sink([&](logging::Level, std::string_view m) { warnings.emplace_back(m); });
        Trajectory no_answer;
        no_answer.problem_id = "p";
        no_answer.steps = {{ActionKind::Caption, "c", "a"}};
        const auto kept = rejection_sample({no_answer, make_trajectory("4")}, "4");
        logging::set_sink(nullptr);
        CHECK(kept.size() == 1);
        REQUIRE(warnings.size() == 1);
        CHECK(warnings[0].find("no final answer") != std::string::npos);
    }
    SECTION("empty gold is invalid") {
        CHECK_THROWS_AS(rejection_sample({make_trajectory("4")}, ""), std::invalid_argument);
    }
}

TEST_CASE("inject_error rewrites exactly the targeted step") {
    const std::vector<std::string> reference{"read the diagram", "set up the equation",
                                             "2+2=4", "conclude"};

    SECTION("labels are forced by the spec and locality is byte-exact") {
        CallbackActor rewriter("rw", [](const Problem&, std::span<const ReasoningStep>,
                                        ActionKind, double) { return std::string("2+2=5"); });
        InjectionSpec spec{2, StepLabel::ComputationalError, "rw"};
        const auto result = inject_error(reference, spec, rewriter);
        REQUIRE(result.steps.size() == 4);
        CHECK(result.steps[0] == reference[0]);
        CHECK(result.steps[1] == reference[1]);
        CHECK(result.steps[2] == "2+2=5");
        CHECK(result.steps[3] == reference[3]);
        REQUIRE(result.gold.size() == 4);
        CHECK(result.gold[0].label == StepLabel::CorrectStep);
        CHECK(result.gold[1].label == StepLabel::CorrectStep);
        CHECK(result.gold[2].label == StepLabel::ComputationalError);
        CHECK(result.gold[3].label == StepLabel::CorrectStep);
        CHECK(result.gold[2].score == 0.0);

        // the scripted PRM agrees: the corrupted step scores zero
        ScriptedReward prm(1);
        prm.script_content("2+2=5", CritiqueScript{{0.0}, StepLabel::ComputationalError, "wrong"});
        const auto critique = prm.critique(kProblem, {}, ReasoningStep{ActionKind::Thinking,
                                                                       result.steps[2], "rw"});
        CHECK(critique.score == 0.0);
    }
    SECTION("out-of-range index is a precondition violation") {
        CallbackActor rewriter("rw", [](const Problem&, std::span<const ReasoningStep>,
                                        ActionKind, double) { return std::string("x"); });
        InjectionSpec spec{4, StepLabel::Hallucination, "rw"};
        CHECK_THROWS_AS(inject_error(reference, spec, rewriter), std::out_of_range);
    }
    SECTION("an unchanged rewrite is a failure") {
        CallbackActor lazy("rw", [&](const Problem&, std::span<const ReasoningStep>, ActionKind,
                                     double) { return reference[1]; });
        InjectionSpec spec{1, StepLabel::Hallucination, "rw"};
        CHECK_THROWS_AS(inject_error(reference, spec, lazy), InjectionFailed);
    }
    SECTION("correct_step is not an injectable error type") {
        InjectionSpec spec{0, StepLabel::CorrectStep, "rw"};
        CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    }
    SECTION("locality holds for every index on random references") {
        CallbackActor rewriter("rw", [](const Problem& p, std::span<const ReasoningStep>,
                                        ActionKind, double) { return "corrupted " + p.id; });
        for (std::uint64_t trial = 0; trial < 30; ++trial) {
            std::vector<std::string> steps;
            const std::size_t n = 2 + rng::mix(trial) % 5;
            for (std::size_t i = 0; i < n; ++i)
                steps.push_back(testutil::random_word(rng::draw(trial, i)));
            const std::size_t target = rng::mix(trial ^ 1) % n;
            InjectionSpec spec{target, StepLabel::Hallucination, "rw"};
            const auto result = inject_error(steps, spec, rewriter);
            for (std::size_t i = 0; i < n; ++i) {
                if (i == target)
                    CHECK(result.steps[i] != steps[i]);
                else
                    CHECK(result.steps[i] == steps[i]);
            }
        }
    }
}

TEST_CASE("dialogue critique decomposes and annotates a student answer") {
    SECTION("three segmented steps produce three quadruples") {
        const auto segmenter = [](const Problem&, const std::string&) {
            return std::vector<std::string>{"first part", "second part", "third part"};
        };
        ScriptedReward teacher(9);
        const auto record =
            build_dialogue_critique(kProblem, "first part. second part. third part.", teacher,
                                    segmenter);
        CHECK(record.format == RecordFormat::Critique);
        CHECK(record.source == RecordSource::Dialogue);
        CHECK(record.curriculum_stage == CurriculumStage::Stage2Critique);
        REQUIRE(record.steps.size() == 3);
        REQUIRE(record.step_texts.size() == 3);
        CHECK(record.step_texts[1] == "second part");
    }
    SECTION("the default segmenter splits sentences") {
        const auto pieces =
            default_segmenter(kProblem, "The square has side 2. Area is 4!\nDone");
        REQUIRE(pieces.size() == 3);
        CHECK(pieces[0] == "The square has side 2.");
        CHECK(pieces[2] == "Done");
        // decimal points do not split
        CHECK(default_segmenter(kProblem, "pi is 3.14 roughly").size() == 1);
    }
    SECTION("teacher labels and explanations are reproduced verbatim") {
        ScriptedReward teacher(9);
        teacher.script_content("second part",
                               CritiqueScript{{0.1}, StepLabel::Hallucination, "made-up value"});
        const auto segmenter = [](const Problem&, const std::string&) {
            return std::vector<std::string>{"first part", "second part", "third part"};
        };
        const auto record = build_dialogue_critique(kProblem, "whatever", teacher, segmenter);
        CHECK(record.steps[1].label == StepLabel::Hallucination);
        CHECK(record.steps[1].explanation == "made-up value");
        CHECK(record.steps[1].score == 0.1);
    }
    SECTION("empty answers violate the precondition") {
        ScriptedReward teacher(9);
        CHECK_THROWS_AS(build_dialogue_critique(kProblem, "", teacher), std::invalid_argument);
    }
    SECTION("zero segments is a segmentation error") {
        ScriptedReward teacher(9);
        const auto none = [](const Problem&, const std::string&) {
            return std::vector<std::string>{};
        };
        CHECK_THROWS_AS(build_dialogue_critique(kProblem, "text", teacher, none),
                        SegmentationError);
    }
}

TEST_CASE("qc_filters enforce format, consistency and coverage") {
    SECTION("quadruple-count mismatch is a format rejection") {
        DatasetRecord bad = make_record("p1", StepLabel::CorrectStep, 3);
        bad.steps.pop_back();  // 3 step texts, 2 quadruples
        const auto outcome = qc_filters({bad});
        CHECK(outcome.retained.empty());
        REQUIRE(outcome.rejections.size() == 1);
        CHECK(outcome.rejections[0].rule == "format");
    }
    SECTION("agreeing second-pass annotations retain the record") {
        DatasetRecord r = make_record("p1", StepLabel::Hallucination);
        SecondPassLabels second{{StepLabel::Hallucination, StepLabel::CorrectStep}};
        const auto outcome = qc_filters({r}, second, QcConfig{1.0, 0});  // cap disabled
        CHECK(outcome.retained.size() == 1);
        CHECK(outcome.rejections.empty());
    }
    SECTION("any label disagreement rejects the record") {
        DatasetRecord r = make_record("p1", StepLabel::Hallucination);
        SecondPassLabels second{{StepLabel::ComputationalError, StepLabel::CorrectStep}};
        const auto outcome = qc_filters({r}, second, QcConfig{1.0, 0});
        CHECK(outcome.retained.empty());
        REQUIRE(outcome.rejections.size() == 1);
        CHECK(outcome.rejections[0].rule == "annotation");
    }
    SECTION("a single error type is capped at its share of the batch") {
        std::vector<DatasetRecord> batch;
        for (int i = 0; i < 10; ++i)
            batch.push_back(make_record("p" + std::to_string(i), StepLabel::ComputationalError));
        QcConfig config;
        config.coverage_cap = 0.4;
        config.seed = 11;
        const auto outcome = qc_filters(batch, {}, config);
        CHECK(outcome.retained.size() == 4);
        CHECK(outcome.rejections.size() == 6);
        for (const auto& rej : outcome.rejections) CHECK(rej.rule == "coverage");
        // oracle: re-check the cap
        CHECK(outcome.retained.size() <=
              static_cast<std::size_t>(0.4 * static_cast<double>(batch.size())));
        // the down-sample is seed-deterministic
        const auto again = qc_filters(batch, {}, config);
        CHECK(again.retained == outcome.retained);
        QcConfig other = config;
        other.seed = 12;
        CHECK(qc_filters(batch, {}, other).retained != outcome.retained);
    }
    SECTION("all-correct records are exempt from the coverage cap") {
        std::vector<DatasetRecord> batch;
        for (int i = 0; i < 10; ++i)
            batch.push_back(make_record("p" + std::to_string(i), StepLabel::CorrectStep));
        const auto outcome = qc_filters(batch);
        CHECK(outcome.retained.size() == 10);
    }
    SECTION("qc is idempotent on a diverse batch") {
        std::vector<DatasetRecord> batch;
        for (int i = 0; i < 6; ++i) batch.push_back(make_record("c" + std::to_string(i),
                                                                StepLabel::CorrectStep));
        batch.push_back(make_record("h1", StepLabel::Hallucination));
        batch.push_back(make_record("h2", StepLabel::Hallucination));
        batch.push_back(make_record("e1", StepLabel::ComputationalError));
        DatasetRecord malformed = make_record("bad", StepLabel::CorrectStep, 2);
        malformed.steps.clear();
        batch.push_back(malformed);

        const auto once = qc_filters(batch, {}, QcConfig{0.4, 3});
        const auto twice = qc_filters(once.retained, {}, QcConfig{0.4, 3});
        CHECK(twice.retained == once.retained);
        CHECK(twice.rejections.empty());
    }
    SECTION("second-pass batch size must align") {
        CHECK_THROWS_AS(qc_filters({make_record("p", StepLabel::CorrectStep)},
                                   SecondPassLabels{{}, {}}),
                        AlignmentError);
    }
}

TEST_CASE("export partitions by stage and source with a deterministic manifest") {
    testutil::ScratchDir scratch("export");

    SECTION("two stage-1 and one stage-2 record make two files") {
        std::vector<DatasetRecord> records{
            make_record("p1", StepLabel::CorrectStep, 2, RecordSource::MctsPath),
            make_record("p2", StepLabel::CorrectStep, 2, RecordSource::MctsPath),
            make_record("p3", StepLabel::Hallucination, 2, RecordSource::Dialogue),
        };
        records[2].format = RecordFormat::Critique;
        records[2].curriculum_stage = CurriculumStage::Stage2Critique;

        const Manifest manifest = export_dataset(records, scratch.path / "run1");
        REQUIRE(manifest.files.size() == 2);
        CHECK(manifest.total_records == 3);
        CHECK(manifest.files[0].path == "stage1_stepwise/mcts_path.jsonl");
        CHECK(manifest.files[0].records == 2);
        CHECK(manifest.files[1].path == "stage2_critique/dialogue.jsonl");
        CHECK(manifest.files[1].records == 1);
        CHECK(std::filesystem::exists(scratch.path / "run1" / "manifest.json"));

        // records round-trip through the exported JSONL
        const auto rows = read_jsonl(scratch.path / "run1" / "stage1_stepwise/mcts_path.jsonl");
        REQUIRE(rows.size() == 2);
        CHECK(decode_record(rows[0]) == records[0]);

        // re-export is byte-identical
        const Manifest manifest2 = export_dataset(records, scratch.path / "run2");
        REQUIRE(manifest2.files.size() == manifest.files.size());
        for (std::size_t i = 0; i < manifest.files.size(); ++i)
            CHECK(manifest2.files[i].sha == manifest.files[i].sha);
    }
    SECTION("an empty record set exports an empty manifest and no part files") {
        const Manifest manifest = export_dataset({}, scratch.path / "empty");
        CHECK(manifest.files.empty());
        CHECK(manifest.total_records == 0);
        CHECK(std::filesystem::exists(scratch.path / "empty" / "manifest.json"));
    }
}
