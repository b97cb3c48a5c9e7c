// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Instruction banks built by deterministic slot filling. A bank spec lists
// interchangeable openers, focus phrases and task closers; every combination
// is a candidate instruction and a seeded shuffle picks ten distinct ones.

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/rng.hpp"

namespace exo2ego::corpus {

enum class TaskType { recognition, qa, captioning };

inline std::string_view to_string(TaskType t) {
    switch (t) {
        case TaskType::recognition: return "recognition";
        case TaskType::qa: return "qa";
        case TaskType::captioning: return "captioning";
    }
    return "?";
}

inline TaskType parse_task_type(std::string_view s) {
    if (s == "recognition") return TaskType::recognition;
    if (s == "qa") return TaskType::qa;
    if (s == "captioning") return TaskType::captioning;
    throw Error(fmt::format("unknown task type '{}'", s));
}

/// Multiple-choice recognition items are scored by picking one candidate, so
/// every recognition instruction must say so.
inline constexpr std::string_view kRecognitionAnswerClause = "Answer with one of the listed options.";

inline constexpr std::size_t kInstructionsPerBank = 10;

struct BankSpec {
    std::string dataset_name;
    std::string dataset_description;
    TaskType task_type = TaskType::captioning;
    std::vector<std::string> openers;
    std::vector<std::string> focuses;
    std::vector<std::string> closers;
};

struct InstructionBank {
    std::string dataset_name;
    TaskType task_type = TaskType::captioning;
    std::vector<std::string> instructions;
    std::uint64_t template_seed = 0;

    bool operator==(const InstructionBank&) const = default;
};

inline std::string fill_template(const BankSpec& spec, const std::string& opener, const std::string& focus,
                                 const std::string& closer) {
    std::string s = fmt::format("{} {} {}", opener, focus, closer);
    if (spec.task_type == TaskType::recognition) {
        s += " ";
        s += kRecognitionAnswerClause;
    }
    return s;
}

inline InstructionBank render_instructions(const BankSpec& spec, std::uint64_t seed) {
    std::vector<std::string> combos;
    std::set<std::string> seen;
    for (const auto& o : spec.openers) {
        for (const auto& f : spec.focuses) {
            for (const auto& c : spec.closers) {
                std::string s = fill_template(spec, o, f, c);
                if (seen.insert(s).second) {
                    combos.push_back(std::move(s));
                }
            }
        }
    }
    require(combos.size() >= kInstructionsPerBank,
            fmt::format("bank '{}' yields only {} distinct instructions, need {}", spec.dataset_name, combos.size(),
                        kInstructionsPerBank));

    Rng rng(mix_seed(seed, 0x1257));
    rng.shuffle(combos);
    combos.resize(kInstructionsPerBank);
    return {spec.dataset_name, spec.task_type, std::move(combos), seed};
}

/// Stock bank specs for the instruction-tuning sources, plus the synthetic
/// captioning bank the toy pipeline trains with.
inline std::vector<BankSpec> builtin_bank_specs() {
    std::vector<BankSpec> specs;
    const std::vector<std::string> video_openers = {
        "Watch the video closely.", "Observe the clip from start to end.", "Look carefully at the footage.",
        "Study the first-person recording."};

    specs.push_back({"EGTEA", "First-person cooking recordings with fine-grained hand-object action labels.",
                     TaskType::recognition, video_openers,
                     {"Note how the hands interact with the objects.", "Track the object being manipulated.",
                      "Pay attention to the tool in use."},
                     {"Decide which action is performed.", "Classify the action."}});
    specs.push_back({"Something-Something-V2", "Short clips of people performing basic actions with everyday objects.",
                     TaskType::recognition, video_openers,
                     {"Focus on how the object moves.", "Notice the start and end state of the object.",
                      "Follow the motion of the hand."},
                     {"Identify the action template that fits.", "Select the matching action."}});
    specs.push_back({"EgoTimeQA", "Question-answer pairs grounded in time spans of egocentric videos.", TaskType::qa,
                     video_openers,
                     {"Attend to when each action begins and ends.", "Keep track of the order of events.",
                      "Notice which objects change state."},
                     {"Answer the question.", "Give the answer supported by the video."}});
    specs.push_back({"OpenEQA", "Open-vocabulary questions about environments seen from an embodied agent.",
                     TaskType::qa, video_openers,
                     {"Remember where objects were last seen.", "Track the layout of the room.",
                      "Notice changes in viewpoint."},
                     {"Answer the question.", "Respond using what the video shows."}});
    specs.push_back({"EgoExoLearn", "Demonstration-following recordings with natural-language clip annotations.",
                     TaskType::captioning, video_openers,
                     {"Focus on the main action.", "Follow the sequence of steps.", "Notice repeated movements."},
                     {"Write a caption for the clip.", "Describe what happens."}});
    specs.push_back({"synth-captioning", "Procedural gridworld episodes narrated as 'C <verb> the <object>'.",
                     TaskType::captioning,
                     {"watch the clip", "look at the video", "observe the scene"},
                     {"and focus on the hands", "and track the object", "and note the action",
                      "and follow the camera wearer"},
                     {"then describe what c does", "then caption the action", "then say what happens"}});
    return specs;
}

inline BankSpec builtin_bank_spec(std::string_view name) {
    for (auto& s : builtin_bank_specs()) {
        if (s.dataset_name == name) {
            return s;
        }
    }
    throw Error(fmt::format("no built-in instruction bank named '{}'", name));
}

}  // namespace exo2ego::corpus
