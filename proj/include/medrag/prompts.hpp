#pragma once

#include <string_view>

// System prompts shared by the remote provider and the mock responders.
namespace medrag::prompts {

inline constexpr std::string_view kScoreSystem =
    "You are a clinical assistant scoring a patient's health report. "
    "Use the reference knowledge when it is relevant. Reply with exactly one "
    "line of the form \"<feature_name>: <number between 0 and 1>\".";

inline constexpr std::string_view kSymptomSystem =
    "You list the typical symptoms of a disease as a comma-separated list, "
    "following the pattern of the examples.";

inline constexpr std::string_view kAdviceSystem =
    "You are a careful physician. Given predicted conditions, reference "
    "knowledge and the patient's record, write short, practical health advice "
    "that names each predicted condition.";

inline constexpr std::string_view kFollowUpSystem =
    "You are a physician taking a patient history. Ask one or two short "
    "follow-up questions about duration, diet, age, sex and other symptoms.";

inline constexpr std::string_view kReadinessSystem =
    "Decide whether the consultation has enough information to make a "
    "prediction. Answer exactly \"ready\" or \"not ready\".";

inline constexpr std::string_view kProposalSystem =
    "You are a feature engineer. Propose one new derived feature as an "
    "arithmetic expression over existing feature names using + - * / and "
    "min, max, abs. Reply with three lines: \"name: <identifier>\", "
    "\"expression: <expression>\", \"rationale: <one sentence>\".";

inline constexpr std::string_view kMockFallback = "unknown: 0.5";
inline constexpr std::string_view kMockFollowUp =
    "How long has this lasted? Any other symptoms?";

}  // namespace medrag::prompts
