#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "medrag/gateway.hpp"
#include "medrag/knowledge_index.hpp"

namespace medrag {
namespace lab {
struct FeatureSetRevision;
}

namespace scoring {

struct Question {
  std::string question_id;
  std::string feature_name;
  std::string text;
  std::string category;
};

struct QuestionBank {
  std::vector<Question> questions;
  std::string bank_digest;

  std::vector<std::string> feature_names() const;
  nlohmann::json to_json() const;
};

/// Validates names and uniqueness, computes the digest.
QuestionBank make_question_bank(std::vector<Question> questions);
QuestionBank parse_question_bank(const nlohmann::json& j);
QuestionBank load_question_bank(const std::string& path);
void save_question_bank(const QuestionBank& bank, const std::string& path);

/// std::nullopt is MISSING.
using Score = std::optional<double>;

struct FeatureVector {
  std::string report_id;
  std::map<std::string, Score> values;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct ParsedScore {
  std::string feature_name;
  double value = 0.0;
};

/// Last "name: number" in the text, value clamped to [0, 1], name lowercased
/// with spaces turned into underscores. Throws NoScoreFound.
ParsedScore parse_score_line(std::string_view text);

struct ScoreOptions {
  /// Retrieved blocks per question; 0 disables retrieval.
  std::size_t k = 3;
  /// Report prefix (in scalar values) appended to the retrieval query.
  std::size_t report_head_chars = 200;
  /// Questions scored concurrently per report.
  int workers = 1;
};

/// Scoring prompt for one question, given the retrieved context texts.
llm::PromptRequest build_score_request(const Question& question, const std::string& report_text,
                                       const std::vector<std::string>& context);

/// The retrieval query for a question: question text + " " + report head.
std::string retrieval_query(const Question& question, const std::string& report_text,
                            std::size_t report_head_chars);

/// Context texts that score_question would attach.
std::vector<std::string> question_context(const Question& question, const std::string& report_text,
                                          const rag::VectorIndex* index, llm::Gateway& gateway,
                                          const ScoreOptions& options);

struct ScoreLog {
  int missing = 0;
  int name_mismatches = 0;
  int transport_failures = 0;
};

/// Never throws for answer-level failures; those come back as MISSING.
/// Configuration errors still propagate.
Score score_question(const Question& question, const std::string& report_text,
                     const rag::VectorIndex* index, llm::Gateway& gateway,
                     const ScoreOptions& options = {}, ScoreLog* log = nullptr);

FeatureVector build_feature_vector(const std::string& report_id, const std::string& report_text,
                                   const QuestionBank& bank, const rag::VectorIndex* index,
                                   llm::Gateway& gateway, const lab::FeatureSetRevision* engineered,
                                   const ScoreOptions& options = {}, ScoreLog* log = nullptr);

// Feature matrices: canonical JSONL rows {report_id, values:{name: number|null}}.
nlohmann::json to_json(const FeatureVector& fv);
FeatureVector feature_vector_from_json(const nlohmann::json& j);
void save_matrix_jsonl(const std::vector<FeatureVector>& rows, const std::string& path);
std::vector<FeatureVector> load_matrix_jsonl(const std::string& path);
/// CSV with a header of report_id plus columns; MISSING is an empty cell.
void save_matrix_csv(const std::vector<FeatureVector>& rows, const std::vector<std::string>& columns,
                     const std::string& path);

}  // namespace scoring
}  // namespace medrag
