#include "medrag/scoring.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "medrag/digest.hpp"
#include "medrag/error.hpp"
#include "medrag/feature_lab.hpp"
#include "medrag/prompts.hpp"
#include "medrag/text.hpp"

namespace medrag::scoring {

std::vector<std::string> QuestionBank::feature_names() const {
  std::vector<std::string> names;
  names.reserve(questions.size());
  for (const auto& q : questions) names.push_back(q.feature_name);
  return names;
}

nlohmann::json QuestionBank::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& q : questions) {
    arr.push_back({{"question_id", q.question_id},
                   {"feature_name", q.feature_name},
                   {"text", q.text},
                   {"category", q.category}});
  }
  return arr;
}

QuestionBank make_question_bank(std::vector<Question> questions) {
  if (questions.empty()) fail(ErrorCode::Parse, "question bank is empty");
  std::set<std::string> ids;
  std::set<std::string> names;
  DigestBuilder digest;
  digest.add("medrag.bank.v1");
  for (const auto& q : questions) {
    if (!text::is_feature_name(q.feature_name)) {
      fail(ErrorCode::BadFeatureName, "bad feature name: '" + q.feature_name + "'");
    }
    if (!names.insert(q.feature_name).second) {
      fail(ErrorCode::DuplicateFeatureName, "duplicate feature name: " + q.feature_name);
    }
    if (q.question_id.empty() || !ids.insert(q.question_id).second) {
      fail(ErrorCode::Parse, "missing or duplicate question_id: '" + q.question_id + "'");
    }
    if (text::trim(q.text).empty()) fail(ErrorCode::Parse, "question " + q.question_id + " has no text");
    digest.add(q.question_id).add(q.feature_name).add(q.text).add(q.category);
  }
  return QuestionBank{std::move(questions), digest.hex()};
}

QuestionBank parse_question_bank(const nlohmann::json& j) {
  if (!j.is_array()) fail(ErrorCode::Parse, "question bank must be a JSON array");
  std::vector<Question> questions;
  try {
    for (const auto& q : j) {
      questions.push_back({q.at("question_id").get<std::string>(),
                           q.at("feature_name").get<std::string>(),
                           q.at("text").get<std::string>(), q.value("category", std::string())});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed question: ") + e.what());
  }
  return make_question_bank(std::move(questions));
}

QuestionBank load_question_bank(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open question bank: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, path + ": " + e.what());
  }
  return parse_question_bank(j);
}

void save_question_bank(const QuestionBank& bank, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write question bank: " + path);
  out << bank.to_json().dump(2) << '\n';
}

ParsedScore parse_score_line(std::string_view text) {
  static const std::regex kPattern(
      R"(([A-Za-z_][A-Za-z0-9_ ]*?)[ \t]*:[ \t]*([+-]?[0-9]+(?:\.[0-9]+)?))");
  const std::string s(text);
  std::smatch last;
  bool found = false;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kPattern); it != std::sregex_iterator();
       ++it) {
    last = *it;
    found = true;
  }
  if (!found) fail(ErrorCode::NoScoreFound, "no score in answer");
  std::string name;
  bool pending_space = false;
  for (char c : text::trim(last[1].str())) {
    if (c == ' ') {
      pending_space = true;
      continue;
    }
    if (pending_space && !name.empty()) name.push_back('_');
    pending_space = false;
    name.push_back(c);
  }
  double value = std::stod(last[2].str());
  value = std::clamp(value, 0.0, 1.0);
  return {text::to_lower_ascii(name), value};
}

llm::PromptRequest build_score_request(const Question& question, const std::string& report_text,
                                       const std::vector<std::string>& context) {
  llm::PromptRequest req;
  req.system_text = std::string(prompts::kScoreSystem);
  req.context_blocks = context;
  req.user_text = fmt::format(
      "Health report:\n{}\n\nQuestion: {}\nAnswer with exactly one line: \"{}: <number between 0 "
      "and 1>\".",
      report_text, question.text, question.feature_name);
  return req;
}

std::string retrieval_query(const Question& question, const std::string& report_text,
                            std::size_t report_head_chars) {
  return question.text + " " + text::head(report_text, report_head_chars);
}

std::vector<std::string> question_context(const Question& question, const std::string& report_text,
                                          const rag::VectorIndex* index, llm::Gateway& gateway,
                                          const ScoreOptions& options) {
  std::vector<std::string> context;
  if (index == nullptr || options.k == 0 || index->empty()) return context;
  for (auto& hit : rag::retrieve(*index, retrieval_query(question, report_text,
                                                         options.report_head_chars),
                                 options.k, gateway)) {
    context.push_back(std::move(hit.chunk.text));
  }
  return context;
}

namespace {
std::mutex g_log_mutex;
}

Score score_question(const Question& question, const std::string& report_text,
                     const rag::VectorIndex* index, llm::Gateway& gateway,
                     const ScoreOptions& options, ScoreLog* log) {
  auto note = [&](int ScoreLog::*field) {
    if (log) {
      std::lock_guard lock(g_log_mutex);
      ++(log->*field);
    }
  };
  std::string answer;
  try {
    const auto context = question_context(question, report_text, index, gateway, options);
    answer = gateway.complete(build_score_request(question, report_text, context)).text;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Transport) throw;
    spdlog::warn("question {}: provider failed ({}); recording MISSING", question.question_id,
                 e.what());
    note(&ScoreLog::transport_failures);
    note(&ScoreLog::missing);
    return std::nullopt;
  }
  try {
    const auto parsed = parse_score_line(answer);
    if (parsed.feature_name != question.feature_name &&
        !parsed.feature_name.ends_with("_" + question.feature_name)) {
      spdlog::debug("question {}: answer named '{}', expected '{}'", question.question_id,
                    parsed.feature_name, question.feature_name);
      note(&ScoreLog::name_mismatches);
    }
    return parsed.value;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoScoreFound) throw;
    note(&ScoreLog::missing);
    return std::nullopt;
  }
}

FeatureVector build_feature_vector(const std::string& report_id, const std::string& report_text,
                                   const QuestionBank& bank, const rag::VectorIndex* index,
                                   llm::Gateway& gateway, const lab::FeatureSetRevision* engineered,
                                   const ScoreOptions& options, ScoreLog* log) {
  const auto& questions = bank.questions;
  std::vector<Score> scores(questions.size());
  const int workers = std::clamp(options.workers, 1, static_cast<int>(questions.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < questions.size(); ++i) {
      scores[i] = score_question(questions[i], report_text, index, gateway, options, log);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    {
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < questions.size(); i = next++) {
            try {
              scores[i] = score_question(questions[i], report_text, index, gateway, options, log);
            } catch (...) {
              std::lock_guard lock(error_mutex);
              if (!error) error = std::current_exception();
            }
          }
        });
      }
    }
    if (error) std::rethrow_exception(error);
  }
  FeatureVector fv;
  fv.report_id = report_id;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    fv.values.emplace(questions[i].feature_name, scores[i]);
  }
  if (engineered != nullptr) lab::apply_revision(*engineered, fv);
  return fv;
}

nlohmann::json to_json(const FeatureVector& fv) {
  nlohmann::json values = nlohmann::json::object();
  for (const auto& [name, v] : fv.values) {
    values[name] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  }
  return {{"report_id", fv.report_id}, {"values", std::move(values)}};
}

FeatureVector feature_vector_from_json(const nlohmann::json& j) {
  FeatureVector fv;
  try {
    fv.report_id = j.at("report_id").get<std::string>();
    for (const auto& [name, v] : j.at("values").items()) {
      fv.values.emplace(name, v.is_null() ? Score{} : Score{v.get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed feature row: ") + e.what());
  }
  return fv;
}

void save_matrix_jsonl(const std::vector<FeatureVector>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write matrix: " + path);
  for (const auto& fv : rows) out << to_json(fv).dump() << '\n';
}

std::vector<FeatureVector> load_matrix_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open matrix: " + path);
  std::vector<FeatureVector> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    try {
      rows.push_back(feature_vector_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Parse, path + ": " + e.what());
    }
  }
  return rows;
}

void save_matrix_csv(const std::vector<FeatureVector>& rows, const std::vector<std::string>& columns,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write matrix: " + path);
  out << "report_id";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (const auto& fv : rows) {
    out << fv.report_id;
    for (const auto& c : columns) {
      out << ',';
      const auto it = fv.values.find(c);
      if (it != fv.values.end() && it->second) out << fmt::format("{}", *it->second);
    }
    out << '\n';
  }
}

}  // namespace medrag::scoring
