#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "medrag/consult.hpp"
#include "medrag/gateway.hpp"
#include "medrag/pipeline.hpp"

namespace fixture {

/// Mock gateway whose script table stays writable after construction.
struct ScriptedGateway {
  std::shared_ptr<medrag::llm::ScriptTable> script;
  std::shared_ptr<medrag::llm::Gateway> gateway;
};

ScriptedGateway make_scripted_gateway(int embed_dim = 64);

/// Scripts "<feature>: <value>" answers for the exact prompts the scorer
/// builds for this report text.
void script_scores(ScriptedGateway& sg, const medrag::rag::VectorIndex& index,
                   const medrag::scoring::QuestionBank& bank, const medrag::scoring::ScoreOptions& options,
                   const std::string& report_text, const std::map<std::string, double>& values);

/// A small multilabel pipeline over three conditions, trained on scripted
/// answers, plus the two patient messages of the walkthrough.
struct CaseStudy {
  ScriptedGateway sg;
  std::shared_ptr<const medrag::pipeline::TrainedPipeline> tp;
  std::vector<std::string> patient_messages;
  /// Answers the walkthrough's final record should receive.
  std::map<std::string, double> session_answers;
};

CaseStudy make_case_study();

/// Opens a session and sends both patient messages, scripting the final
/// record's answers just before the message that triggers the prediction.
/// Returns the reply to each message.
std::vector<medrag::consult::AssistantReply> run_walkthrough(CaseStudy& cs,
                                                            medrag::consult::ConsultService& service,
                                                            std::string* session_id = nullptr);

}  // namespace fixture
