#include "medrag/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "medrag/digest.hpp"
#include "medrag/error.hpp"
#include "medrag/prompts.hpp"
#include "medrag/random.hpp"
#include "medrag/text.hpp"

namespace fs = std::filesystem;

namespace medrag::pipeline {

namespace {

constexpr std::string_view kRedacted = "[REDACTED]";

std::string sex_name(Sex s) { return s == Sex::Female ? "female" : "male"; }

std::string source_name(EprSource s) {
  switch (s) {
    case EprSource::Dialogue: return "dialogue";
    case EprSource::Report: return "report";
    case EprSource::Session: return "session";
  }
  return "report";
}

EprSource parse_source(const std::string& s) {
  if (s == "dialogue") return EprSource::Dialogue;
  if (s == "session") return EprSource::Session;
  if (s == "report") return EprSource::Report;
  fail(ErrorCode::Parse, "unknown EPR source '" + s + "'");
}

std::optional<Sex> parse_sex(std::string_view word) {
  const auto w = text::to_lower_ascii(word);
  if (w == "female" || w == "woman" || w == "girl" || w == "f") return Sex::Female;
  if (w == "male" || w == "man" || w == "boy" || w == "m") return Sex::Male;
  return std::nullopt;
}

nlohmann::json demographics_json(const Demographics& d) {
  nlohmann::json j = nlohmann::json::object();
  j["age"] = d.age ? nlohmann::json(*d.age) : nlohmann::json(nullptr);
  j["sex"] = d.sex ? nlohmann::json(sex_name(*d.sex)) : nlohmann::json(nullptr);
  return j;
}

Demographics demographics_from_json(const nlohmann::json& j) {
  Demographics d;
  if (j.contains("age") && !j["age"].is_null()) d.age = j["age"].get<int>();
  if (j.contains("sex") && !j["sex"].is_null()) {
    d.sex = parse_sex(j["sex"].get<std::string>());
    if (!d.sex) fail(ErrorCode::Parse, "unknown sex '" + j["sex"].get<std::string>() + "'");
  }
  return d;
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty() || base_dir.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

int first_positive(const std::vector<int>& row) {
  for (std::size_t l = 0; l < row.size(); ++l) {
    if (row[l]) return static_cast<int>(l);
  }
  return -1;
}

}  // namespace

// ---------------------------------------------------------------------------
// EPR

nlohmann::json to_json(const EPR& epr) {
  return {{"report_id", epr.report_id},
          {"demographics", demographics_json(epr.demographics)},
          {"narrative", epr.narrative},
          {"source", source_name(epr.source)}};
}

EPR epr_from_json(const nlohmann::json& j) {
  EPR e;
  try {
    e.report_id = j.at("report_id").get<std::string>();
    e.narrative = j.at("narrative").get<std::string>();
    if (j.contains("demographics")) e.demographics = demographics_from_json(j["demographics"]);
    e.source = parse_source(j.value("source", std::string("report")));
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::Parse, std::string("malformed EPR: ") + ex.what());
  }
  return e;
}

std::string report_text(const EPR& epr) {
  std::string out = epr.narrative;
  std::vector<std::string> parts;
  if (epr.demographics.sex) parts.push_back(sex_name(*epr.demographics.sex));
  if (epr.demographics.age) parts.push_back(fmt::format("{} years old", *epr.demographics.age));
  if (!parts.empty()) out += "\nDemographics: " + text::join(parts, ", ");
  return out;
}

bool is_patient_speaker(std::string_view speaker) {
  const auto s = text::to_lower_ascii(text::trim(speaker));
  return s == "patient" || s == "user";
}

std::string scrub_labels(std::string_view input, const std::vector<std::string>& label_names) {
  std::vector<std::string> needles;
  for (const auto& l : label_names) {
    auto lower = text::to_lower_ascii(text::trim(l));
    if (!lower.empty()) needles.push_back(std::move(lower));
  }
  // Longest first so "upper respiratory infection" wins over "infection".
  std::sort(needles.begin(), needles.end(),
            [](const auto& a, const auto& b) { return a.size() != b.size() ? a.size() > b.size() : a < b; });
  const std::string lower = text::to_lower_ascii(input);
  std::string out;
  out.reserve(input.size());
  std::size_t i = 0;
  while (i < input.size()) {
    bool hit = false;
    for (const auto& n : needles) {
      if (lower.compare(i, n.size(), n) == 0) {
        out += kRedacted;
        i += n.size();
        hit = true;
        break;
      }
    }
    if (!hit) out += input[i++];
  }
  return out;
}

Demographics parse_demographics(std::string_view input) {
  static const std::regex sex_first(
      R"(\(\s*(female|male|woman|man|girl|boy)\s*,\s*(\d{1,3})\s*(?:years?|yrs?)(?:\s*old)?\s*\))",
      std::regex::icase);
  static const std::regex age_first(
      R"(\(\s*(\d{1,3})\s*(?:years?|yrs?)(?:\s*old)?\s*,\s*(female|male|woman|man|girl|boy)\s*\))",
      std::regex::icase);
  const std::string s(input);
  std::smatch m;
  Demographics d;
  if (std::regex_search(s, m, sex_first)) {
    d.sex = parse_sex(m[1].str());
    d.age = std::stoi(m[2].str());
  } else if (std::regex_search(s, m, age_first)) {
    d.age = std::stoi(m[1].str());
    d.sex = parse_sex(m[2].str());
  }
  return d;
}

EPR ingest_dialog(const std::string& report_id, const std::vector<Utterance>& utterances,
                  const std::vector<std::string>& label_names, EprSource source) {
  std::vector<std::string> lines;
  std::string patient_text;
  bool any_patient = false;
  for (const auto& u : utterances) {
    const auto t = text::trim(u.text);
    if (t.empty()) continue;
    if (is_patient_speaker(u.speaker)) {
      any_patient = true;
      lines.push_back(t);
      patient_text += t + "\n";
    } else {
      lines.push_back("Doctor asked: " + t);
    }
  }
  if (!any_patient) fail(ErrorCode::EmptyDialogue, "dialogue has no patient utterance");
  EPR epr;
  epr.report_id = report_id;
  epr.demographics = parse_demographics(patient_text);
  epr.narrative = scrub_labels(text::join(lines, "\n"), label_names);
  epr.source = source;
  return epr;
}

EPR ingest_report(const std::string& report_id, const std::string& narrative,
                  const std::vector<std::string>& label_names) {
  const auto t = text::trim(narrative);
  if (t.empty()) fail(ErrorCode::EmptyText, "report narrative is empty");
  EPR epr;
  epr.report_id = report_id;
  epr.demographics = parse_demographics(t);
  epr.narrative = scrub_labels(t, label_names);
  epr.source = EprSource::Report;
  return epr;
}

// ---------------------------------------------------------------------------
// Examples

std::vector<std::string> label_set(const std::vector<LabeledExample>& examples) {
  std::set<std::string> names;
  for (const auto& e : examples) {
    for (const auto& [name, v] : e.labels) names.insert(name);
  }
  return {names.begin(), names.end()};
}

gbdt::LabelMatrix label_matrix(const std::vector<LabeledExample>& examples,
                               const std::vector<std::string>& label_names) {
  gbdt::LabelMatrix y;
  y.reserve(examples.size());
  for (const auto& e : examples) {
    std::vector<int> row(label_names.size(), 0);
    for (std::size_t l = 0; l < label_names.size(); ++l) {
      const auto it = e.labels.find(label_names[l]);
      row[l] = (it != e.labels.end() && it->second != 0) ? 1 : 0;
    }
    y.push_back(std::move(row));
  }
  return y;
}

std::vector<LabeledExample> load_examples_jsonl(const std::string& path,
                                                const std::vector<std::string>& label_names) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open examples: " + path);
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Parse, fmt::format("{}:{}: {}", path, line_no, e.what()));
    }
  }
  std::vector<std::string> labels = label_names;
  if (labels.empty()) {
    std::set<std::string> names;
    for (const auto& r : rows) {
      if (r.contains("labels") && r["labels"].is_object()) {
        for (const auto& [k, v] : r["labels"].items()) names.insert(k);
      }
    }
    labels.assign(names.begin(), names.end());
  }
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    try {
      LabeledExample ex;
      const auto id = r.at("report_id").get<std::string>();
      if (r.contains("utterances")) {
        std::vector<Utterance> utts;
        for (const auto& u : r["utterances"]) {
          utts.push_back({u.at("speaker").get<std::string>(), u.at("text").get<std::string>()});
        }
        ex.epr = ingest_dialog(id, utts, labels);
      } else {
        ex.epr = ingest_report(id, r.at("narrative").get<std::string>(), labels);
        if (r.contains("source")) ex.epr.source = parse_source(r["source"].get<std::string>());
      }
      if (r.contains("demographics")) {
        const auto d = demographics_from_json(r["demographics"]);
        if (d.age) ex.epr.demographics.age = d.age;
        if (d.sex) ex.epr.demographics.sex = d.sex;
      }
      for (const auto& [k, v] : r.at("labels").items()) ex.labels[k] = v.get<int>() != 0 ? 1 : 0;
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Parse, fmt::format("{}: example {}: {}", path, i + 1, e.what()));
    }
  }
  return out;
}

void save_examples_jsonl(const std::vector<LabeledExample>& examples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write examples: " + path);
  for (const auto& e : examples) {
    nlohmann::json labels = nlohmann::json::object();
    for (const auto& [k, v] : e.labels) labels[k] = v;
    const nlohmann::json row = {{"report_id", e.epr.report_id},
                                {"narrative", e.epr.narrative},
                                {"demographics", demographics_json(e.epr.demographics)},
                                {"source", source_name(e.epr.source)},
                                {"labels", labels}};
    out << row.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// DiagnosisResult

nlohmann::json DiagnosisResult::to_json() const {
  nlohmann::json probs = nlohmann::json::object();
  for (const auto& [k, v] : probabilities) probs[k] = v;
  return {{"report_id", report_id},
          {"probabilities", probs},
          {"predicted", predicted},
          {"advice", advice ? nlohmann::json(*advice) : nlohmann::json(nullptr)}};
}

DiagnosisResult DiagnosisResult::from_json(const nlohmann::json& j) {
  DiagnosisResult r;
  try {
    r.report_id = j.at("report_id").get<std::string>();
    r.probabilities = j.at("probabilities").get<std::map<std::string, double>>();
    r.predicted = j.at("predicted").get<std::vector<std::string>>();
    if (j.contains("advice") && !j["advice"].is_null()) r.advice = j["advice"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed diagnosis: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Config

PipelineConfig::PipelineConfig() { apply_seed(seed); }

void PipelineConfig::apply_seed(std::uint64_t s) {
  seed = s;
  provider.seed = s;
  train.seed = s;
  caafe.loop.cv.seed = s;
}

std::string mode_name(metrics::DecisionMode mode) {
  return mode == metrics::DecisionMode::CaseStudyTop1 ? "top1" : "multilabel";
}

metrics::DecisionMode parse_mode(const std::string& name) {
  if (name == "top1" || name == "case_study_top1") return metrics::DecisionMode::CaseStudyTop1;
  if (name == "multilabel") return metrics::DecisionMode::MultiLabel;
  fail(ErrorCode::Config, "unknown decision mode '" + name + "'");
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json proposals = nlohmann::json::array();
  for (const auto& p : caafe.proposals) {
    proposals.push_back({{"name", p.name}, {"expression", p.expression}, {"rationale", p.rationale}});
  }
  return {
      {"seed", seed},
      {"paths",
       {{"corpus", corpus_path}, {"bank", bank_path}, {"examples", examples_path}, {"artifacts", artifacts_dir}}},
      {"provider", provider.to_json()},
      {"chunk", {{"chunk_size_chars", chunk.chunk_size_chars}, {"overlap_chars", chunk.overlap_chars}}},
      {"score", {{"k", score.k}, {"report_head_chars", score.report_head_chars}, {"workers", score.workers}}},
      {"train", train.to_json()},
      {"caafe",
       {{"enabled", caafe.enabled},
        {"source", caafe.source},
        {"proposals", proposals},
        {"proposal_k", caafe.proposal_k},
        {"max_iters", caafe.loop.max_iters},
        {"epsilon_accept", caafe.loop.epsilon_accept},
        {"corr_merge", caafe.loop.corr_merge},
        {"merge", caafe.loop.merge},
        {"prune", caafe.loop.prune},
        {"folds", caafe.loop.cv.folds},
        {"seed", caafe.loop.cv.seed}}},
      {"eval",
       {{"mode", mode_name(mode)},
        {"threshold", threshold},
        {"test_fraction", test_fraction},
        {"label", report_label}}},
      {"advice", {{"enabled", advice}, {"k", advice_k}}},
  };
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const std::string& base_dir) {
  PipelineConfig c;
  try {
    if (j.contains("seed")) c.apply_seed(j["seed"].get<std::uint64_t>());
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      c.corpus_path = resolve(base_dir, p.value("corpus", c.corpus_path));
      c.bank_path = resolve(base_dir, p.value("bank", c.bank_path));
      c.examples_path = resolve(base_dir, p.value("examples", c.examples_path));
      c.artifacts_dir = resolve(base_dir, p.value("artifacts", c.artifacts_dir));
    }
    if (j.contains("provider")) {
      auto p = llm::ProviderConfig::from_json(j["provider"]);
      if (!p.seed) p.seed = c.seed;
      p.script_path = resolve(base_dir, p.script_path);
      c.provider = std::move(p);
    }
    if (j.contains("chunk")) {
      c.chunk.chunk_size_chars = j["chunk"].value("chunk_size_chars", c.chunk.chunk_size_chars);
      c.chunk.overlap_chars = j["chunk"].value("overlap_chars", c.chunk.overlap_chars);
    }
    if (j.contains("score")) {
      const auto& s = j["score"];
      c.score.k = s.value("k", c.score.k);
      c.score.report_head_chars = s.value("report_head_chars", c.score.report_head_chars);
      c.score.workers = s.value("workers", c.score.workers);
    }
    if (j.contains("train")) {
      nlohmann::json t = j["train"];
      if (!t.contains("seed")) t["seed"] = c.seed;
      c.train = gbdt::TrainConfig::from_json(t);
    }
    if (j.contains("caafe")) {
      const auto& a = j["caafe"];
      c.caafe.enabled = a.value("enabled", c.caafe.enabled);
      c.caafe.source = a.value("source", c.caafe.source);
      if (c.caafe.source != "provider" && c.caafe.source != "scripted") {
        fail(ErrorCode::Config, "caafe.source must be 'provider' or 'scripted'");
      }
      if (a.contains("proposals")) {
        for (const auto& p : a["proposals"]) {
          c.caafe.proposals.push_back({p.at("name").get<std::string>(), p.at("expression").get<std::string>(),
                                       p.value("rationale", std::string())});
        }
      }
      c.caafe.proposal_k = a.value("proposal_k", c.caafe.proposal_k);
      c.caafe.loop.max_iters = a.value("max_iters", c.caafe.loop.max_iters);
      c.caafe.loop.epsilon_accept = a.value("epsilon_accept", c.caafe.loop.epsilon_accept);
      c.caafe.loop.corr_merge = a.value("corr_merge", c.caafe.loop.corr_merge);
      c.caafe.loop.merge = a.value("merge", c.caafe.loop.merge);
      c.caafe.loop.prune = a.value("prune", c.caafe.loop.prune);
      c.caafe.loop.cv.folds = a.value("folds", c.caafe.loop.cv.folds);
      c.caafe.loop.cv.seed = a.value("seed", c.caafe.loop.cv.seed);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      c.mode = parse_mode(e.value("mode", mode_name(c.mode)));
      c.threshold = e.value("threshold", c.threshold);
      c.test_fraction = e.value("test_fraction", c.test_fraction);
      c.report_label = e.value("label", c.report_label);
    }
    if (j.contains("advice")) {
      c.advice = j["advice"].value("enabled", c.advice);
      c.advice_k = j["advice"].value("k", c.advice_k);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, std::string("bad pipeline config: ") + e.what());
  }
  c.caafe.loop.cv.mode = c.mode;
  c.caafe.loop.cv.threshold = c.threshold;
  c.chunk.validate();
  c.train.validate();
  c.provider.validate();
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) fail(ErrorCode::Config, "test_fraction must be in (0, 1)");
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, path + ": " + e.what());
  }
  return from_json(j, fs::path(path).parent_path().string());
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) fail(ErrorCode::Config, "override must be key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &config;
  for (const auto& part : text::split(key, '.')) {
    if (part.empty()) fail(ErrorCode::Config, "bad override key: " + key);
    if (!node->is_object()) *node = nlohmann::json::object();
    node = &(*node)[part];
  }
  *node = std::move(value);
}

// ---------------------------------------------------------------------------
// Trained pipeline

void TrainedPipeline::check_manifest() const {
  const auto& m = model.manifest;
  if (m.bank_digest != bank.bank_digest) fail(ErrorCode::DigestMismatch, "model was trained on another question bank");
  if (m.revision_digest != revision.digest()) {
    fail(ErrorCode::DigestMismatch, "model was trained with another feature revision");
  }
  if (m.index_digest != index.build_digest()) fail(ErrorCode::DigestMismatch, "model was trained with another index");
  if (model.feature_names != revision.columns(bank.feature_names())) {
    fail(ErrorCode::DigestMismatch, "model features do not match bank plus revision");
  }
}

void TrainedPipeline::save(const std::string& dir) const {
  fs::create_directories(dir);
  index.save((fs::path(dir) / "index.json").string());
  scoring::save_question_bank(bank, (fs::path(dir) / "bank.json").string());
  revision.save((fs::path(dir) / "revision.json").string());
  model.save((fs::path(dir) / "model.json").string());
  const nlohmann::json meta = {
      {"schema_version", 1},
      {"score", {{"k", score.k}, {"report_head_chars", score.report_head_chars}, {"workers", score.workers}}},
      {"mode", mode_name(mode)},
      {"threshold", threshold}};
  std::ofstream out(fs::path(dir) / "pipeline.json");
  if (!out) fail(ErrorCode::Io, "cannot write pipeline metadata in " + dir);
  out << meta.dump(2) << '\n';
}

TrainedPipeline TrainedPipeline::load(const std::string& dir, int expected_dim) {
  TrainedPipeline tp;
  tp.index = rag::VectorIndex::load((fs::path(dir) / "index.json").string(), expected_dim);
  tp.bank = scoring::load_question_bank((fs::path(dir) / "bank.json").string());
  tp.revision = lab::FeatureSetRevision::load((fs::path(dir) / "revision.json").string());
  tp.model = gbdt::BoostModel::load((fs::path(dir) / "model.json").string());
  const auto meta_path = fs::path(dir) / "pipeline.json";
  std::ifstream in(meta_path);
  if (!in) fail(ErrorCode::Io, "cannot open " + meta_path.string());
  try {
    const auto meta = nlohmann::json::parse(in);
    if (meta.value("schema_version", 0) != 1) fail(ErrorCode::VersionMismatch, "unsupported pipeline metadata");
    const auto& s = meta.at("score");
    tp.score.k = s.at("k").get<std::size_t>();
    tp.score.report_head_chars = s.at("report_head_chars").get<std::size_t>();
    tp.score.workers = s.value("workers", 1);
    tp.mode = parse_mode(meta.at("mode").get<std::string>());
    tp.threshold = meta.at("threshold").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, meta_path.string() + ": " + e.what());
  }
  tp.check_manifest();
  return tp;
}

// ---------------------------------------------------------------------------
// Training

std::vector<scoring::FeatureVector> score_examples(const std::vector<LabeledExample>& examples,
                                                   const scoring::QuestionBank& bank,
                                                   const rag::VectorIndex& index, llm::Gateway& gateway,
                                                   const scoring::ScoreOptions& options,
                                                   const lab::FeatureSetRevision* revision,
                                                   scoring::ScoreLog* log) {
  std::vector<scoring::FeatureVector> rows;
  rows.reserve(examples.size());
  for (const auto& e : examples) {
    rows.push_back(scoring::build_feature_vector(e.epr.report_id, report_text(e.epr), bank, &index, gateway,
                                                 revision, options, log));
  }
  return rows;
}

namespace {

std::string build_digest(const PipelineConfig& config) {
  nlohmann::json j = config.to_json();
  j.erase("paths");
  j["provider"].erase("script");
  return sha256_hex(j.dump());
}

}  // namespace

TrainedPipeline train_with_index(rag::VectorIndex index, const scoring::QuestionBank& bank,
                                 const std::vector<LabeledExample>& examples,
                                 const std::vector<std::string>& label_names, llm::Gateway& gateway,
                                 const PipelineConfig& config, TrainReport* report) {
  if (examples.empty()) fail(ErrorCode::EmptyTestset, "no training examples");
  TrainReport local;
  TrainReport& rep = report != nullptr ? *report : local;

  rep.base_matrix = score_examples(examples, bank, index, gateway, config.score, nullptr, &rep.score_log);
  spdlog::info("scored {} examples x {} questions ({} missing)", examples.size(), bank.questions.size(),
               rep.score_log.missing);
  const auto y = label_matrix(examples, label_names);
  const auto base = lab::Dataset::from_vectors(rep.base_matrix, bank.feature_names(), y, label_names);

  TrainedPipeline tp;
  if (config.caafe.enabled) {
    std::map<std::string, std::string> descriptions;
    for (const auto& q : bank.questions) descriptions[q.feature_name] = q.text;
    const std::string description =
        fmt::format("Patient health reports scored against {} questions; labels: {}.", bank.questions.size(),
                    text::join(label_names, ", "));
    auto loop = config.caafe.loop;
    loop.cv.mode = config.mode;
    loop.cv.threshold = config.threshold;
    if (config.caafe.source == "scripted") {
      lab::ScriptedProposals source(config.caafe.proposals);
      tp.revision = lab::caafe_loop(base, source, config.train, loop, descriptions, description);
    } else {
      lab::ProviderProposals source(gateway, &index, config.caafe.proposal_k);
      tp.revision = lab::caafe_loop(base, source, config.train, loop, descriptions, description);
    }
  }

  lab::Dataset data = base;
  if (!tp.revision.empty()) {
    auto rows = rep.base_matrix;
    for (auto& fv : rows) lab::apply_revision(tp.revision, fv);
    data = lab::Dataset::from_vectors(rows, tp.revision.columns(bank.feature_names()), y, label_names);
  }
  tp.model = gbdt::train(data.x, data.y, data.columns, label_names, config.train, &rep.train_log);
  tp.model.manifest = {bank.bank_digest, tp.revision.digest(), index.build_digest(), build_digest(config)};
  tp.index = std::move(index);
  tp.bank = bank;
  tp.score = config.score;
  tp.mode = config.mode;
  tp.threshold = config.threshold;
  return tp;
}

TrainedPipeline run_training(const rag::Corpus& corpus, const scoring::QuestionBank& bank,
                             const std::vector<LabeledExample>& examples,
                             const std::vector<std::string>& label_names, llm::Gateway& gateway,
                             const PipelineConfig& config, TrainReport* report) {
  auto index = rag::build_index(corpus, config.chunk, gateway);
  return train_with_index(std::move(index), bank, examples, label_names, gateway, config, report);
}

// ---------------------------------------------------------------------------
// Prediction

std::vector<std::string> decide(const std::map<std::string, double>& probabilities,
                                const std::vector<std::string>& label_names, metrics::DecisionMode mode,
                                double threshold) {
  std::vector<double> probs;
  for (const auto& l : label_names) probs.push_back(probabilities.at(l));
  if (mode == metrics::DecisionMode::CaseStudyTop1) return {label_names[metrics::argmax_label(probs, label_names)]};
  std::vector<std::string> out;
  for (auto i : metrics::threshold_labels(probs, threshold)) out.push_back(label_names[i]);
  std::sort(out.begin(), out.end(), [&](const auto& a, const auto& b) {
    const double pa = probabilities.at(a);
    const double pb = probabilities.at(b);
    return pa != pb ? pa > pb : a < b;
  });
  return out;
}

DiagnosisResult predict_report(const TrainedPipeline& tp, const EPR& epr, llm::Gateway& gateway,
                               metrics::DecisionMode mode, double threshold) {
  tp.check_manifest();
  const auto fv = scoring::build_feature_vector(epr.report_id, report_text(epr), tp.bank, &tp.index, gateway,
                                                tp.revision.empty() ? nullptr : &tp.revision, tp.score);
  DiagnosisResult r;
  r.report_id = epr.report_id;
  r.probabilities = tp.model.predict_proba(fv);
  r.predicted = decide(r.probabilities, tp.label_names(), mode, threshold);
  return r;
}

DiagnosisResult predict_report(const TrainedPipeline& tp, const EPR& epr, llm::Gateway& gateway) {
  return predict_report(tp, epr, gateway, tp.mode, tp.threshold);
}

std::string generate_advice(const DiagnosisResult& result, const EPR& epr, const rag::VectorIndex& index,
                            llm::Gateway& gateway, std::size_t k) {
  if (result.predicted.empty()) fail(ErrorCode::NoPrediction, "no predicted condition to advise on");
  llm::PromptRequest req;
  req.system_text = std::string(prompts::kAdviceSystem);
  std::set<std::uint64_t> seen;
  if (!index.empty()) {
    for (const auto& label : result.predicted) {
      for (auto& hit : rag::retrieve(index, label, k, gateway)) {
        if (seen.insert(hit.chunk.chunk_id).second) req.context_blocks.push_back(std::move(hit.chunk.text));
      }
    }
  }
  req.user_text = "Predicted conditions: " + text::join(result.predicted, "; ") + "\n\nPatient record:\n" +
                  report_text(epr);
  auto text = text::trim(gateway.complete(req).text);
  if (text.empty()) fail(ErrorCode::EmptyGeneration, "provider returned empty advice");
  return text;
}

void attach_advice(DiagnosisResult& result, const EPR& epr, const rag::VectorIndex& index,
                   llm::Gateway& gateway, std::size_t k) {
  if (result.predicted.empty()) return;
  try {
    result.advice = generate_advice(result, epr, index, gateway, k);
  } catch (const Error& e) {
    spdlog::warn("advice generation failed ({}): {}", to_string(e.code()), e.what());
    result.advice.reset();
  }
}

// ---------------------------------------------------------------------------
// Evaluation

nlohmann::json Evaluation::to_json() const {
  nlohmann::json res = nlohmann::json::array();
  for (const auto& r : results) res.push_back(r.to_json());
  return {{"metrics", metrics.to_json()},
          {"counts", {{"tp", counts.tp}, {"fp", counts.fp}, {"fn", counts.fn}, {"exact", counts.exact},
                      {"total", counts.total}}},
          {"results", res}};
}

Evaluation evaluate(const TrainedPipeline& tp, const std::vector<LabeledExample>& testset,
                    llm::Gateway& gateway) {
  if (testset.empty()) fail(ErrorCode::EmptyTestset, "test set is empty");
  const auto& labels = tp.label_names();
  const auto y = label_matrix(testset, labels);
  Evaluation ev;
  for (const auto& e : testset) ev.results.push_back(predict_report(tp, e.epr, gateway));
  if (tp.mode == metrics::DecisionMode::CaseStudyTop1) {
    std::vector<std::size_t> gold;
    std::vector<std::size_t> pred;
    for (std::size_t i = 0; i < testset.size(); ++i) {
      const int g = first_positive(y[i]);
      if (g < 0) fail(ErrorCode::ShapeMismatch, "example " + testset[i].epr.report_id + " has no gold label");
      gold.push_back(static_cast<std::size_t>(g));
      const auto& p = ev.results[i].predicted.front();
      pred.push_back(static_cast<std::size_t>(std::find(labels.begin(), labels.end(), p) - labels.begin()));
    }
    ev.counts = metrics::count_top1(gold, pred, labels.size());
  } else {
    std::vector<std::vector<int>> pred;
    for (const auto& r : ev.results) {
      std::vector<int> row(labels.size(), 0);
      for (const auto& p : r.predicted) {
        row[static_cast<std::size_t>(std::find(labels.begin(), labels.end(), p) - labels.begin())] = 1;
      }
      pred.push_back(std::move(row));
    }
    ev.counts = metrics::count_multilabel(y, pred);
  }
  ev.metrics = metrics::from_counts(ev.counts, labels);
  return ev;
}

std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>> split_examples(
    const std::vector<LabeledExample>& examples, double test_fraction, std::uint64_t seed) {
  const std::size_t n = examples.size();
  const auto labels = label_set(examples);
  const auto y = label_matrix(examples, labels);
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < n; ++i) strata[first_positive(y[i])].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> order;
  for (auto& [s, rows] : strata) {
    rng.shuffle(rows.begin(), rows.end());
    order.insert(order.end(), rows.begin(), rows.end());
  }
  std::size_t t = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  if (n >= 2) t = std::clamp<std::size_t>(t, 1, n - 1);
  else t = 0;
  std::vector<bool> is_test(n, false);
  // Evenly spaced picks along the stratum-ordered list keep every class represented.
  for (std::size_t i = 0; i < n; ++i) {
    if ((i + 1) * t / n > i * t / n) is_test[order[i]] = true;
  }
  std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>> out;
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? out.second : out.first).push_back(examples[i]);
  return out;
}

ExperimentResult run_experiment(const rag::Corpus& corpus, const scoring::QuestionBank& bank,
                                const std::vector<LabeledExample>& examples, llm::Gateway& gateway,
                                const PipelineConfig& config) {
  const auto labels = label_set(examples);
  auto [train, test] = split_examples(examples, config.test_fraction, config.seed);
  ExperimentResult out;
  out.pipeline = run_training(corpus, bank, train, labels, gateway, config, &out.report);
  out.evaluation = evaluate(out.pipeline, test, gateway);
  return out;
}

PipelineConfig variant_config(const PipelineConfig& base, const std::string& variant) {
  PipelineConfig c = base;
  if (variant == "full") return c;
  if (variant == "no_retrieval") {
    c.score.k = 0;
    return c;
  }
  if (variant == "no_caafe") {
    c.caafe.enabled = false;
    c.caafe.loop.max_iters = 0;
    return c;
  }
  fail(ErrorCode::Config, "unknown ablation variant '" + variant + "'");
}

std::map<std::string, metrics::Metrics> run_ablation(const rag::Corpus& corpus,
                                                     const scoring::QuestionBank& bank,
                                                     const std::vector<LabeledExample>& examples,
                                                     llm::Gateway& gateway, const PipelineConfig& config) {
  const auto labels = label_set(examples);
  const auto [train, test] = split_examples(examples, config.test_fraction, config.seed);
  const auto index = rag::build_index(corpus, config.chunk, gateway);
  std::map<std::string, metrics::Metrics> out;
  for (const auto& v : kAblationVariants) {
    spdlog::info("ablation variant {}", v);
    const auto tp = train_with_index(index, bank, train, labels, gateway, variant_config(config, v));
    out[v] = evaluate(tp, test, gateway).metrics;
  }
  return out;
}

std::string render_row(const std::string& label, const metrics::Metrics& m) {
  return fmt::format("{:<32} {:.3f}  {:.3f}", label, m.accuracy, m.macro_f1);
}

std::string render_metrics_table(const std::string& label, const metrics::Metrics& m) {
  return fmt::format("{:<32} {:<5}  {:<5}\n", "Method", "ACC", "F1") + render_row(label, m) + "\n";
}

std::string render_ablation_table(const std::string& label,
                                  const std::map<std::string, metrics::Metrics>& variants) {
  std::string out = fmt::format("{:<32} {:<5}  {:<5}\n", "Method", "ACC", "F1");
  const std::vector<std::pair<std::string, std::string>> rows = {
      {"full", label}, {"no_retrieval", label + " without retrieval"}, {"no_caafe", label + " without CAAFE"}};
  for (const auto& [key, name] : rows) {
    const auto it = variants.find(key);
    if (it != variants.end()) out += render_row(name, it->second) + "\n";
  }
  return out;
}

}  // namespace medrag::pipeline
