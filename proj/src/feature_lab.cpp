#include "medrag/feature_lab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "medrag/digest.hpp"
#include "medrag/error.hpp"
#include "medrag/prompts.hpp"
#include "medrag/random.hpp"
#include "medrag/text.hpp"

namespace medrag::lab {

namespace {

std::string merge_expression(const MergeRecord& m) {
  return "(" + m.sources.at(0) + " + " + m.sources.at(1) + ") / 2";
}

void erase_name(std::vector<std::string>& names, const std::string& name) {
  names.erase(std::remove(names.begin(), names.end(), name), names.end());
}

}  // namespace

// ---------------------------------------------------------------------------
// FeatureSetRevision

std::vector<std::string> FeatureSetRevision::columns(const std::vector<std::string>& base) const {
  std::vector<std::string> cols = base;
  for (const auto& [name, expr] : accepted) cols.push_back(name);
  for (const auto& m : merged) {
    const auto first = std::find(cols.begin(), cols.end(), m.sources.at(0));
    if (first == cols.end()) fail(ErrorCode::UnresolvedIdent, "merge source missing: " + m.sources[0]);
    *first = m.merged_name;
    erase_name(cols, m.sources.at(1));
  }
  for (const auto& d : deleted) erase_name(cols, d);
  return cols;
}

nlohmann::json FeatureSetRevision::to_json() const {
  nlohmann::json j;
  j["accepted"] = nlohmann::json::array();
  for (const auto& [name, expr] : accepted) {
    j["accepted"].push_back({{"name", name}, {"expr", to_string(expr)}});
  }
  j["merged"] = nlohmann::json::array();
  for (const auto& m : merged) j["merged"].push_back({{"name", m.merged_name}, {"sources", m.sources}});
  j["deleted"] = deleted;
  j["ledger"] = nlohmann::json::array();
  for (const auto& e : ledger) {
    j["ledger"].push_back({{"name", e.candidate.name},
                           {"expression", e.candidate.expression},
                           {"rationale", e.candidate.rationale},
                           {"cv_delta", e.cv_delta ? nlohmann::json(*e.cv_delta) : nlohmann::json(nullptr)},
                           {"decision", e.decision == Decision::Accept ? "accept" : "reject"},
                           {"note", e.note}});
  }
  j["initial_cv_macro_f1"] = initial_cv_macro_f1;
  j["final_cv_macro_f1"] = final_cv_macro_f1;
  j["digest"] = sha256_hex(j.dump());
  return j;
}

std::string FeatureSetRevision::digest() const { return to_json().at("digest").get<std::string>(); }

FeatureSetRevision FeatureSetRevision::from_json(const nlohmann::json& j) {
  FeatureSetRevision r;
  try {
    for (const auto& a : j.at("accepted")) {
      r.accepted.emplace_back(a.at("name").get<std::string>(), parse_expr(a.at("expr").get<std::string>()));
    }
    for (const auto& m : j.at("merged")) {
      r.merged.push_back({m.at("name").get<std::string>(), m.at("sources").get<std::vector<std::string>>()});
      if (r.merged.back().sources.size() != 2) fail(ErrorCode::Parse, "merge needs two sources");
    }
    r.deleted = j.at("deleted").get<std::vector<std::string>>();
    for (const auto& e : j.at("ledger")) {
      LedgerEntry entry;
      entry.candidate = {e.at("name").get<std::string>(), e.at("expression").get<std::string>(),
                         e.value("rationale", std::string())};
      if (!e.at("cv_delta").is_null()) entry.cv_delta = e.at("cv_delta").get<double>();
      entry.decision = e.at("decision").get<std::string>() == "accept" ? Decision::Accept : Decision::Reject;
      entry.note = e.value("note", std::string());
      r.ledger.push_back(std::move(entry));
    }
    r.initial_cv_macro_f1 = j.value("initial_cv_macro_f1", 0.0);
    r.final_cv_macro_f1 = j.value("final_cv_macro_f1", 0.0);
    if (j.contains("digest") && j.at("digest").get<std::string>() != r.digest()) {
      fail(ErrorCode::DigestMismatch, "revision digest does not match its contents");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed revision: ") + e.what());
  }
  return r;
}

void FeatureSetRevision::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write revision: " + path);
  out << to_json().dump(2) << '\n';
}

FeatureSetRevision FeatureSetRevision::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open revision: " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, path + ": " + e.what());
  }
}

void apply_revision(const FeatureSetRevision& revision, scoring::FeatureVector& fv) {
  for (const auto& [name, expr] : revision.accepted) {
    fv.values.insert_or_assign(name, eval_expr(expr, fv));
  }
  for (const auto& m : revision.merged) {
    fv.values.insert_or_assign(m.merged_name, eval_expr(parse_expr(merge_expression(m)), fv));
  }
  for (const auto& m : revision.merged) {
    for (const auto& s : m.sources) fv.values.erase(s);
  }
  for (const auto& d : revision.deleted) fv.values.erase(d);
}

// ---------------------------------------------------------------------------
// Dataset

Dataset Dataset::from_vectors(const std::vector<scoring::FeatureVector>& rows,
                              const std::vector<std::string>& columns, gbdt::LabelMatrix y,
                              std::vector<std::string> label_names) {
  if (rows.size() != y.size()) fail(ErrorCode::ShapeMismatch, "feature rows and label rows differ");
  Dataset d;
  d.columns = columns;
  d.x = gbdt::Matrix(rows.size(), columns.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto it = rows[r].values.find(columns[c]);
      if (it != rows[r].values.end() && it->second) d.x.at(r, c) = *it->second;
    }
  }
  d.y = std::move(y);
  d.label_names = std::move(label_names);
  return d;
}

std::size_t Dataset::column_index(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) fail(ErrorCode::UnresolvedIdent, "unknown column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

bool Dataset::has_column(const std::string& name) const {
  return std::find(columns.begin(), columns.end(), name) != columns.end();
}

Dataset Dataset::with_column(const std::string& name, std::span<const double> values) const {
  Dataset d;
  d.columns = columns;
  d.columns.push_back(name);
  d.x = x.with_column(values);
  d.y = y;
  d.label_names = label_names;
  return d;
}

Dataset Dataset::without_columns(const std::vector<std::string>& names) const {
  const std::set<std::string> drop(names.begin(), names.end());
  std::vector<std::size_t> keep;
  Dataset d;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (!drop.count(columns[c])) {
      keep.push_back(c);
      d.columns.push_back(columns[c]);
    }
  }
  d.x = x.select_columns(keep);
  d.y = y;
  d.label_names = label_names;
  return d;
}

std::vector<double> eval_column(const FeatureExpr& expr, const Dataset& data) {
  std::vector<std::pair<std::string, std::size_t>> refs;
  for (const auto& name : expr.identifiers()) refs.emplace_back(name, data.column_index(name));
  std::vector<double> out(data.x.rows(), gbdt::kMissing);
  for (std::size_t r = 0; r < data.x.rows(); ++r) {
    const auto v = eval_expr(expr, [&](std::string_view name) -> std::optional<scoring::Score> {
      for (const auto& [n, c] : refs) {
        if (n == name) {
          const double cell = data.x.at(r, c);
          return gbdt::is_missing(cell) ? scoring::Score{} : scoring::Score{cell};
        }
      }
      return std::nullopt;
    });
    if (v) out[r] = *v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation

std::vector<int> stratified_folds(const gbdt::LabelMatrix& y, int folds, std::uint64_t seed) {
  if (folds < 2) fail(ErrorCode::Config, "cross-validation needs at least 2 folds");
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t r = 0; r < y.size(); ++r) {
    int stratum = -1;
    for (std::size_t l = 0; l < y[r].size(); ++l) {
      if (y[r][l]) {
        stratum = static_cast<int>(l);
        break;
      }
    }
    strata[stratum].push_back(r);
  }
  Rng rng(seed);
  std::vector<int> fold_of(y.size(), 0);
  std::size_t offset = 0;
  for (auto& [stratum, rows] : strata) {
    rng.shuffle(rows.begin(), rows.end());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      fold_of[rows[i]] = static_cast<int>((offset + i) % static_cast<std::size_t>(folds));
    }
    offset += rows.size();
  }
  return fold_of;
}

double cv_macro_f1(const Dataset& data, const gbdt::TrainConfig& train, const CvConfig& cv,
                   const std::vector<int>& fold_of) {
  if (fold_of.size() != data.x.rows()) fail(ErrorCode::ShapeMismatch, "fold assignment length differs");
  const std::size_t n_labels = data.label_names.size();
  double total = 0.0;
  int used = 0;
  for (int k = 0; k < cv.folds; ++k) {
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
    for (std::size_t r = 0; r < fold_of.size(); ++r) (fold_of[r] == k ? test_rows : train_rows).push_back(r);
    if (test_rows.empty() || train_rows.empty()) continue;
    gbdt::LabelMatrix train_y;
    for (auto r : train_rows) train_y.push_back(data.y[r]);
    const auto model = gbdt::train(data.x.select_rows(train_rows), train_y, data.columns,
                                   data.label_names, train);
    metrics::ConfusionCounts counts;
    if (cv.mode == metrics::DecisionMode::CaseStudyTop1) {
      std::vector<std::size_t> gold;
      std::vector<std::size_t> pred;
      for (auto r : test_rows) {
        const auto& row = data.y[r];
        const auto pos = std::find(row.begin(), row.end(), 1);
        if (pos == row.end()) fail(ErrorCode::ShapeMismatch, "top-1 mode needs a positive label per row");
        gold.push_back(static_cast<std::size_t>(pos - row.begin()));
        pred.push_back(metrics::argmax_label(model.predict_proba(data.x.row(r)), data.label_names));
      }
      counts = metrics::count_top1(gold, pred, n_labels);
    } else {
      std::vector<std::vector<int>> gold;
      std::vector<std::vector<int>> pred;
      for (auto r : test_rows) {
        gold.push_back(data.y[r]);
        std::vector<int> p(n_labels, 0);
        for (auto l : metrics::threshold_labels(model.predict_proba(data.x.row(r)), cv.threshold)) p[l] = 1;
        pred.push_back(std::move(p));
      }
      counts = metrics::count_multilabel(gold, pred);
    }
    total += metrics::from_counts(counts, data.label_names).macro_f1;
    ++used;
  }
  return used == 0 ? 0.0 : total / used;
}

double cv_macro_f1(const Dataset& data, const gbdt::TrainConfig& train, const CvConfig& cv) {
  return cv_macro_f1(data, train, cv, stratified_folds(data.y, cv.folds, cv.seed));
}

namespace {

// Throws when the candidate cannot be evaluated against the data.
FeatureExpr checked_expression(const CandidateFeature& candidate, const Dataset& data) {
  if (!text::is_feature_name(candidate.name)) {
    fail(ErrorCode::BadFeatureName, "bad candidate name '" + candidate.name + "'");
  }
  if (data.has_column(candidate.name)) {
    fail(ErrorCode::DuplicateFeatureName, "candidate name '" + candidate.name + "' already exists");
  }
  auto expr = parse_expr(candidate.expression);
  for (const auto& id : expr.identifiers()) {
    if (!data.has_column(id)) fail(ErrorCode::UnresolvedIdent, "unknown feature '" + id + "'");
  }
  return expr;
}

}  // namespace

double evaluate_candidate(const CandidateFeature& candidate, const Dataset& data,
                          const gbdt::TrainConfig& train, const CvConfig& cv) {
  const auto expr = checked_expression(candidate, data);
  const auto folds = stratified_folds(data.y, cv.folds, cv.seed);
  const auto column = eval_column(expr, data);
  const double with = cv_macro_f1(data.with_column(candidate.name, column), train, cv, folds);
  const double without = cv_macro_f1(data, train, cv, folds);
  return with - without;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::ShapeMismatch, "pearson over different lengths");
  double n = 0.0;
  double sa = 0.0;
  double sb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (gbdt::is_missing(a[i]) || gbdt::is_missing(b[i])) continue;
    n += 1.0;
    sa += a[i];
    sb += b[i];
  }
  if (n < 2.0) return std::nullopt;
  const double ma = sa / n;
  const double mb = sb / n;
  double cov = 0.0;
  double va = 0.0;
  double vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (gbdt::is_missing(a[i]) || gbdt::is_missing(b[i])) continue;
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return std::nullopt;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Proposals

std::optional<CandidateFeature> ScriptedProposals::propose(const ProposalContext&) {
  if (next_ >= proposals_.size()) return std::nullopt;
  return proposals_[next_++];
}

llm::PromptRequest build_proposal_request(const ProposalContext& context,
                                          const std::vector<std::string>& knowledge) {
  llm::PromptRequest req;
  req.system_text = std::string(prompts::kProposalSystem);
  req.context_blocks = knowledge;
  std::string body;
  body += "Dataset: " + context.dataset_description + "\n";
  body += "Labels: " + text::join(context.data.label_names, ", ") + "\n";
  body += fmt::format("Rows: {}\n", context.data.x.rows());
  body += "Features: " + text::join(context.data.columns, ", ") + "\n";
  if (!context.descriptions.empty()) {
    body += "Feature descriptions:\n";
    for (const auto& c : context.data.columns) {
      const auto it = context.descriptions.find(c);
      if (it != context.descriptions.end()) body += "- " + c + ": " + it->second + "\n";
    }
  }
  std::vector<std::string> tried;
  std::vector<std::string> history;
  for (const auto& e : context.ledger) {
    tried.push_back(e.candidate.expression);
    history.push_back(fmt::format("- {} = {} -> {}{}", e.candidate.name, e.candidate.expression,
                                  e.decision == Decision::Accept ? "accepted" : "rejected",
                                  e.cv_delta ? fmt::format(" (cv delta {:.4f})", *e.cv_delta) : ""));
  }
  body += "Tried: " + text::join(tried, "; ") + "\n";
  if (!history.empty()) body += "History:\n" + text::join(history, "\n") + "\n";
  body += "Propose one new feature.";
  req.user_text = std::move(body);
  return req;
}

std::optional<CandidateFeature> parse_proposal(std::string_view completion) {
  CandidateFeature c;
  for (const auto& raw : text::split(completion, '\n')) {
    const auto line = text::trim(raw);
    auto value_of = [&](std::string_view key) -> std::optional<std::string> {
      if (text::to_lower_ascii(line.substr(0, key.size())) != key) return std::nullopt;
      return text::trim(std::string_view(line).substr(key.size()));
    };
    if (auto v = value_of("name:")) c.name = *v;
    else if (auto e = value_of("expression:")) c.expression = *e;
    else if (auto r = value_of("rationale:")) c.rationale = *r;
  }
  if (c.name.empty() || c.expression.empty()) return std::nullopt;
  return c;
}

std::optional<CandidateFeature> ProviderProposals::propose(const ProposalContext& context) {
  std::vector<std::string> knowledge;
  if (index_ != nullptr && k_ > 0 && !index_->empty() && !text::trim(context.dataset_description).empty()) {
    for (auto& hit : rag::retrieve(*index_, context.dataset_description, k_, gateway_)) {
      knowledge.push_back(std::move(hit.chunk.text));
    }
  }
  return parse_proposal(gateway_.complete(build_proposal_request(context, knowledge)).text);
}

// ---------------------------------------------------------------------------
// Loop

namespace {

struct MergePlan {
  Dataset data;
  std::vector<MergeRecord> merges;
};

MergePlan plan_merges(const Dataset& data, double corr_merge) {
  MergePlan plan{data, {}};
  const auto original = data.columns;
  std::set<std::string> used;
  auto column_values = [](const Dataset& d, std::size_t c) {
    std::vector<double> v(d.x.rows());
    for (std::size_t r = 0; r < d.x.rows(); ++r) v[r] = d.x.at(r, c);
    return v;
  };
  for (std::size_t i = 0; i < original.size(); ++i) {
    for (std::size_t j = i + 1; j < original.size(); ++j) {
      const auto& a = original[i];
      const auto& b = original[j];
      if (used.count(a) || used.count(b)) continue;
      const auto ca = column_values(data, i);
      const auto cb = column_values(data, j);
      const auto r = pearson(ca, cb);
      if (!r || !(std::fabs(*r) > corr_merge)) continue;
      const std::string name = "merge_" + a + "__" + b;
      if (plan.data.has_column(name)) continue;
      MergeRecord record{name, {a, b}};
      const auto merged = eval_column(parse_expr(merge_expression(record)), plan.data);
      // The merged column takes a's slot; b is dropped.
      const std::size_t slot = plan.data.column_index(a);
      for (std::size_t row = 0; row < plan.data.x.rows(); ++row) plan.data.x.at(row, slot) = merged[row];
      plan.data.columns[slot] = name;
      plan.data = plan.data.without_columns({b});
      used.insert(a);
      used.insert(b);
      plan.merges.push_back(std::move(record));
    }
  }
  return plan;
}

}  // namespace

FeatureSetRevision caafe_loop(const Dataset& base, CandidateSource& source,
                              const gbdt::TrainConfig& train, const CaafeConfig& config,
                              const std::map<std::string, std::string>& descriptions,
                              const std::string& dataset_description) {
  if (config.max_iters < 0) fail(ErrorCode::Config, "max_iters must be >= 0");
  const auto folds = stratified_folds(base.y, config.cv.folds, config.cv.seed);
  FeatureSetRevision rev;
  Dataset current = base;
  double baseline = cv_macro_f1(current, train, config.cv, folds);
  rev.initial_cv_macro_f1 = baseline;
  std::map<std::string, std::string> notes = descriptions;

  for (int iter = 0; iter < config.max_iters; ++iter) {
    const ProposalContext context{current, rev.ledger, notes, dataset_description};
    const auto candidate = source.propose(context);
    if (!candidate) {
      spdlog::info("feature proposals exhausted after {} iterations", iter);
      break;
    }
    LedgerEntry entry;
    entry.candidate = *candidate;
    FeatureExpr expr;
    try {
      expr = checked_expression(*candidate, current);
    } catch (const Error& e) {
      entry.note = std::string(to_string(e.code())) + ": " + e.what();
      rev.ledger.push_back(std::move(entry));
      continue;
    }
    const auto column = eval_column(expr, current);
    Dataset with = current.with_column(candidate->name, column);
    const double score = cv_macro_f1(with, train, config.cv, folds);
    entry.cv_delta = score - baseline;
    if (*entry.cv_delta > config.epsilon_accept) {
      entry.decision = Decision::Accept;
      rev.accepted.emplace_back(candidate->name, std::move(expr));
      notes[candidate->name] = candidate->expression;
      current = std::move(with);
      baseline = score;
    }
    spdlog::info("candidate {} = {}: cv delta {:+.4f} -> {}", candidate->name, candidate->expression,
                 *entry.cv_delta, entry.decision == Decision::Accept ? "accept" : "reject");
    rev.ledger.push_back(std::move(entry));
  }

  // Maintenance steps are kept only when they do not lower the CV metric.
  if (config.merge) {
    auto plan = plan_merges(current, config.corr_merge);
    if (!plan.merges.empty()) {
      const double score = cv_macro_f1(plan.data, train, config.cv, folds);
      if (score >= baseline) {
        rev.merged = std::move(plan.merges);
        current = std::move(plan.data);
        baseline = score;
      } else {
        spdlog::info("merging {} correlated pairs lowered CV macro-F1; skipped", plan.merges.size());
      }
    }
  }

  if (config.prune && !current.columns.empty()) {
    const auto model = gbdt::train(current.x, current.y, current.columns, current.label_names, train);
    const auto importance = feature_importance(model);
    std::set<std::string> engineered;
    for (const auto& [name, expr] : rev.accepted) engineered.insert(name);
    for (const auto& m : rev.merged) engineered.insert(m.merged_name);
    std::vector<std::string> unused;
    for (const auto& c : current.columns) {
      if (!engineered.count(c) && importance.at(c) == 0.0) unused.push_back(c);
    }
    if (!unused.empty() && unused.size() < current.columns.size()) {
      Dataset pruned = current.without_columns(unused);
      const double score = cv_macro_f1(pruned, train, config.cv, folds);
      if (score >= baseline) {
        rev.deleted = std::move(unused);
        current = std::move(pruned);
        baseline = score;
      } else {
        spdlog::info("deleting {} zero-importance features lowered CV macro-F1; skipped", unused.size());
      }
    }
  }

  rev.final_cv_macro_f1 = baseline;
  return rev;
}

}  // namespace medrag::lab
