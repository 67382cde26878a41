#include "medrag/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "medrag/error.hpp"
#include "medrag/random.hpp"
#include "medrag/text.hpp"

namespace fs = std::filesystem;

namespace medrag::synthetic {

namespace {

constexpr double kStrongHigh = 0.85;
constexpr double kStrongLow = 0.15;
constexpr double kStrongNoise = 0.08;
constexpr double kWeakHigh = 0.62;
constexpr double kWeakLow = 0.38;
constexpr double kWeakNoise = 0.3;

const std::vector<std::string> kSymptoms = {
    "runny nose",       "sneezing",          "wheezing",        "chest tightness",  "rattling breath",
    "high temperature", "chills",            "night sweats",    "loose stools",     "watery stools",
    "abdominal cramps", "stomach ache",      "bloating",        "belching",         "nausea",
    "vomiting",         "poor appetite",     "sore throat",     "hoarse voice",     "blocked nose",
    "yellow skin",      "yellow eyes",       "dark urine",      "pale stools",      "hard stools",
    "straining",        "rare bowel motions", "rapid breathing", "short breath",     "crackles in the chest",
    "tiredness",        "irritability",      "headache",        "ear pain",         "hacking at night",
    "phlegm",           "thick mucus",       "rash",            "dry mouth",        "thirst",
    "lethargy",         "restless sleep",    "pain around the navel", "heartburn",  "sour taste",
    "muscle aches",     "watery eyes",       "itchy throat",    "pale skin",        "weight loss"};

const std::vector<std::string> kLifestyle = {
    "irregular meals",     "late bedtimes",      "long screen time", "little outdoor play",
    "sugary drinks",       "daycare attendance", "recent travel",    "a sick sibling",
    "new foods",           "low water intake",   "cold weather exposure", "pets at home",
    "smoke exposure",      "skipped breakfast",  "snacking at night", "recent vaccination",
    "swimming lessons",    "picky eating",       "crowded playrooms", "dusty bedroom"};

const std::vector<std::string> kSyllables = {"ka", "lo", "ven", "dri", "mu", "sar", "tel", "bo",
                                             "ni", "quor", "zeb", "fin", "ras", "gol", "pem", "tux"};

const std::vector<std::string> kDurations = {"one day", "two days", "three days", "four or five days",
                                             "about a week", "since yesterday"};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

bool mentions_label(const std::string& s, const std::vector<std::string>& labels) {
  const auto lower = text::to_lower_ascii(s);
  return std::any_of(labels.begin(), labels.end(),
                     [&](const auto& l) { return lower.find(text::to_lower_ascii(l)) != std::string::npos; });
}

std::string class_name(int i) {
  if (i < static_cast<int>(kPediatricDiseases.size())) return kPediatricDiseases[static_cast<std::size_t>(i)];
  return fmt::format("condition {}", i + 1);
}

std::string join_phrases(const std::vector<std::string>& items) {
  if (items.size() == 1) return items[0];
  std::vector<std::string> head(items.begin(), items.end() - 1);
  return text::join(head, ", ") + " and " + items.back();
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_classes < 2) fail(ErrorCode::BadSpec, "n_classes must be >= 2");
  if (n_examples < 2 * n_classes) fail(ErrorCode::BadSpec, "n_examples must be >= 2 * n_classes");
  if (bank_size < 2) fail(ErrorCode::BadSpec, "bank_size must be >= 2");
  if (!(retrieval_dependence >= 0.0 && retrieval_dependence <= 1.0)) {
    fail(ErrorCode::BadSpec, "retrieval_dependence must be in [0, 1]");
  }
  if (interaction && bank_size < 2 * n_classes) {
    fail(ErrorCode::BadSpec, "the interaction world needs bank_size >= 2 * n_classes");
  }
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"n_examples", n_examples},     {"n_classes", n_classes},     {"bank_size", bank_size},
          {"retrieval_dependence", retrieval_dependence}, {"interaction", interaction}, {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.n_examples = j.value("n_examples", s.n_examples);
    s.n_classes = j.value("n_classes", s.n_classes);
    s.bank_size = j.value("bank_size", s.bank_size);
    s.retrieval_dependence = j.value("retrieval_dependence", s.retrieval_dependence);
    s.interaction = j.value("interaction", s.interaction);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadSpec, std::string("malformed spec: ") + e.what());
  }
  s.validate();
  return s;
}

SyntheticWorld generate_synthetic(const SyntheticSpec& spec, const pipeline::PipelineConfig& base) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticWorld w;
  w.spec = spec;
  const auto n_classes = static_cast<std::size_t>(spec.n_classes);
  const auto bank_size = static_cast<std::size_t>(spec.bank_size);
  for (int c = 0; c < spec.n_classes; ++c) w.label_names.push_back(class_name(c));
  std::sort(w.label_names.begin(), w.label_names.end());
  const auto& labels = w.label_names;

  // Per-class symptom vocabularies, free of label text.
  std::vector<std::string> pool;
  for (const auto& s : kSymptoms) {
    if (!mentions_label(s, labels)) pool.push_back(s);
  }
  rng.shuffle(pool.begin(), pool.end());
  constexpr std::size_t kPerClass = 4;
  std::vector<std::vector<std::string>> vocab(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t k = 0; k < kPerClass; ++k) vocab[c].push_back(pool[(c * kPerClass + k) % pool.size()]);
  }

  // Questions: the first round(B * dependence) are knowledge-dependent.
  const auto n_dependent = static_cast<std::size_t>(std::llround(spec.retrieval_dependence * spec.bank_size));
  std::vector<std::size_t> q_class(bank_size);
  std::vector<bool> dependent(bank_size);
  std::vector<scoring::Question> questions;
  std::set<std::string> codes;
  for (std::size_t j = 0; j < bank_size; ++j) {
    q_class[j] = j % n_classes;
    dependent[j] = j < n_dependent;
    scoring::Question q;
    q.question_id = fmt::format("q{:03}", j + 1);
    q.feature_name = fmt::format("f{}", j + 1);
    if (dependent[j]) {
      std::string code;
      do {
        code.clear();
        for (int s = 0; s < 3; ++s) code += kSyllables[rng.below(kSyllables.size())];
      } while (codes.count(code) || mentions_label(code, labels));
      codes.insert(code);
      q.text = fmt::format("Does the record show the {} sign pattern?", code);
      q.category = "knowledge";
      const auto& v = vocab[q_class[j]];
      w.corpus.push_back(
          {fmt::format("marker_{}.txt", code),
           fmt::format("The {} sign pattern is a presentation combining {}. It points towards {}.", code,
                       join_phrases({v[j % kPerClass], v[(j + 1) % kPerClass], v[(j + 2) % kPerClass]}),
                       labels[q_class[j]])});
    } else {
      const auto& habit = kLifestyle[j % kLifestyle.size()];
      q.text = j < kLifestyle.size() ? fmt::format("How strongly does the record mention {}?", habit)
                                     : fmt::format("How strongly does the record mention {} (item {})?", habit, j + 1);
      q.category = "lifestyle";
    }
    questions.push_back(std::move(q));
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    w.corpus.push_back({fmt::format("care_{:02}.txt", c + 1),
                        fmt::format("Care note on {}: typical signs are {}. Offer fluids, rest and light meals, "
                                    "and review if the child worsens.",
                                    labels[c], join_phrases(vocab[c]))});
  }
  w.bank = scoring::make_question_bank(std::move(questions));

  // Interaction pair: classes 0 and 1 share every profile and differ only in
  // which of fa, fb is larger.
  std::size_t fa = 0;
  std::size_t fb = 1;
  const bool planted = spec.interaction;

  // Balanced class assignment in shuffled order.
  std::vector<std::size_t> gold(static_cast<std::size_t>(spec.n_examples));
  for (std::size_t i = 0; i < gold.size(); ++i) gold[i] = i % n_classes;
  rng.shuffle(gold.begin(), gold.end());

  std::vector<std::vector<double>> values(gold.size(), std::vector<double>(bank_size));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::size_t y = gold[i];
    const bool in_pair = planted && y <= 1;
    for (std::size_t j = 0; j < bank_size; ++j) {
      const bool match = in_pair ? q_class[j] <= 1 : q_class[j] == y;
      values[i][j] = dependent[j] ? clamp01(rng.normal(match ? kStrongHigh : kStrongLow, kStrongNoise))
                                  : clamp01(rng.normal(match ? kWeakHigh : kWeakLow, kWeakNoise));
    }
    if (in_pair) {
      // A thin band along the diagonal: level varies widely, the gap is small.
      const double level = rng.uniform(0.15, 0.85);
      const double gap = rng.uniform(0.02, 0.1);
      const double hi = level + gap / 2;
      const double lo = level - gap / 2;
      values[i][fa] = y == 0 ? hi : lo;
      values[i][fb] = y == 0 ? lo : hi;
    }
  }

  // Dialogues.
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::size_t y = gold[i];
    auto v = vocab[y];
    rng.shuffle(v.begin(), v.end());
    const std::string other = pool[rng.below(pool.size())];
    const bool female = rng.bernoulli(0.5);
    const int age = 1 + static_cast<int>(rng.below(14));
    std::vector<pipeline::Utterance> utts = {
        {"patient", fmt::format("Hello, my child has {} and {}, and some {}. ({}, {} years old)", v[0], v[1],
                                other, female ? "female" : "male", age)},
        {"doctor", "Hello, how long has this situation lasted? Is the diet regular?"},
        {"patient", fmt::format("About {}. There is also {}.", kDurations[rng.below(kDurations.size())], v[2])},
    };
    if (rng.bernoulli(0.5)) {
      utts.push_back({"doctor", "Any other symptoms?"});
      utts.push_back({"patient", fmt::format("A little {}.", v[3])});
    }
    pipeline::LabeledExample ex;
    ex.epr = pipeline::ingest_dialog(fmt::format("ex{:04}", i + 1), utts, labels);
    for (std::size_t c = 0; c < n_classes; ++c) ex.labels[labels[c]] = c == y ? 1 : 0;
    w.examples.push_back(std::move(ex));
  }

  // Scripted answers for the prompts the pipeline will build.
  llm::ProviderConfig embed_cfg = base.provider;
  embed_cfg.kind = llm::ProviderKind::Mock;
  embed_cfg.script_path.clear();
  if (!embed_cfg.seed) embed_cfg.seed = spec.seed;
  llm::Gateway gateway(embed_cfg);
  const auto index = rag::build_index(w.corpus, base.chunk, gateway);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto report = pipeline::report_text(w.examples[i].epr);
    for (std::size_t j = 0; j < bank_size; ++j) {
      const auto& q = w.bank.questions[j];
      const auto answer = fmt::format("{}: {:.2f}", q.feature_name, values[i][j]);
      const auto context = scoring::question_context(q, report, &index, gateway, base.score);
      w.script.add_prompt(scoring::build_score_request(q, report, context), answer);
      if (!dependent[j]) w.script.add_prompt(scoring::build_score_request(q, report, {}), answer);
    }
  }

  if (planted) {
    const auto& a = w.bank.questions[fa].feature_name;
    const auto& b = w.bank.questions[fb].feature_name;
    w.proposals.push_back({fmt::format("diff_{}_{}", a, b), fmt::format("{} - {}", a, b),
                           fmt::format("{} and {} share one profile; their balance separates them.", labels[0],
                                       labels[1])});
  }

  w.config = base;
  w.config.apply_seed(spec.seed);
  w.config.corpus_path = "corpus.jsonl";
  w.config.bank_path = "bank.json";
  w.config.examples_path = "examples.jsonl";
  w.config.artifacts_dir = "artifacts";
  w.config.provider.kind = llm::ProviderKind::Mock;
  w.config.provider.script_path = "script.json";
  if (planted) {
    w.config.caafe.source = "scripted";
    w.config.caafe.proposals = w.proposals;
  }
  return w;
}

void SyntheticWorld::save(const std::string& dir) const {
  fs::create_directories(dir);
  const fs::path d(dir);
  rag::save_corpus_jsonl(corpus, (d / "corpus.jsonl").string());
  scoring::save_question_bank(bank, (d / "bank.json").string());
  pipeline::save_examples_jsonl(examples, (d / "examples.jsonl").string());
  script.save((d / "script.json").string());
  auto write = [&](const std::string& name, const nlohmann::json& j) {
    std::ofstream out(d / name, std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot write " + (d / name).string());
    out << j.dump(2) << '\n';
  };
  write("config.json", config.to_json());
  write("spec.json", spec.to_json());
}

std::unique_ptr<llm::Gateway> make_world_gateway(const SyntheticWorld& world) {
  auto cfg = world.config.provider;
  cfg.script_path.clear();
  auto provider = std::make_shared<llm::MockProvider>(cfg, std::make_shared<llm::ScriptTable>(world.script));
  return std::make_unique<llm::Gateway>(cfg, provider);
}

}  // namespace medrag::synthetic
