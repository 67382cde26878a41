#include "cli.hpp"

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "medrag/consult.hpp"
#include "medrag/error.hpp"
#include "medrag/feature_lab.hpp"
#include "medrag/pipeline.hpp"
#include "medrag/server.hpp"
#include "medrag/synthetic.hpp"
#include "medrag/text.hpp"

namespace fs = std::filesystem;

namespace medrag::cli {

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string log_level = "warn";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "Pipeline config JSON");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set train.n_rounds=50");
  cmd->add_option("--seed", c.seed, "Seed for every random choice");
  cmd->add_option("--log-level", c.log_level, "trace|debug|info|warn|error|off");
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& body) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  out << body;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Loaded {
  pipeline::PipelineConfig config;
  nlohmann::json raw;
  std::string base_dir;
};

Loaded load_config(const Common& c) {
  Loaded l;
  l.raw = c.config_path.empty() ? nlohmann::json::object() : read_json_file(c.config_path);
  l.base_dir = c.config_path.empty() ? std::string() : fs::path(c.config_path).parent_path().string();
  for (const auto& o : c.overrides) pipeline::apply_override(l.raw, o);
  if (c.seed) {
    // --seed replaces every seed in the document.
    l.raw["seed"] = *c.seed;
    for (const char* k : {"provider", "train", "caafe"}) {
      if (l.raw.contains(k) && l.raw[k].is_object()) l.raw[k].erase("seed");
    }
  }
  l.config = pipeline::PipelineConfig::from_json(l.raw, l.base_dir);
  return l;
}

std::string require_path(const std::string& value, const char* what) {
  if (value.empty()) fail(ErrorCode::Config, std::string(what) + " path is not set (config or flag)");
  return value;
}

void set_log_level(const std::string& level) {
  spdlog::drop("medrag");
  spdlog::set_default_logger(spdlog::stderr_color_mt("medrag"));
  spdlog::set_level(spdlog::level::from_str(level));
}

std::atomic<server::Service*> g_service{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_service.load()) s->stop();
}

}  // namespace

int run_cli(int argc, char** argv) { return run_cli(argc, argv, std::cin, std::cout, std::cerr); }

int run_cli(int argc, char** argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retrieval-augmented health-report scoring, feature engineering and diagnosis."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common common;
  std::string corpus, out_path, bank, text_arg, report_file, examples, artifacts, listen;
  std::string index_path, revision_path, mode_arg;
  bool all_examples = false;
  synthetic::SyntheticSpec spec;

  auto* ingest = app.add_subcommand("ingest", "Chunk and embed a corpus into an index");
  add_common(ingest, common);
  ingest->add_option("--corpus", corpus, "Corpus directory or JSONL");
  ingest->add_option("-o,--out", out_path, "Index JSON to write")->required();

  auto* bank_validate = app.add_subcommand("bank-validate", "Validate a question bank");
  add_common(bank_validate, common);
  bank_validate->add_option("--bank", bank, "Question bank JSON");

  auto* score = app.add_subcommand("score", "Score a report (or every example) against the bank");
  add_common(score, common);
  score->add_option("--bank", bank, "Question bank JSON");
  score->add_option("--index", index_path, "Index JSON (omit for no retrieval)");
  score->add_option("--revision", revision_path, "Feature revision JSON to apply");
  score->add_option("--text", text_arg, "Report text");
  score->add_option("--report", report_file, "Report text file");
  score->add_option("--examples", examples, "Examples JSONL; writes a matrix instead");
  score->add_option("-o,--out", out_path, "Output file (matrix JSONL, or .csv)");

  auto* train = app.add_subcommand("train", "Build the index, score, run the feature loop and train");
  add_common(train, common);
  train->add_option("-o,--out", artifacts, "Artifacts directory");
  train->add_flag("--all", all_examples, "Train on every example instead of the train split");

  auto* eval = app.add_subcommand("eval", "Evaluate trained artifacts on the held-out split");
  add_common(eval, common);
  eval->add_option("--artifacts", artifacts, "Artifacts directory");
  eval->add_option("-o,--out", out_path, "Metrics JSON to write");

  auto* ablate = app.add_subcommand("ablate", "Full, no-retrieval and no-feature-loop variants");
  add_common(ablate, common);
  ablate->add_option("-o,--out", out_path, "Ablation JSON to write");

  auto* caafe = app.add_subcommand("caafe", "Run the feature loop on the training split");
  add_common(caafe, common);
  caafe->add_option("-o,--out", out_path, "Revision JSON to write")->required();

  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic benchmark world");
  add_common(gen, common);
  gen->add_option("-o,--out", out_path, "Output directory")->required();
  gen->add_option("--n-examples", spec.n_examples);
  gen->add_option("--n-classes", spec.n_classes);
  gen->add_option("--bank-size", spec.bank_size);
  gen->add_option("--retrieval-dependence", spec.retrieval_dependence);
  gen->add_flag("--interaction", spec.interaction, "Plant a pair interaction and ship its proposal");

  auto* predict = app.add_subcommand("predict", "Predict from a report with trained artifacts");
  add_common(predict, common);
  predict->add_option("--artifacts", artifacts, "Artifacts directory");
  predict->add_option("--text", text_arg, "Report text");
  predict->add_option("--report", report_file, "Report text file");
  predict->add_option("--mode", mode_arg, "top1 | multilabel");

  auto* consult_cmd = app.add_subcommand("consult", "Terminal consultation loop");
  add_common(consult_cmd, common);
  consult_cmd->add_option("--artifacts", artifacts, "Artifacts directory");

  auto* serve = app.add_subcommand("serve", "HTTP service");
  add_common(serve, common);
  serve->add_option("--artifacts", artifacts, "Artifacts directory");
  serve->add_option("--listen", listen, "host:port (overrides LISTEN_ADDR)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  try {
    set_log_level(common.log_level);
    auto loaded = load_config(common);
    auto& cfg = loaded.config;
    auto artifacts_dir = [&] { return artifacts.empty() ? cfg.artifacts_dir : artifacts; };
    auto report_input = [&]() -> std::string {
      if (!text_arg.empty()) return text_arg;
      if (!report_file.empty()) return read_text(report_file);
      fail(ErrorCode::Config, "give --text or --report");
    };
    auto load_examples = [&] { return pipeline::load_examples_jsonl(require_path(cfg.examples_path, "examples")); };

    if (*ingest) {
      llm::Gateway gw(cfg.provider);
      const auto docs = rag::load_corpus(require_path(corpus.empty() ? cfg.corpus_path : corpus, "corpus"));
      const auto index = rag::build_index(docs, cfg.chunk, gw);
      index.save(out_path);
      out << fmt::format("indexed {} documents into {} chunks ({})\n", docs.size(), index.chunks().size(),
                         index.build_digest());
      return 0;
    }
    if (*bank_validate) {
      const auto b = scoring::load_question_bank(require_path(bank.empty() ? cfg.bank_path : bank, "bank"));
      out << fmt::format("ok: {} questions, digest {}\n", b.questions.size(), b.bank_digest);
      return 0;
    }
    if (*score) {
      llm::Gateway gw(cfg.provider);
      const auto b = scoring::load_question_bank(require_path(bank.empty() ? cfg.bank_path : bank, "bank"));
      std::optional<rag::VectorIndex> index;
      if (!index_path.empty()) index = rag::VectorIndex::load(index_path, cfg.provider.embed_dim);
      std::optional<lab::FeatureSetRevision> rev;
      if (!revision_path.empty()) rev = lab::FeatureSetRevision::load(revision_path);
      const auto* idx = index ? &*index : nullptr;
      const auto* rv = rev ? &*rev : nullptr;
      if (!examples.empty()) {
        std::vector<scoring::FeatureVector> rows;
        for (const auto& e : pipeline::load_examples_jsonl(examples)) {
          rows.push_back(scoring::build_feature_vector(e.epr.report_id, pipeline::report_text(e.epr), b, idx, gw, rv,
                                                       cfg.score));
        }
        if (out_path.empty()) fail(ErrorCode::Config, "--out is required with --examples");
        if (out_path.ends_with(".csv")) {
          scoring::save_matrix_csv(rows, rv ? rv->columns(b.feature_names()) : b.feature_names(), out_path);
        } else {
          scoring::save_matrix_jsonl(rows, out_path);
        }
        out << fmt::format("scored {} examples\n", rows.size());
        return 0;
      }
      const auto epr = pipeline::ingest_report("report", report_input(), {});
      const auto fv = scoring::build_feature_vector(epr.report_id, pipeline::report_text(epr), b, idx, gw, rv,
                                                    cfg.score);
      const auto body = scoring::to_json(fv).dump(2) + "\n";
      if (out_path.empty()) out << body;
      else write_text(out_path, body);
      return 0;
    }
    if (*train) {
      llm::Gateway gw(cfg.provider);
      const auto docs = rag::load_corpus(require_path(cfg.corpus_path, "corpus"));
      const auto b = scoring::load_question_bank(require_path(cfg.bank_path, "bank"));
      const auto exs = load_examples();
      const auto labels = pipeline::label_set(exs);
      const auto subset = all_examples ? exs : pipeline::split_examples(exs, cfg.test_fraction, cfg.seed).first;
      pipeline::TrainReport report;
      const auto tp = pipeline::run_training(docs, b, subset, labels, gw, cfg, &report);
      const auto dir = artifacts_dir();
      tp.save(dir);
      scoring::save_matrix_jsonl(report.base_matrix, (fs::path(dir) / "matrix.jsonl").string());
      out << fmt::format("trained on {} examples, {} features, {} labels; model {}\n", subset.size(),
                         tp.model.feature_names.size(), labels.size(), tp.model.digest());
      out << fmt::format("feature loop: {} accepted, {} merged, {} deleted; CV macro-F1 {:.3f} -> {:.3f}\n",
                         tp.revision.accepted.size(), tp.revision.merged.size(), tp.revision.deleted.size(),
                         tp.revision.initial_cv_macro_f1, tp.revision.final_cv_macro_f1);
      return 0;
    }
    if (*eval) {
      llm::Gateway gw(cfg.provider);
      const auto tp = pipeline::TrainedPipeline::load(artifacts_dir(), cfg.provider.embed_dim);
      const auto test = pipeline::split_examples(load_examples(), cfg.test_fraction, cfg.seed).second;
      const auto ev = pipeline::evaluate(tp, test, gw);
      out << pipeline::render_metrics_table(cfg.report_label, ev.metrics);
      if (!out_path.empty()) write_text(out_path, ev.to_json().dump(2) + "\n");
      return 0;
    }
    if (*ablate) {
      llm::Gateway gw(cfg.provider);
      const auto docs = rag::load_corpus(require_path(cfg.corpus_path, "corpus"));
      const auto b = scoring::load_question_bank(require_path(cfg.bank_path, "bank"));
      const auto variants = pipeline::run_ablation(docs, b, load_examples(), gw, cfg);
      out << pipeline::render_ablation_table(cfg.report_label, variants);
      if (!out_path.empty()) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, m] : variants) j[k] = m.to_json();
        write_text(out_path, j.dump(2) + "\n");
      }
      return 0;
    }
    if (*caafe) {
      llm::Gateway gw(cfg.provider);
      const auto docs = rag::load_corpus(require_path(cfg.corpus_path, "corpus"));
      const auto b = scoring::load_question_bank(require_path(cfg.bank_path, "bank"));
      const auto exs = load_examples();
      const auto labels = pipeline::label_set(exs);
      const auto train_side = pipeline::split_examples(exs, cfg.test_fraction, cfg.seed).first;
      auto run_cfg = cfg;
      run_cfg.caafe.enabled = true;
      const auto tp = pipeline::run_training(docs, b, train_side, labels, gw, run_cfg);
      tp.revision.save(out_path);
      for (const auto& e : tp.revision.ledger) {
        out << fmt::format("{:<8} {} = {}{}\n", e.decision == lab::Decision::Accept ? "accept" : "reject",
                           e.candidate.name, e.candidate.expression,
                           e.cv_delta ? fmt::format("  (cv delta {:+.4f})", *e.cv_delta) : "  (" + e.note + ")");
      }
      out << fmt::format("CV macro-F1 {:.3f} -> {:.3f}\n", tp.revision.initial_cv_macro_f1,
                         tp.revision.final_cv_macro_f1);
      return 0;
    }
    if (*gen) {
      if (common.seed) spec.seed = *common.seed;
      else if (loaded.raw.contains("seed")) spec.seed = cfg.seed;
      const auto world = synthetic::generate_synthetic(spec, cfg);
      world.save(out_path);
      out << fmt::format("wrote {} examples, {} questions, {} documents, {} scripted answers to {}\n",
                         world.examples.size(), world.bank.questions.size(), world.corpus.size(), world.script.size(),
                         out_path);
      return 0;
    }
    if (*predict) {
      llm::Gateway gw(cfg.provider);
      const auto tp = pipeline::TrainedPipeline::load(artifacts_dir(), cfg.provider.embed_dim);
      const auto epr = pipeline::ingest_report("request", report_input(), tp.label_names());
      auto result = mode_arg.empty() ? pipeline::predict_report(tp, epr, gw)
                                     : pipeline::predict_report(tp, epr, gw, pipeline::parse_mode(mode_arg),
                                                                tp.threshold);
      if (cfg.advice) {
        pipeline::attach_advice(result, epr, tp.index, gw, cfg.advice_k);
        if (result.advice) result.advice = consult::with_disclaimer(*result.advice);
      }
      out << result.to_json().dump() << "\n";
      return 0;
    }
    if (*consult_cmd) {
      auto gw = std::make_shared<llm::Gateway>(cfg.provider);
      auto tp = std::make_shared<const pipeline::TrainedPipeline>(
          pipeline::TrainedPipeline::load(artifacts_dir(), cfg.provider.embed_dim));
      auto svc_cfg = server::ServiceConfig::from_json(loaded.raw.value("service", nlohmann::json::object()));
      consult::ConsultService svc(tp, gw, svc_cfg.consult);
      const auto session = svc.open_session();
      out << "Describe your symptoms (empty line to quit).\n";
      std::string line;
      while (out << "> " << std::flush, std::getline(in, line)) {
        if (text::trim(line).empty()) break;
        const auto reply = svc.post_message(session.session_id, line);
        out << reply.text << "\n";
        if (reply.kind == consult::ReplyKind::Prediction) {
          const auto result = svc.finalize(session.session_id);
          for (const auto& l : result.predicted) out << fmt::format("  {:<32} {:.3f}\n", l, result.probabilities.at(l));
          break;
        }
      }
      return 0;
    }
    if (*serve) {
      auto gw = std::make_shared<llm::Gateway>(cfg.provider);
      auto tp = std::make_shared<const pipeline::TrainedPipeline>(
          pipeline::TrainedPipeline::load(artifacts_dir(), cfg.provider.embed_dim));
      auto svc_cfg =
          server::ServiceConfig::from_json(loaded.raw.value("service", nlohmann::json::object()), loaded.base_dir);
      svc_cfg.consult.advice = svc_cfg.consult.advice && cfg.advice;
      if (const char* env = std::getenv("LISTEN_ADDR"); env != nullptr) svc_cfg.apply_listen_addr(env);
      if (!listen.empty()) svc_cfg.apply_listen_addr(listen);
      server::Service svc(tp, gw, svc_cfg);
      g_service = &svc;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      svc.run();
      g_service = nullptr;
      return 0;
    }
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace medrag::cli
