#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ddsi/checkpoint.hpp"
#include "ddsi/corpus.hpp"
#include "ddsi/error.hpp"
#include "ddsi/metrics.hpp"
#include "ddsi/mmr.hpp"
#include "ddsi/train.hpp"
#include "ddsi/version.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;

namespace ddsi::cli {

namespace {

struct Context {
  std::vector<std::string> args;
  std::ostream& out;
  std::ostream& err;
};

fs::path prepare_out_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + dir + ": " + ec.message());
  return p;
}

template <typename Fn>
std::string to_text(Fn&& fn) {
  std::ostringstream s;
  fn(s);
  return s.str();
}

// ---------------------------------------------------------------- generate

struct GenerateOpts {
  SyntheticConfig cfg;
  std::string out;
};

void add_generate(CLI::App& app, GenerateOpts& o) {
  app.add_option("--topics", o.cfg.num_topics, "number of topic clusters")->capture_default_str();
  app.add_option("--docs-per-topic", o.cfg.docs_per_topic)->capture_default_str();
  app.add_option("--vocab-per-topic", o.cfg.vocab_per_topic)->capture_default_str();
  app.add_option("--shared-vocab", o.cfg.shared_vocab)->capture_default_str();
  app.add_option("--doc-len", o.cfg.doc_len)->capture_default_str();
  app.add_option("--queries-per-doc", o.cfg.queries_per_doc)->capture_default_str();
  app.add_option("--query-len", o.cfg.query_len)->capture_default_str();
  app.add_option("--near-dup", o.cfg.near_duplicate_fraction, "near-duplicate fraction per topic")
      ->capture_default_str();
  app.add_option("--seed", o.cfg.seed)->capture_default_str();
  app.add_option("--out", o.out, "output directory")->required();
}

int cmd_generate(const Context& ctx, const GenerateOpts& o) {
  auto data = generate_synthetic(o.cfg);
  auto dir = prepare_out_dir(o.out);
  write_file_atomic(dir / "corpus.jsonl", to_text([&](std::ostream& s) { write_corpus(data.corpus, s); }));
  write_file_atomic(dir / "train.tsv", to_text([&](std::ostream& s) { write_queries(data.train, s); }));
  write_file_atomic(dir / "test.tsv", to_text([&](std::ostream& s) { write_queries(data.test, s); }));

  RunManifest m("generate", ctx.args);
  const auto& c = o.cfg;
  m.config() = {{"num_topics", c.num_topics},       {"docs_per_topic", c.docs_per_topic},
                {"vocab_per_topic", c.vocab_per_topic}, {"shared_vocab", c.shared_vocab},
                {"doc_len", c.doc_len},             {"queries_per_doc", c.queries_per_doc},
                {"query_len", c.query_len},         {"near_duplicate_fraction", c.near_duplicate_fraction},
                {"seed", c.seed}};
  m.set_seed(c.seed);
  m.add_output("corpus", dir / "corpus.jsonl");
  m.add_output("train", dir / "train.tsv");
  m.add_output("test", dir / "test.tsv");
  m.write(dir / "manifest.json");
  ctx.out << "generated " << data.corpus.size() << " documents, " << data.train.size() << " train / "
          << data.test.size() << " test queries in " << dir.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainOpts {
  TrainConfig cfg;
  std::string optimizer = "adam";
  std::string corpus, queries, out;
};

void add_train(CLI::App& app, TrainOpts& o) {
  app.add_option("--corpus", o.corpus, "corpus JSONL")->required()->check(CLI::ExistingFile);
  app.add_option("--queries,--train", o.queries, "training queries TSV")->required()->check(CLI::ExistingFile);
  app.add_option("--alpha", o.cfg.alpha, "weight of the cross-entropy term")->capture_default_str();
  app.add_option("--k", o.cfg.k, "top-K set size for the diversity term")->capture_default_str();
  app.add_option("--lr", o.cfg.lr)->capture_default_str();
  app.add_option("--epochs", o.cfg.epochs)->capture_default_str();
  app.add_option("--batch-size", o.cfg.batch_size)->capture_default_str();
  app.add_option("--seed", o.cfg.seed)->capture_default_str();
  app.add_option("--optimizer", o.optimizer)->check(CLI::IsMember({"sgd", "adam"}))->capture_default_str();
  app.add_option("--dim", o.cfg.dim, "embedding width d")->capture_default_str();
  app.add_option("--out", o.out, "output directory")->required();
}

int cmd_train(const Context& ctx, TrainOpts o) {
  o.cfg.optimizer = parse_optimizer(o.optimizer);
  o.cfg.validate();
  auto corpus = load_corpus(o.corpus);
  auto queries = load_queries(o.queries, corpus);
  TrainResult res;
  try {
    res = train(corpus, queries, o.cfg, [&](const EpochRecord& r) {
      ctx.out << "epoch " << r.epoch << " ce=" << r.loss.ce << " diversity=" << r.loss.diversity
              << " total=" << r.loss.total << " train_hits1=" << r.train_hits1 << "\n";
    });
  } catch (const Error& e) {
    if (e.code() == Errc::NonFiniteGradient) ctx.err << "training diverged: " << e.what() << "\n";
    throw;
  }

  auto dir = prepare_out_dir(o.out);
  auto bytes = serialize_checkpoint(res.params);
  write_file_atomic(dir / "model.ckpt", std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  write_file_atomic(dir / "history.tsv", format_history(res.history));

  RunManifest m("train", ctx.args);
  const auto& c = o.cfg;
  m.config() = {{"alpha", c.alpha},         {"k", c.k},
                {"lr", c.lr},               {"epochs", c.epochs},
                {"batch_size", c.batch_size}, {"seed", c.seed},
                {"optimizer", to_string(c.optimizer)}, {"dim", c.dim},
                {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps},   {"vocab", res.params.dims.vocab},
                {"docs", res.params.dims.docs}, {"param_count", res.params.size()}};
  m.set_seed(c.seed);
  m.add_input("corpus", o.corpus);
  m.add_input("queries", o.queries);
  m.add_output("checkpoint", dir / "model.ckpt");
  m.add_output("history", dir / "history.tsv");
  m.write(dir / "manifest.json");
  return 0;
}

// -------------------------------------------------------------------- eval

struct EvalOpts {
  std::string checkpoint, corpus, queries, out, dataset = "synthetic";
  std::int64_t cutoff = 10;
  std::optional<double> alpha;
};

void add_eval(CLI::App& app, EvalOpts& o) {
  app.add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
  app.add_option("--corpus", o.corpus)->required()->check(CLI::ExistingFile);
  app.add_option("--queries", o.queries, "evaluation queries TSV")->required()->check(CLI::ExistingFile);
  app.add_option("--cutoff", o.cutoff)->capture_default_str();
  app.add_option("--alpha", o.alpha, "alpha label for the report (default: from the training manifest)");
  app.add_option("--dataset", o.dataset)->capture_default_str();
  app.add_option("--out", o.out, "output directory")->required();
}

// alpha recorded by `train` next to the checkpoint, if any.
std::optional<double> training_alpha(const fs::path& checkpoint) {
  auto manifest = checkpoint.parent_path() / "manifest.json";
  std::ifstream in(manifest);
  if (!in) return std::nullopt;
  try {
    auto j = nlohmann::json::parse(in);
    if (j.value("command", "") == "train") return j.at("config").at("alpha").get<double>();
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

int cmd_eval(const Context& ctx, const EvalOpts& o) {
  auto params = load_checkpoint(o.checkpoint);
  auto corpus = load_corpus(o.corpus);
  auto queries = load_queries(o.queries, corpus);
  if (static_cast<std::size_t>(params.dims.docs) != corpus.size()) {
    throw Error(Errc::ShapeMismatch, "checkpoint has N=" + std::to_string(params.dims.docs) +
                                         " but corpus has " + std::to_string(corpus.size()));
  }
  EvalRun run;
  auto report = evaluate(params, queries, corpus, o.cutoff, &run);
  report.dataset = o.dataset;
  report.alpha = o.alpha ? o.alpha : training_alpha(o.checkpoint);

  auto dir = prepare_out_dir(o.out);
  std::vector<MetricsReport> one{report};
  write_file_atomic(dir / "run.tsv", to_text([&](std::ostream& s) { write_run(run, s); }));
  write_file_atomic(dir / "report.tsv", to_text([&](std::ostream& s) { write_report_tsv(one, s); }));
  const auto table = format_report_table(one);
  write_file_atomic(dir / "report.txt", table);

  RunManifest m("eval", ctx.args);
  m.config() = {{"cutoff", o.cutoff}, {"dataset", o.dataset}};
  m.config()["alpha"] = report.alpha ? nlohmann::ordered_json(*report.alpha) : nlohmann::ordered_json();
  m.add_input("checkpoint", o.checkpoint);
  m.add_input("corpus", o.corpus);
  m.add_input("queries", o.queries);
  m.add_output("run", dir / "run.tsv");
  m.add_output("report", dir / "report.tsv");
  m.add_output("table", dir / "report.txt");
  m.write(dir / "manifest.json");
  ctx.out << table;
  return 0;
}

// ------------------------------------------------------------------ rerank

struct RerankOpts {
  std::string checkpoint, corpus, queries, out;
  MmrConfig cfg;
};

void add_rerank(CLI::App& app, RerankOpts& o) {
  app.add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
  app.add_option("--corpus", o.corpus)->required()->check(CLI::ExistingFile);
  app.add_option("--queries", o.queries)->required()->check(CLI::ExistingFile);
  app.add_option("--lambda", o.cfg.lambda, "relevance weight")->capture_default_str();
  app.add_option("--m", o.cfg.m, "output size")->capture_default_str();
  app.add_option("--pool", o.cfg.pool, "candidate pool size")->capture_default_str();
  app.add_option("--out", o.out, "output directory")->required();
}

int cmd_rerank(const Context& ctx, const RerankOpts& o) {
  o.cfg.validate();
  auto params = load_checkpoint(o.checkpoint);
  auto corpus = load_corpus(o.corpus);
  auto queries = load_queries(o.queries, corpus);
  EvalRun run;
  for (const auto& q : queries) {
    run.push_back({retrieve_then_rerank(params, q.tokens, o.cfg, q.qid), q.gold_docid});
  }
  auto dir = prepare_out_dir(o.out);
  write_file_atomic(dir / "run.tsv", to_text([&](std::ostream& s) { write_run(run, s); }));

  RunManifest m("rerank", ctx.args);
  m.config() = {{"lambda", o.cfg.lambda}, {"m", o.cfg.m}, {"pool", o.cfg.pool}};
  m.add_input("checkpoint", o.checkpoint);
  m.add_input("corpus", o.corpus);
  m.add_input("queries", o.queries);
  m.add_output("run", dir / "run.tsv");
  m.write(dir / "manifest.json");
  ctx.out << "reranked " << run.size() << " queries into " << (dir / "run.tsv").string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ report

struct ReportOpts {
  std::vector<std::string> reports;
  std::string out;
};

void add_report(CLI::App& app, ReportOpts& o) {
  app.add_option("reports", o.reports, "report TSVs written by eval")->required()->check(CLI::ExistingFile);
  app.add_option("--out", o.out, "optional output directory for the merged table");
}

int cmd_report(const Context& ctx, const ReportOpts& o) {
  std::vector<MetricsReport> all;
  for (const auto& path : o.reports) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot open " + path);
    try {
      auto rows = read_report_tsv(in);
      all.insert(all.end(), rows.begin(), rows.end());
    } catch (const Error& e) {
      throw Error(e.code(), path + ": " + e.what(), e.detail());
    }
  }
  sort_reports(all);
  const auto table = format_report_table(all);
  if (!o.out.empty()) {
    auto dir = prepare_out_dir(o.out);
    write_file_atomic(dir / "report.tsv", to_text([&](std::ostream& s) { write_report_tsv(all, s); }));
    write_file_atomic(dir / "report.txt", table);
    RunManifest m("report", ctx.args);
    for (std::size_t i = 0; i < o.reports.size(); ++i) m.add_input("report" + std::to_string(i), o.reports[i]);
    m.add_output("report", dir / "report.tsv");
    m.add_output("table", dir / "report.txt");
    m.write(dir / "manifest.json");
  }
  ctx.out << table;
  return 0;
}

// ------------------------------------------------------------------ replay

struct ReplayOpts {
  std::string manifest, out;
};

void add_replay(CLI::App& app, ReplayOpts& o) {
  app.add_option("manifest", o.manifest, "manifest.json written by a previous run")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--out", o.out, "write outputs here instead of the recorded directory");
}

int cmd_replay(const Context& ctx, const ReplayOpts& o) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(o.manifest));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedLine, o.manifest + ": " + e.what());
  }
  for (const auto& [name, in] : j.at("inputs").items()) {
    const auto path = in.at("path").get<std::string>();
    if (sha256_file(path) != in.at("sha256").get<std::string>()) {
      throw Error(Errc::Io, "input '" + name + "' (" + path + ") changed since the recorded run");
    }
  }
  auto args = j.at("argv").get<std::vector<std::string>>();
  if (!o.out.empty()) {
    bool replaced = false;
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
      if (args[i] == "--out") {
        args[i + 1] = o.out;
        replaced = true;
      }
    }
    if (!replaced) args.insert(args.end(), {"--out", o.out});
  }
  return run(args, ctx.out, ctx.err);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diversity-aware differentiable search index"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenerateOpts gen;
  TrainOpts tr;
  EvalOpts ev;
  RerankOpts rr;
  ReportOpts rp;
  ReplayOpts rl;
  auto* generate = app.add_subcommand("generate", "write a synthetic corpus and query splits");
  add_generate(*generate, gen);
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  add_train(*train_cmd, tr);
  auto* eval = app.add_subcommand("eval", "retrieve for a query set and compute metrics");
  add_eval(*eval, ev);
  auto* rerank = app.add_subcommand("rerank", "MMR re-ranking of the model's top candidates");
  add_rerank(*rerank, rr);
  auto* report = app.add_subcommand("report", "merge eval reports into one table");
  add_report(*report, rp);
  auto* replay = app.add_subcommand("replay", "re-run the command recorded in a manifest");
  add_replay(*replay, rl);

  std::vector<std::string> argv_store{"ddsi"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 2;
  }

  Context ctx{args, out, err};
  try {
    if (*generate) return cmd_generate(ctx, gen);
    if (*train_cmd) return cmd_train(ctx, tr);
    if (*eval) return cmd_eval(ctx, ev);
    if (*rerank) return cmd_rerank(ctx, rr);
    if (*report) return cmd_report(ctx, rp);
    if (*replay) return cmd_replay(ctx, rl);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_config_error(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ddsi::cli
