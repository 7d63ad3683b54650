// Command-line front door: every stage of the pipeline is a subcommand,
// plus `pipeline` to run them all under one config with a hash manifest.
//
// Exit codes: 0 success, 1 usage, 2 data/format error, 3 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "ehfkt/bkt.hpp"
#include "ehfkt/dfes.hpp"
#include "ehfkt/errors.hpp"
#include "ehfkt/evalkit.hpp"
#include "ehfkt/kdes.hpp"
#include "ehfkt/pipeline.hpp"
#include "ehfkt/sfes.hpp"
#include "ehfkt/syngen.hpp"
#include "ehfkt/tracer.hpp"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using namespace ehfkt;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "run-config JSON file");
  sub->add_option("--out", args.out_dir, "output directory");
  sub->add_option("--seed", args.seed, "seed override");
}

RunConfig load_config_or_default(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = load_run_config(args.config_path);
  if (args.seed) cfg.seeds = {*args.seed};
  return cfg;
}

std::uint64_t single_seed(const RunConfig& cfg) { return cfg.seeds.front(); }

Corpus load_corpus_args(const std::string& corpus_path, const std::string& embeddings_path) {
  return load_corpus(corpus_path, embeddings_path);
}

int run_main(int argc, char** argv) {
  CLI::App app{"knowledge-tracing toolkit: feature subsystems, LSTM tracer, baselines"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic corpus and response logs");
  CommonArgs gen_args;
  add_common(gen_cmd, gen_args);
  gen_cmd->callback([&] {
    const RunConfig cfg = load_config_or_default(gen_args);
    GenConfig gen = cfg.gen;
    gen.seed = single_seed(cfg);
    fs::create_directories(gen_args.out_dir);
    auto [corpus, truth] = gen_corpus(gen);
    auto responses = gen_responses(gen, corpus, truth);
    std::map<std::string, Matrix> embeddings;
    for (const ExerciseRecord& e : corpus.exercises()) embeddings.emplace(e.exercise_id, e.tokens);
    save_embeddings(embeddings, gen_args.out_dir + "/embeddings.txt");
    save_corpus_meta(corpus, gen_args.out_dir + "/corpus.jsonl");
    save_responses(responses, gen_args.out_dir + "/responses.jsonl");
    save_truth(truth, corpus, responses, gen_args.out_dir + "/truth.jsonl");
    std::cout << "wrote corpus (" << corpus.size() << " exercises), responses ("
              << responses.size() << " students) under " << gen_args.out_dir << "\n";
  });

  // ---- train-kdes ----
  auto* kdes_cmd = app.add_subcommand("train-kdes", "train the knowledge-distribution classifier");
  CommonArgs kdes_args;
  std::string kdes_corpus = "out/corpus.jsonl", kdes_embeddings = "out/embeddings.txt";
  add_common(kdes_cmd, kdes_args);
  kdes_cmd->add_option("--corpus", kdes_corpus, "corpus JSONL");
  kdes_cmd->add_option("--embeddings", kdes_embeddings, "embeddings file");
  kdes_cmd->callback([&] {
    const RunConfig cfg = load_config_or_default(kdes_args);
    const Corpus corpus = load_corpus_args(kdes_corpus, kdes_embeddings);
    const KdesTrainResult result = train_kdes(corpus, cfg.kdes, single_seed(cfg));
    fs::create_directories(kdes_args.out_dir);
    save_checkpoint(kdes_to_checkpoint(result.params, run_config_fingerprint(cfg)),
                    kdes_args.out_dir + "/kdes_checkpoint.json");
    emit_curve_csv(result.accuracy_curve, kdes_args.out_dir + "/kdes_accuracy.csv");
    save_vectors(kdes_predict_all(result.params, corpus),
                 kdes_args.out_dir + "/kdes_vectors.jsonl");
    std::cout << "holdout accuracy " << result.holdout_accuracy << "\n";
  });

  // ---- predict-kdes ----
  auto* pkdes_cmd = app.add_subcommand("predict-kdes", "emit knowledge distributions");
  CommonArgs pkdes_args;
  std::string pkdes_checkpoint, pkdes_corpus = "out/corpus.jsonl",
                                pkdes_embeddings = "out/embeddings.txt";
  add_common(pkdes_cmd, pkdes_args);
  pkdes_cmd->add_option("--checkpoint", pkdes_checkpoint, "kdes checkpoint")->required();
  pkdes_cmd->add_option("--corpus", pkdes_corpus, "corpus JSONL");
  pkdes_cmd->add_option("--embeddings", pkdes_embeddings, "embeddings file");
  pkdes_cmd->callback([&] {
    const Corpus corpus = load_corpus_args(pkdes_corpus, pkdes_embeddings);
    const TextCnnParams params = kdes_from_checkpoint(load_checkpoint(pkdes_checkpoint));
    fs::create_directories(pkdes_args.out_dir);
    save_vectors(kdes_predict_all(params, corpus), pkdes_args.out_dir + "/kdes_vectors.jsonl");
    std::cout << "wrote " << pkdes_args.out_dir << "/kdes_vectors.jsonl\n";
  });

  // ---- compute-rates ----
  auto* rates_cmd = app.add_subcommand("compute-rates", "empirical correct rates per exercise");
  CommonArgs rates_args;
  std::string rates_responses = "out/train_responses.jsonl";
  int min_attempts = 5;
  add_common(rates_cmd, rates_args);
  rates_cmd->add_option("--responses", rates_responses, "response log JSONL");
  rates_cmd->add_option("--min-attempts", min_attempts, "confidence threshold");
  rates_cmd->callback([&] {
    const auto logs = load_responses(rates_responses);
    const DifficultyTable table = compute_correct_rates(logs, min_attempts);
    fs::create_directories(rates_args.out_dir);
    save_rates(table, rates_args.out_dir + "/rates.jsonl");
    std::cout << "rates for " << table.by_id.size() << " exercises\n";
  });

  // ---- train-dfes ----
  auto* dfes_cmd = app.add_subcommand("train-dfes", "train the difficulty regressor");
  CommonArgs dfes_args;
  std::string dfes_corpus = "out/corpus.jsonl", dfes_embeddings = "out/embeddings.txt",
              dfes_rates = "out/rates.jsonl";
  add_common(dfes_cmd, dfes_args);
  dfes_cmd->add_option("--corpus", dfes_corpus, "corpus JSONL");
  dfes_cmd->add_option("--embeddings", dfes_embeddings, "embeddings file");
  dfes_cmd->add_option("--rates", dfes_rates, "rates JSONL");
  dfes_cmd->callback([&] {
    const RunConfig cfg = load_config_or_default(dfes_args);
    const Corpus corpus = load_corpus_args(dfes_corpus, dfes_embeddings);
    const DifficultyTable table = load_rates(dfes_rates);
    const DfesTrainResult result = train_dfes(corpus, table, cfg.dfes, single_seed(cfg));
    fs::create_directories(dfes_args.out_dir);
    save_checkpoint(dfes_to_checkpoint(result.params, run_config_fingerprint(cfg)),
                    dfes_args.out_dir + "/dfes_checkpoint.json");
    save_difficulties(dfes_predict_all(result.params, corpus),
                      dfes_args.out_dir + "/difficulty.jsonl");
    std::cout << "holdout RMSE " << result.holdout_rmse << "\n";
  });

  // ---- predict-dfes ----
  auto* pdfes_cmd = app.add_subcommand("predict-dfes", "emit difficulty estimates");
  CommonArgs pdfes_args;
  std::string pdfes_checkpoint, pdfes_corpus = "out/corpus.jsonl",
                                pdfes_embeddings = "out/embeddings.txt";
  add_common(pdfes_cmd, pdfes_args);
  pdfes_cmd->add_option("--checkpoint", pdfes_checkpoint, "dfes checkpoint")->required();
  pdfes_cmd->add_option("--corpus", pdfes_corpus, "corpus JSONL");
  pdfes_cmd->add_option("--embeddings", pdfes_embeddings, "embeddings file");
  pdfes_cmd->callback([&] {
    const Corpus corpus = load_corpus_args(pdfes_corpus, pdfes_embeddings);
    const DfesParams params = dfes_from_checkpoint(load_checkpoint(pdfes_checkpoint));
    fs::create_directories(pdfes_args.out_dir);
    save_difficulties(dfes_predict_all(params, corpus), pdfes_args.out_dir + "/difficulty.jsonl");
    std::cout << "wrote " << pdfes_args.out_dir << "/difficulty.jsonl\n";
  });

  // ---- cluster ----
  auto* cluster_cmd = app.add_subcommand("cluster", "agglomerative clustering of exercises");
  CommonArgs cluster_args;
  std::string cluster_embeddings = "out/embeddings.txt";
  int lambda = -1;
  bool svg = false;
  add_common(cluster_cmd, cluster_args);
  cluster_cmd->add_option("--embeddings", cluster_embeddings, "embeddings file");
  cluster_cmd->add_option("--lambda", lambda, "number of clusters at the cut");
  cluster_cmd->add_flag("--svg", svg, "also write a dendrogram sketch");
  cluster_cmd->callback([&] {
    const RunConfig cfg = load_config_or_default(cluster_args);
    const int k = lambda > 0 ? lambda : cfg.sfes_lambda;
    if (k < 1) throw UsageError("cluster: pass --lambda or set sfes.lambda in the config");
    const auto embeddings = load_embeddings(cluster_embeddings);
    std::vector<Matrix> pooled;
    std::vector<std::string> leaf_ids;
    for (const auto& [id, tokens] : embeddings) {
      pooled.push_back(pool_mean(tokens));
      leaf_ids.push_back(id);
    }
    const Dendrogram dendrogram = agglomerate(pooled);
    fs::create_directories(cluster_args.out_dir);
    save_dendrogram(dendrogram, leaf_ids, cluster_args.out_dir + "/dendrogram.txt");
    if (svg || cfg.sfes_svg) dendrogram_svg(dendrogram, cluster_args.out_dir + "/dendrogram.svg");
    const ClusterAssignment assignment = assign_clusters(dendrogram, leaf_ids, k);
    save_assignment(assignment, cluster_args.out_dir + "/clusters.jsonl");
    std::cout << leaf_ids.size() << " exercises cut into " << k << " clusters\n";
  });

  // ---- train-tracer / evaluate ----
  const auto build_context = [](const Corpus& corpus, const std::string& dir) {
    FeatureContext ctx = FeatureContext::from_corpus(corpus);
    const std::string vectors_path = dir + "/kdes_vectors.jsonl";
    const std::string clusters_path = dir + "/clusters.jsonl";
    const std::string difficulty_path = dir + "/difficulty.jsonl";
    if (fs::exists(vectors_path)) {
      ctx.knowledge = load_vectors(vectors_path);
      for (const auto& [id, v] : ctx.knowledge) ctx.num_tags = std::max(ctx.num_tags, v.cols());
    }
    if (fs::exists(clusters_path)) ctx.clusters = load_assignment(clusters_path);
    if (fs::exists(difficulty_path)) ctx.difficulty = load_difficulties(difficulty_path);
    return ctx;
  };

  auto* tracer_cmd = app.add_subcommand("train-tracer", "train the sequence model");
  CommonArgs tracer_args;
  std::string tracer_variant = "EHFKT";
  std::string tracer_data = "out";
  add_common(tracer_cmd, tracer_args);
  tracer_cmd->add_option("--variant", tracer_variant,
                         "DKT | EHFKT_K | EHFKT_S | EHFKT_D | EHFKT_T | EHFKT");
  tracer_cmd->add_option("--data-dir", tracer_data,
                         "directory with corpus/embeddings/splits/features");
  tracer_cmd->callback([&] {
    const RunConfig cfg = load_config_or_default(tracer_args);
    TracerConfig tc = cfg.tracer;
    tc.variant = variant_from_string(tracer_variant);
    tc.seed = single_seed(cfg);
    const Corpus corpus =
        load_corpus_args(tracer_data + "/corpus.jsonl", tracer_data + "/embeddings.txt");
    const auto train_logs = load_responses(tracer_data + "/train_responses.jsonl");
    const auto test_logs = load_responses(tracer_data + "/test_responses.jsonl");
    validate_against_corpus(train_logs, corpus);
    validate_against_corpus(test_logs, corpus);
    const FeatureContext ctx = build_context(corpus, tracer_data);
    TracerTrainResult result = train_tracer(tc, train_logs, test_logs, ctx);

    fs::create_directories(tracer_args.out_dir);
    const std::string name = variant_name(tc.variant);
    const std::string fingerprint = run_config_fingerprint(cfg);
    save_checkpoint(tracer_to_checkpoint(result.params, tc.variant, fingerprint),
                    tracer_args.out_dir + "/tracer_" + name + "_checkpoint.json");
    std::ofstream curve(tracer_args.out_dir + "/tracer_" + name + "_curve.csv");
    curve << "epoch,train_loss,test_auc\n";
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
      curve << result.loss_curve[i].first << "," << result.loss_curve[i].second << ","
            << result.auc_curve[i].second << "\n";
    }
    result.report.run_id = name + "-seed" + std::to_string(tc.seed);
    result.report.config_fingerprint = fingerprint;
    result.report.curve_path = "tracer_" + name + "_curve.csv";
    save_report(result.report, tracer_args.out_dir + "/tracer_" + name + "_report.json");
    std::cout << name << " test AUC " << result.report.auc << "\n";
  });

  // ---- fit-bkt ----
  auto* bkt_cmd = app.add_subcommand("fit-bkt", "EM-fit the BKT baseline");
  CommonArgs bkt_args;
  std::string bkt_responses = "out/train_responses.jsonl", bkt_corpus = "out/corpus.jsonl",
              bkt_embeddings = "out/embeddings.txt";
  add_common(bkt_cmd, bkt_args);
  bkt_cmd->add_option("--responses", bkt_responses, "training responses JSONL");
  bkt_cmd->add_option("--corpus", bkt_corpus, "corpus JSONL");
  bkt_cmd->add_option("--embeddings", bkt_embeddings, "embeddings file");
  bkt_cmd->callback([&] {
    const RunConfig cfg = load_config_or_default(bkt_args);
    const Corpus corpus = load_corpus_args(bkt_corpus, bkt_embeddings);
    const auto logs = load_responses(bkt_responses);
    validate_against_corpus(logs, corpus);
    const BktFitResult fit =
        bkt_em_fit(group_by_tag(logs, corpus), {}, cfg.bkt_max_iters, cfg.bkt_tol);
    fs::create_directories(bkt_args.out_dir);
    save_bkt(fit.model, bkt_args.out_dir + "/bkt_params.json");
    std::cout << "fitted " << fit.model.by_tag.size() << " tags\n";
  });

  // ---- eval-bkt ----
  auto* ebkt_cmd = app.add_subcommand("eval-bkt", "evaluate fitted BKT parameters");
  CommonArgs ebkt_args;
  std::string ebkt_params = "out/bkt_params.json", ebkt_responses = "out/test_responses.jsonl",
              ebkt_corpus = "out/corpus.jsonl", ebkt_embeddings = "out/embeddings.txt";
  add_common(ebkt_cmd, ebkt_args);
  ebkt_cmd->add_option("--params", ebkt_params, "bkt params JSON");
  ebkt_cmd->add_option("--responses", ebkt_responses, "test responses JSONL");
  ebkt_cmd->add_option("--corpus", ebkt_corpus, "corpus JSONL");
  ebkt_cmd->add_option("--embeddings", ebkt_embeddings, "embeddings file");
  ebkt_cmd->callback([&] {
    const RunConfig cfg = load_config_or_default(ebkt_args);
    const Corpus corpus = load_corpus_args(ebkt_corpus, ebkt_embeddings);
    const auto logs = load_responses(ebkt_responses);
    validate_against_corpus(logs, corpus);
    EvalReport report = bkt_evaluate(load_bkt(ebkt_params), logs, corpus);
    report.seed = single_seed(cfg);
    report.run_id = "BKT-seed" + std::to_string(report.seed);
    report.config_fingerprint = run_config_fingerprint(cfg);
    fs::create_directories(ebkt_args.out_dir);
    save_report(report, ebkt_args.out_dir + "/bkt_report.json");
    std::cout << "BKT test AUC " << report.auc << "\n";
  });

  // ---- evaluate ----
  auto* eval_cmd = app.add_subcommand("evaluate", "re-evaluate a tracer checkpoint");
  CommonArgs eval_args;
  std::string eval_checkpoint, eval_data = "out";
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "tracer checkpoint")->required();
  eval_cmd->add_option("--data-dir", eval_data, "directory with corpus/splits/features");
  eval_cmd->callback([&] {
    const RunConfig cfg = load_config_or_default(eval_args);
    const Corpus corpus =
        load_corpus_args(eval_data + "/corpus.jsonl", eval_data + "/embeddings.txt");
    const auto test_logs = load_responses(eval_data + "/test_responses.jsonl");
    validate_against_corpus(test_logs, corpus);
    const Checkpoint ck = load_checkpoint(eval_checkpoint);
    auto [params, variant] = tracer_from_checkpoint(ck);
    const std::string fingerprint = run_config_fingerprint(cfg);
    if (!ck.config_fingerprint.empty() && ck.config_fingerprint != fingerprint) {
      throw DataError("evaluate: config fingerprint " + fingerprint +
                      " does not match checkpoint's " + ck.config_fingerprint);
    }
    TracerConfig tc = cfg.tracer;
    tc.variant = variant;
    tc.seed = single_seed(cfg);
    tc.hidden = params.hidden;
    const FeatureContext ctx = build_context(corpus, eval_data);
    EvalReport report = evaluate_tracer(params, tc, ctx, test_logs);
    report.run_id = variant_name(variant) + "-eval";
    report.config_fingerprint = fingerprint;
    fs::create_directories(eval_args.out_dir);
    save_report(report, eval_args.out_dir + "/eval_report.json");
    std::cout << variant_name(variant) << " test AUC " << report.auc << "\n";
  });

  // ---- compare ----
  auto* compare_cmd = app.add_subcommand("compare", "tabulate eval reports");
  CommonArgs compare_args;
  std::vector<std::string> report_paths;
  bool with_reference = false;
  add_common(compare_cmd, compare_args);
  compare_cmd->add_option("--reports", report_paths, "eval report JSON files")->required();
  compare_cmd->add_flag("--reference", with_reference, "annotate with published reference AUCs");
  compare_cmd->callback([&] {
    std::vector<EvalReport> reports;
    for (const std::string& path : report_paths) reports.push_back(load_report(path));
    const auto rows = summarize_runs(reports);
    const std::string table = format_comparison(rows, with_reference);
    fs::create_directories(compare_args.out_dir);
    std::ofstream out(compare_args.out_dir + "/comparison.txt");
    out << table;
    write_comparison_csv(rows, compare_args.out_dir + "/comparison.csv");
    std::cout << table;
  });

  // ---- pipeline ----
  auto* pipe_cmd = app.add_subcommand("pipeline", "run every stage end to end");
  CommonArgs pipe_args;
  int pipe_jobs = 0;
  add_common(pipe_cmd, pipe_args);
  pipe_cmd->add_option("--jobs", pipe_jobs, "parallel tracer trainings (default from config)");
  pipe_cmd->callback([&] {
    if (pipe_args.config_path.empty()) throw UsageError("pipeline: --config is required");
    RunConfig cfg = load_run_config(pipe_args.config_path);
    if (pipe_args.seed) cfg.seeds = {*pipe_args.seed};
    if (pipe_jobs > 0) cfg.jobs = pipe_jobs;
    const PipelineResult result = run_pipeline(
        cfg, pipe_args.out_dir, [](const std::string& msg) { std::cout << msg << "\n"; });
    std::cout << result.comparison_text;
    std::cout << "manifest: " << result.manifest_path << "\n";
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_main(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
