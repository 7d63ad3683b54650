#include "ehfkt/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>

#include "ehfkt/bkt.hpp"
#include "ehfkt/errors.hpp"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;

namespace ehfkt {

namespace {

TracerConfig tracer_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"hidden", "epochs", "lr", "max_seq_len", "batch_students",
                          "soft_tag_readout", "grad_clip", "optimizer"},
                      "tracer config");
  TracerConfig cfg;
  if (j.contains("hidden")) cfg.hidden = j.at("hidden").get<int>();
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
  if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
  if (j.contains("max_seq_len")) cfg.max_seq_len = j.at("max_seq_len").get<int>();
  if (j.contains("batch_students")) cfg.batch_students = j.at("batch_students").get<int>();
  if (j.contains("soft_tag_readout")) cfg.soft_tag_readout = j.at("soft_tag_readout").get<bool>();
  if (j.contains("grad_clip")) cfg.grad_clip = j.at("grad_clip").get<double>();
  if (j.contains("optimizer")) {
    const std::string opt = j.at("optimizer").get<std::string>();
    if (opt == "adam") {
      cfg.use_sgd = false;
    } else if (opt == "sgd") {
      cfg.use_sgd = true;
    } else {
      throw UsageError("tracer config: optimizer must be 'adam' or 'sgd', got '" + opt + "'");
    }
  }
  if (cfg.hidden < 1 || cfg.epochs < 1 || cfg.batch_students < 1 || cfg.max_seq_len < 2) {
    throw UsageError("tracer config: hidden/epochs/batch must be >= 1, max_seq_len >= 2");
  }
  return cfg;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"seeds", "gen", "split", "kdes", "dfes", "sfes", "tracer", "variants",
                          "bkt", "jobs"},
                      "run config");
  RunConfig cfg;
  if (j.contains("seeds")) {
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw UsageError("run config: seeds must not be empty");
  }
  if (j.contains("gen")) cfg.gen = gen_config_from_json(j.at("gen"));
  if (j.contains("split")) {
    reject_unknown_keys(j.at("split"), {"ratio"}, "split config");
    if (j.at("split").contains("ratio")) cfg.split_ratio = j.at("split").at("ratio").get<double>();
  }
  if (!(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0)) {
    throw UsageError("run config: split ratio must be in (0,1)");
  }
  if (j.contains("kdes")) {
    const auto& k = j.at("kdes");
    reject_unknown_keys(k, {"filters", "epochs", "lr", "holdout_ratio"}, "kdes config");
    if (k.contains("filters")) cfg.kdes.filters = k.at("filters").get<int>();
    if (k.contains("epochs")) cfg.kdes.epochs = k.at("epochs").get<int>();
    if (k.contains("lr")) cfg.kdes.lr = k.at("lr").get<double>();
    if (k.contains("holdout_ratio")) cfg.kdes.holdout_ratio = k.at("holdout_ratio").get<double>();
  }
  if (j.contains("dfes")) {
    const auto& d = j.at("dfes");
    reject_unknown_keys(d, {"hidden", "epochs", "lr", "holdout_ratio", "min_attempts", "buckets"},
                        "dfes config");
    if (d.contains("hidden")) cfg.dfes.hidden = d.at("hidden").get<int>();
    if (d.contains("epochs")) cfg.dfes.epochs = d.at("epochs").get<int>();
    if (d.contains("lr")) cfg.dfes.lr = d.at("lr").get<double>();
    if (d.contains("holdout_ratio")) cfg.dfes.holdout_ratio = d.at("holdout_ratio").get<double>();
    if (d.contains("min_attempts")) cfg.dfes_min_attempts = d.at("min_attempts").get<int>();
    if (d.contains("buckets")) cfg.dfes.buckets = d.at("buckets").get<int>();
  }
  if (j.contains("sfes")) {
    const auto& s = j.at("sfes");
    reject_unknown_keys(s, {"lambda", "svg"}, "sfes config");
    if (s.contains("lambda")) cfg.sfes_lambda = s.at("lambda").get<int>();
    if (s.contains("svg")) cfg.sfes_svg = s.at("svg").get<bool>();
  }
  if (j.contains("tracer")) cfg.tracer = tracer_config_from_json(j.at("tracer"));
  if (j.contains("variants")) {
    cfg.variants.clear();
    for (const auto& name : j.at("variants")) {
      cfg.variants.push_back(variant_from_string(name.get<std::string>()));
    }
    if (cfg.variants.empty()) throw UsageError("run config: variants must not be empty");
  }
  if (j.contains("bkt")) {
    const auto& b = j.at("bkt");
    reject_unknown_keys(b, {"enabled", "max_iters", "tol"}, "bkt config");
    if (b.contains("enabled")) cfg.run_bkt = b.at("enabled").get<bool>();
    if (b.contains("max_iters")) cfg.bkt_max_iters = b.at("max_iters").get<int>();
    if (b.contains("tol")) cfg.bkt_tol = b.at("tol").get<double>();
  }
  if (j.contains("jobs")) {
    cfg.jobs = j.at("jobs").get<int>();
    if (cfg.jobs < 1) throw UsageError("run config: jobs must be >= 1");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read run config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("bad run config json in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  std::vector<std::string> variant_names;
  for (Variant v : cfg.variants) variant_names.push_back(variant_name(v));
  return nlohmann::json{
      {"seeds", cfg.seeds},
      {"gen", gen_config_to_json(cfg.gen)},
      {"split", {{"ratio", cfg.split_ratio}}},
      {"kdes",
       {{"filters", cfg.kdes.filters},
        {"epochs", cfg.kdes.epochs},
        {"lr", cfg.kdes.lr},
        {"holdout_ratio", cfg.kdes.holdout_ratio}}},
      {"dfes",
       {{"hidden", cfg.dfes.hidden},
        {"epochs", cfg.dfes.epochs},
        {"lr", cfg.dfes.lr},
        {"holdout_ratio", cfg.dfes.holdout_ratio},
        {"min_attempts", cfg.dfes_min_attempts},
        {"buckets", cfg.dfes.buckets}}},
      {"sfes", {{"lambda", cfg.sfes_lambda}, {"svg", cfg.sfes_svg}}},
      {"tracer",
       {{"hidden", cfg.tracer.hidden},
        {"epochs", cfg.tracer.epochs},
        {"lr", cfg.tracer.lr},
        {"max_seq_len", cfg.tracer.max_seq_len},
        {"batch_students", cfg.tracer.batch_students},
        {"soft_tag_readout", cfg.tracer.soft_tag_readout},
        {"grad_clip", cfg.tracer.grad_clip},
        {"optimizer", cfg.tracer.use_sgd ? "sgd" : "adam"}}},
      {"variants", variant_names},
      {"bkt", {{"enabled", cfg.run_bkt}, {"max_iters", cfg.bkt_max_iters}, {"tol", cfg.bkt_tol}}},
      {"jobs", cfg.jobs}};
}

std::string run_config_fingerprint(const RunConfig& cfg) {
  return fingerprint_json(run_config_to_json(cfg));
}

namespace {

void write_tracer_curve_csv(const TracerTrainResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write curve: " + path);
  out << "epoch,train_loss,test_auc\n";
  for (std::size_t i = 0; i < r.loss_curve.size(); ++i) {
    out << r.loss_curve[i].first << "," << r.loss_curve[i].second << ","
        << r.auc_curve[i].second << "\n";
  }
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const std::string& out_dir,
                            const std::function<void(const std::string&)>& log) {
  if (cfg.sfes_lambda < 1) {
    throw UsageError("run config: sfes.lambda (cluster count) is required for the pipeline");
  }
  const auto say = [&](const std::string& msg) {
    if (log) log(msg);
  };
  fs::create_directories(out_dir);
  const std::string fingerprint = run_config_fingerprint(cfg);

  nlohmann::json manifest;
  manifest["config_fingerprint"] = fingerprint;
  manifest["runs"] = nlohmann::json::array();
  std::vector<std::string> artifacts;
  const std::string manifest_path = out_dir + "/manifest.json";

  const auto flush_manifest = [&]() {
    nlohmann::json listed = nlohmann::json::array();
    std::vector<std::string> sorted = artifacts;
    std::sort(sorted.begin(), sorted.end());
    for (const std::string& rel : sorted) {
      listed.push_back({{"path", rel}, {"fnv1a64", fnv1a_hex_of_file(out_dir + "/" + rel)}});
    }
    manifest["artifacts"] = std::move(listed);
    std::ofstream out(manifest_path);
    if (!out) throw DataError("cannot write manifest: " + manifest_path);
    out << manifest.dump(2) << "\n";
  };

  PipelineResult result;
  result.manifest_path = manifest_path;

  {
    const std::string rel = "run_config.json";
    std::ofstream out(out_dir + "/" + rel);
    out << run_config_to_json(cfg).dump(2) << "\n";
    artifacts.push_back(rel);
  }

  for (const std::uint64_t seed : cfg.seeds) {
    const std::string run_rel = "run-" + std::to_string(seed);
    const std::string run_dir = out_dir + "/" + run_rel;
    fs::create_directories(run_dir);
    nlohmann::json run_entry{{"seed", seed}, {"stages", nlohmann::json::object()}};
    auto& stages = run_entry["stages"];

    const auto artifact = [&](const std::string& name) {
      artifacts.push_back(run_rel + "/" + name);
      return run_dir + "/" + name;
    };

    std::string stage_name;
    try {
      // --- gen ---
      stage_name = "gen";
      say("[seed " + std::to_string(seed) + "] generating data");
      GenConfig gen = cfg.gen;
      gen.seed = seed;
      auto [corpus, truth] = gen_corpus(gen);
      auto responses = gen_responses(gen, corpus, truth);
      {
        std::map<std::string, Matrix> embeddings;
        for (const ExerciseRecord& e : corpus.exercises()) {
          embeddings.emplace(e.exercise_id, e.tokens);
        }
        save_embeddings(embeddings, artifact("embeddings.txt"));
      }
      save_corpus_meta(corpus, artifact("corpus.jsonl"));
      save_responses(responses, artifact("responses.jsonl"));
      save_truth(truth, corpus, responses, artifact("truth.jsonl"));
      stages[stage_name] = "ok";

      // --- split ---
      stage_name = "split";
      auto [train_logs, test_logs] = split_train_test(responses, cfg.split_ratio, seed);
      save_responses(train_logs, artifact("train_responses.jsonl"));
      save_responses(test_logs, artifact("test_responses.jsonl"));
      stages[stage_name] = "ok";

      // --- rates (train side only: features must not see test outcomes) ---
      stage_name = "rates";
      const DifficultyTable rates = compute_correct_rates(train_logs, cfg.dfes_min_attempts);
      save_rates(rates, artifact("rates.jsonl"));
      stages[stage_name] = "ok";

      // --- kdes ---
      stage_name = "kdes";
      say("[seed " + std::to_string(seed) + "] training KDES");
      const KdesTrainResult kdes = train_kdes(corpus, cfg.kdes, seed);
      save_checkpoint(kdes_to_checkpoint(kdes.params, fingerprint),
                      artifact("kdes_checkpoint.json"));
      emit_curve_csv(kdes.accuracy_curve, artifact("kdes_accuracy.csv"));
      const auto vectors = kdes_predict_all(kdes.params, corpus);
      save_vectors(vectors, artifact("kdes_vectors.jsonl"));
      stages[stage_name] = "ok";

      // --- dfes ---
      stage_name = "dfes";
      say("[seed " + std::to_string(seed) + "] training DFES");
      const DfesTrainResult dfes = train_dfes(corpus, rates, cfg.dfes, seed);
      save_checkpoint(dfes_to_checkpoint(dfes.params, fingerprint),
                      artifact("dfes_checkpoint.json"));
      const auto difficulties = dfes_predict_all(dfes.params, corpus);
      save_difficulties(difficulties, artifact("difficulty.jsonl"));
      stages[stage_name] = "ok";

      // --- sfes ---
      stage_name = "sfes";
      say("[seed " + std::to_string(seed) + "] clustering");
      std::vector<Matrix> pooled;
      std::vector<std::string> leaf_ids;
      for (const ExerciseRecord& e : corpus.exercises()) {
        pooled.push_back(pool_mean(e.tokens));
        leaf_ids.push_back(e.exercise_id);
      }
      const Dendrogram dendrogram = agglomerate(pooled);
      save_dendrogram(dendrogram, leaf_ids, artifact("dendrogram.txt"));
      if (cfg.sfes_svg) dendrogram_svg(dendrogram, artifact("dendrogram.svg"));
      const ClusterAssignment assignment = assign_clusters(dendrogram, leaf_ids, cfg.sfes_lambda);
      save_assignment(assignment, artifact("clusters.jsonl"));
      stages[stage_name] = "ok";

      // --- feature context shared by every variant of this run ---
      FeatureContext ctx = FeatureContext::from_corpus(corpus);
      ctx.num_tags = 0;
      for (const auto& [id, v] : vectors) ctx.num_tags = std::max(ctx.num_tags, v.cols());
      ctx.knowledge = vectors;
      ctx.clusters = assignment;
      ctx.difficulty = difficulties;

      // --- bkt ---
      if (cfg.run_bkt) {
        stage_name = "bkt";
        say("[seed " + std::to_string(seed) + "] fitting BKT");
        const auto grouped = group_by_tag(train_logs, corpus);
        const BktFitResult fit = bkt_em_fit(grouped, {}, cfg.bkt_max_iters, cfg.bkt_tol);
        save_bkt(fit.model, artifact("bkt_params.json"));
        EvalReport report = bkt_evaluate(fit.model, test_logs, corpus);
        report.seed = seed;
        report.run_id = "BKT-seed" + std::to_string(seed);
        report.config_fingerprint = fingerprint;
        save_report(report, artifact("bkt_report.json"));
        result.reports.push_back(report);
        stages[stage_name] = "ok";
      }

      // --- tracer variants (independent runs; may execute in parallel) ---
      stage_name = "tracer";
      std::vector<TracerTrainResult> trained(cfg.variants.size());
      const int jobs = std::max(1, cfg.jobs);
      std::size_t next_variant = 0;
      while (next_variant < cfg.variants.size()) {
        const std::size_t chunk_end =
            std::min(cfg.variants.size(), next_variant + static_cast<std::size_t>(jobs));
        std::vector<std::future<TracerTrainResult>> futures;
        for (std::size_t i = next_variant; i < chunk_end; ++i) {
          TracerConfig tc = cfg.tracer;
          tc.variant = cfg.variants[i];
          tc.seed = seed;
          say("[seed " + std::to_string(seed) + "] training " + variant_name(tc.variant));
          futures.push_back(std::async(std::launch::async, [tc, &train_logs, &test_logs, &ctx] {
            return train_tracer(tc, train_logs, test_logs, ctx);
          }));
        }
        for (std::size_t i = next_variant; i < chunk_end; ++i) {
          trained[i] = futures[i - next_variant].get();
        }
        next_variant = chunk_end;
      }
      for (std::size_t i = 0; i < cfg.variants.size(); ++i) {
        const std::string name = variant_name(cfg.variants[i]);
        TracerTrainResult& tr = trained[i];
        save_checkpoint(tracer_to_checkpoint(tr.params, cfg.variants[i], fingerprint),
                        artifact("tracer_" + name + "_checkpoint.json"));
        write_tracer_curve_csv(tr, artifact("tracer_" + name + "_curve.csv"));
        tr.report.run_id = name + "-seed" + std::to_string(seed);
        tr.report.config_fingerprint = fingerprint;
        tr.report.curve_path = run_rel + "/tracer_" + name + "_curve.csv";
        save_report(tr.report, artifact("tracer_" + name + "_report.json"));
        result.reports.push_back(tr.report);
      }
      stages[stage_name] = "ok";
    } catch (const std::exception& e) {
      stages[stage_name] = std::string("failed: ") + e.what();
      manifest["runs"].push_back(run_entry);
      flush_manifest();
      throw;
    }
    manifest["runs"].push_back(run_entry);
  }

  const auto rows = summarize_runs(result.reports);
  result.comparison_text = format_comparison(rows, true);
  {
    std::ofstream out(out_dir + "/comparison.txt");
    out << result.comparison_text;
    artifacts.push_back("comparison.txt");
  }
  write_comparison_csv(rows, out_dir + "/comparison.csv");
  artifacts.push_back("comparison.csv");

  flush_manifest();
  return result;
}

}  // namespace ehfkt
