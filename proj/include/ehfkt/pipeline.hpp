#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ehfkt/dfes.hpp"
#include "ehfkt/evalkit.hpp"
#include "ehfkt/kdes.hpp"
#include "ehfkt/syngen.hpp"
#include "ehfkt/tracer.hpp"
#include "nlohmann/json_fwd.hpp"

namespace ehfkt {

/// One run-config document drives every stage. Unknown keys anywhere in
/// the document are rejected before any work starts.
struct RunConfig {
  std::vector<std::uint64_t> seeds{1};
  GenConfig gen;
  double split_ratio = 0.8;
  KdesHyper kdes;
  DfesHyper dfes;
  int dfes_min_attempts = 5;
  int sfes_lambda = -1;  // required: number of clusters at the cut
  bool sfes_svg = false;
  TracerConfig tracer;
  std::vector<Variant> variants{Variant::EHFKT,   Variant::EHFKT_T, Variant::EHFKT_K,
                                Variant::EHFKT_S, Variant::EHFKT_D, Variant::DKT};
  bool run_bkt = true;
  int bkt_max_iters = 100;
  double bkt_tol = 1e-6;
  int jobs = 1;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);
std::string run_config_fingerprint(const RunConfig& cfg);

struct PipelineResult {
  std::vector<EvalReport> reports;       // tracer variants and BKT, all seeds
  std::string comparison_text;
  std::string manifest_path;
};

/// gen -> kdes -> dfes -> sfes -> tracer variants -> bkt -> compare, per
/// seed, everything written under out_dir with a manifest of artifact
/// hashes. Stage failures are recorded in the manifest and rethrown.
PipelineResult run_pipeline(const RunConfig& cfg, const std::string& out_dir,
                            const std::function<void(const std::string&)>& log = {});

}  // namespace ehfkt
