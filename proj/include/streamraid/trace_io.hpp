#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamraid/attack.hpp"
#include "streamraid/report.hpp"

// Trace files: {"format_version": 1, "kind": "trace", "dataset", "attack",
// "objective", "config": {...}, "sequences": [{"index", "steps": [{"t",
// "delta", "delta_norm", "clean_output", "adv_output", "loss", "lookahead",
// ["hallucination_mse"], ["wall_time_s"]}]}]}. Floats are written in their
// shortest round-trip form, so equal traces serialize to equal bytes.

namespace streamraid {

inline constexpr int kTraceFormatVersion = 1;

inline nlohmann::json attack_config_json(const AttackConfig& c) {
  nlohmann::json j;
  j["epsilon"] = c.epsilon;
  j["norm"] = c.p == Norm::kInf ? "inf" : "l2";
  j["k"] = c.k;
  j["max_count"] = c.max_count;
  j["alpha"] = c.effective_alpha();
  j["mc_samples"] = c.mc_samples;
  j["eta"] = c.eta;
  j["warm_start"] = c.warm_start;
  j["condition_on_perturbed"] = c.condition_on_perturbed;
  j["lo"] = c.lo;
  j["hi"] = c.hi;
  j["seed"] = c.seed;
  return j;
}

inline nlohmann::json trace_json(const PerturbationTrace& trace, std::size_t index) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    const TraceStep& s = trace.steps[t];
    nlohmann::json j;
    j["t"] = t + 1;
    j["delta"] = s.delta;
    j["delta_norm"] = trace.config.p == Norm::kInf ? norm_inf(s.delta) : norm_l2(s.delta);
    j["clean_output"] = s.clean_output;
    j["adv_output"] = s.adv_output;
    j["loss"] = s.loss;
    j["lookahead"] = s.lookahead;
    if (s.hallucination_mse) j["hallucination_mse"] = *s.hallucination_mse;
    if (trace.config.record_timing) j["wall_time_s"] = s.wall_time_s;
    steps.push_back(std::move(j));
  }
  return {{"index", index}, {"steps", std::move(steps)}};
}

// `traces[i]` belongs to evaluation sequence i; the per-sequence seeds are
// derived from cfg.seed.
inline std::string traces_to_json(const std::string& dataset, const std::string& attack,
                                  const std::vector<PerturbationTrace>& traces, const AttackConfig& cfg) {
  nlohmann::json doc;
  doc["format_version"] = kTraceFormatVersion;
  doc["kind"] = "trace";
  doc["dataset"] = dataset;
  doc["attack"] = attack;
  doc["objective"] = traces.empty() ? std::string() : traces[0].objective;
  doc["config"] = attack_config_json(cfg);
  nlohmann::json seqs = nlohmann::json::array();
  for (std::size_t i = 0; i < traces.size(); ++i) seqs.push_back(trace_json(traces[i], i));
  doc["sequences"] = std::move(seqs);
  return doc.dump(1) + "\n";
}

}  // namespace streamraid
