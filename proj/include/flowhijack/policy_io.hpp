// Policy checkpoints: tensor container plus a JSON sidecar carrying the
// FlowConfig, written next to the checkpoint as "<path>.json".
#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "flowhijack/checkpoint.hpp"
#include "flowhijack/flow.hpp"

namespace flowhijack {

inline nlohmann::ordered_json flow_config_json(const FlowConfig& cfg) {
  nlohmann::ordered_json j;
  j["action_dim"] = cfg.action_dim;
  j["horizon"] = cfg.horizon;
  j["obs_dim"] = cfg.obs_dim;
  j["embed_dim"] = cfg.embed_dim;
  j["hidden_width"] = cfg.hidden_width;
  j["tau_fourier_frequencies"] = cfg.tau_fourier_frequencies;
  j["ode_steps"] = cfg.ode_steps;
  j["tau_beta_a"] = cfg.tau_beta.first;
  j["tau_beta_b"] = cfg.tau_beta.second;
  return j;
}

inline FlowConfig flow_config_from_json(const nlohmann::json& j) {
  FlowConfig cfg;
  cfg.action_dim = j.at("action_dim").get<std::size_t>();
  cfg.horizon = j.at("horizon").get<std::size_t>();
  cfg.obs_dim = j.at("obs_dim").get<std::size_t>();
  cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
  cfg.hidden_width = j.at("hidden_width").get<std::size_t>();
  cfg.tau_fourier_frequencies = j.at("tau_fourier_frequencies").get<std::size_t>();
  cfg.ode_steps = j.at("ode_steps").get<std::size_t>();
  cfg.tau_beta = {j.at("tau_beta_a").get<double>(),
                  j.at("tau_beta_b").get<double>()};
  cfg.validate();
  return cfg;
}

inline void save_policy(const std::string& path, const PolicyParams& params,
                        const FlowConfig& cfg) {
  NamedTensors ts;
  for (const auto& [name, t] : params.named_const()) ts.emplace_back(name, *t);
  save_checkpoint(path, ts);
  std::ofstream os(path + ".json");
  if (!os) throw std::runtime_error("save_policy: cannot open " + path + ".json");
  os << flow_config_json(cfg).dump(2) << "\n";
}

struct LoadedPolicy {
  PolicyParams params;
  FlowConfig config;
};

inline LoadedPolicy load_policy(const std::string& path) {
  std::ifstream is(path + ".json");
  if (!is)
    throw std::runtime_error("load_policy: missing sidecar " + path + ".json");
  nlohmann::json j = nlohmann::json::parse(is);
  LoadedPolicy lp;
  lp.config = flow_config_from_json(j);

  NamedTensors ts = load_checkpoint(path);
  Rng dummy(0);
  lp.params = PolicyParams::init(lp.config, dummy);
  auto named = lp.params.named();
  if (ts.size() != named.size())
    throw std::runtime_error("load_policy: tensor count mismatch in " + path);
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (ts[i].first != named[i].name)
      throw std::runtime_error("load_policy: unexpected tensor " +
                               ts[i].first + " in " + path);
    if (ts[i].second.shape != named[i].value->shape)
      throw std::runtime_error("load_policy: shape mismatch for " +
                               ts[i].first);
    *named[i].value = std::move(ts[i].second);
  }
  return lp;
}

}  // namespace flowhijack
