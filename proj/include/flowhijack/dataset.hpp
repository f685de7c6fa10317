// Demonstration dataset generation and its JSONL file format: one
// demonstration per line with scene metadata embedded.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowhijack/env.hpp"
#include "flowhijack/rng.hpp"

namespace flowhijack {

// Generates n_per_task demonstrations for each of the five tasks and
// designates round(rate * n) of each task's demonstrations as poisonable.
inline std::vector<Demonstration> gen_dataset(std::size_t n_per_task,
                                              double poison_rate,
                                              std::uint64_t seed,
                                              std::size_t horizon = 8) {
  if (n_per_task < 1)
    throw std::invalid_argument("gen_dataset: n_per_task must be >= 1");
  if (poison_rate <= 0.0 || poison_rate > 1.0)
    throw std::invalid_argument("gen_dataset: poison rate must lie in (0,1]");
  std::vector<Demonstration> demos;
  demos.reserve(n_per_task * kNumTasks);
  for (int task = 0; task < static_cast<int>(kNumTasks); ++task) {
    std::size_t n_poison = static_cast<std::size_t>(
        std::lround(poison_rate * static_cast<double>(n_per_task)));
    std::vector<std::size_t> order(n_per_task);
    for (std::size_t i = 0; i < n_per_task; ++i) order[i] = i;
    Rng shuffle_rng(Rng::mix(seed, 0xB0 + static_cast<std::uint64_t>(task)));
    for (std::size_t i = n_per_task; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

    for (std::size_t j = 0; j < n_per_task; ++j) {
      std::uint64_t demo_seed =
          Rng::mix(seed, static_cast<std::uint64_t>(task) * 100003 + j);
      Rng rng(demo_seed);
      Scene scene = make_task(task, rng);
      Demonstration d = scripted_expert(scene, horizon);
      d.seed = demo_seed;
      demos.push_back(std::move(d));
    }
    for (std::size_t j = 0; j < n_poison; ++j)
      demos[demos.size() - n_per_task + order[j]].poisonable = true;
  }
  return demos;
}

namespace detail {

inline nlohmann::ordered_json scene_json(const Scene& s) {
  nlohmann::ordered_json j;
  j["gripper"] = {s.gripper.x, s.gripper.y};
  j["object"] = {s.object.x, s.object.y};
  j["goal"] = {s.goal.x, s.goal.y};
  auto ds = nlohmann::ordered_json::array();
  for (const auto& d : s.distractors)
    ds.push_back({d.present, d.pos.x, d.pos.y, d.theta});
  j["distractors"] = ds;
  j["background"] = {s.background.present, s.background.attr1,
                     s.background.attr2};
  j["patch"] = s.patch;
  return j;
}

inline Scene scene_from_json(const nlohmann::json& j, int task_id) {
  Scene s;
  s.task_id = task_id;
  s.gripper = {j.at("gripper")[0], j.at("gripper")[1]};
  s.object = {j.at("object")[0], j.at("object")[1]};
  s.goal = {j.at("goal")[0], j.at("goal")[1]};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& d = j.at("distractors")[i];
    s.distractors[i] = {d[0], {d[1], d[2]}, d[3]};
  }
  s.background = {j.at("background")[0], j.at("background")[1],
                  j.at("background")[2]};
  s.patch = j.at("patch");
  return s;
}

}  // namespace detail

inline void write_dataset(const std::string& path,
                          const std::vector<Demonstration>& demos) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_dataset: cannot open " + path);
  for (const Demonstration& d : demos) {
    nlohmann::ordered_json j;
    j["task_id"] = d.task_id;
    j["seed"] = d.seed;
    j["poisonable"] = d.poisonable;
    j["scene"] = detail::scene_json(d.initial_scene);
    auto steps = nlohmann::ordered_json::array();
    for (const ObsAction& s : d.steps) {
      nlohmann::ordered_json step;
      step["obs"] = s.obs.v;
      auto rows = nlohmann::ordered_json::array();
      for (std::size_t r = 0; r < s.chunk.rows(); ++r) {
        std::vector<double> row(s.chunk.v.begin() + r * s.chunk.cols(),
                                s.chunk.v.begin() + (r + 1) * s.chunk.cols());
        rows.push_back(row);
      }
      step["chunk"] = rows;
      steps.push_back(std::move(step));
    }
    j["steps"] = std::move(steps);
    os << j.dump() << "\n";
  }
  if (!os) throw std::runtime_error("write_dataset: write failed for " + path);
}

inline std::vector<Demonstration> load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
  std::vector<Demonstration> demos;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_dataset: " + path + " line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    Demonstration d;
    d.task_id = j.at("task_id");
    d.seed = j.at("seed");
    d.poisonable = j.at("poisonable");
    d.initial_scene = detail::scene_from_json(j.at("scene"), d.task_id);
    for (const auto& step : j.at("steps")) {
      ObsAction s;
      s.obs = Tensor::vec(step.at("obs").get<std::vector<double>>());
      const auto& rows = step.at("chunk");
      std::size_t h = rows[0].size();
      s.chunk = Tensor::zeros({rows.size(), h});
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t k = 0; k < h; ++k) s.chunk.at(r, k) = rows[r][k];
      d.steps.push_back(std::move(s));
    }
    demos.push_back(std::move(d));
  }
  return demos;
}

}  // namespace flowhijack
