#pragma once

// JSON (de)serialization for episodes and tasks, used to pin regression
// fixtures in the test suite and to inspect generated data.

#include "json.hpp"
#include "metastep/tasks.hpp"

namespace metastep {

inline nlohmann::ordered_json tensor_to_json(const Tensor& t) {
  nlohmann::ordered_json j;
  j["shape"] = t.shape();
  std::vector<double> data(t.data(), t.data() + t.numel());
  j["data"] = data;
  return j;
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  std::vector<int64_t> shape = j.at("shape").get<std::vector<int64_t>>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  return Tensor(std::move(shape), std::move(data));
}

inline nlohmann::ordered_json batch_to_json(const Batch& b) {
  nlohmann::ordered_json j;
  j["inputs"] = tensor_to_json(b.inputs);
  j["targets"] = tensor_to_json(b.targets);
  return j;
}

inline Batch batch_from_json(const nlohmann::json& j) {
  return Batch{tensor_from_json(j.at("inputs")), tensor_from_json(j.at("targets"))};
}

inline nlohmann::ordered_json episode_to_json(const Episode& ep) {
  nlohmann::ordered_json j;
  j["support"] = batch_to_json(ep.support);
  j["query"] = batch_to_json(ep.query);
  j["task_descriptor"] = ep.descriptor;
  if (!ep.centroids.empty()) j["task_descriptor"]["_centroids"] = tensor_to_json(ep.centroids);
  return j;
}

inline Episode episode_from_json(const nlohmann::json& j) {
  Episode ep;
  ep.support = batch_from_json(j.at("support"));
  ep.query = batch_from_json(j.at("query"));
  for (auto& [key, value] : j.at("task_descriptor").items()) {
    if (key == "_centroids")
      ep.centroids = tensor_from_json(value);
    else
      ep.descriptor[key] = value.get<double>();
  }
  return ep;
}

}  // namespace metastep
