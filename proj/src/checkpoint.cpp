#include "times2d/checkpoint.hpp"

#include <fstream>

namespace times2d {

namespace {
constexpr const char* kFormat = "times2d-checkpoint";
constexpr int kVersion = 1;
}  // namespace

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"task", to_string(c.task)},
          {"seq_len", c.seq_len},
          {"pred_len", c.pred_len},
          {"channels", c.channels},
          {"n_classes", c.n_classes},
          {"k", c.k},
          {"layers", c.layers},
          {"d_min", c.d_min},
          {"d_max", c.d_max},
          {"branches", c.branches},
          {"aggregation", to_string(c.aggregation)},
          {"layer_norm", c.layer_norm},
          {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.task = task_from_string(j.at("task").get<std::string>());
    c.seq_len = j.at("seq_len").get<std::size_t>();
    c.pred_len = j.at("pred_len").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.k = j.at("k").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.d_min = j.at("d_min").get<std::size_t>();
    c.d_max = j.at("d_max").get<std::size_t>();
    c.branches = j.at("branches").get<std::size_t>();
    c.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
    c.layer_norm = j.at("layer_norm").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed model config: ") + e.what());
  }
}

std::uint64_t config_hash(const ModelConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_to_json(config).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::json checkpoint_to_json(const TimesNet& model) {
  nlohmann::json params = nlohmann::json::array();
  for (const Parameter* p : model.parameters()) {
    auto v = p->value.values();
    params.push_back({{"name", p->name},
                      {"shape", p->value.shape().dims()},
                      {"values", std::vector<double>(v.begin(), v.end())}});
  }
  return {{"format", kFormat},
          {"version", kVersion},
          {"model", config_to_json(model.config())},
          {"config_hash", config_hash(model.config())},
          {"parameters", std::move(params)}};
}

TimesNet checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", std::string()) != kFormat) {
    throw CheckpointError("checkpoint: not a times2d checkpoint");
  }
  if (j.value("version", 0) != kVersion) {
    throw CheckpointError("checkpoint: unsupported version " + j.value("version", nlohmann::json()).dump());
  }
  const ModelConfig config = config_from_json(j.at("model"));
  if (j.at("config_hash").get<std::uint64_t>() != config_hash(config)) {
    throw CheckpointError("checkpoint: config hash mismatch (file edited or produced by an incompatible build)");
  }
  TimesNet model(config);
  const auto& stored = j.at("parameters");
  std::vector<Parameter*> params = model.parameters();
  if (stored.size() != params.size()) {
    throw CheckpointError("checkpoint: expected " + std::to_string(params.size()) + " parameters, found " +
                          std::to_string(stored.size()));
  }
  try {
    for (const auto& entry : stored) {
      const auto name = entry.at("name").get<std::string>();
      Parameter* target = nullptr;
      for (Parameter* p : params)
        if (p->name == name) target = p;
      if (!target) throw CheckpointError("checkpoint: unknown parameter " + name);
      const auto dims = entry.at("shape").get<std::vector<std::size_t>>();
      if (dims != target->value.shape().dims()) {
        throw CheckpointError("checkpoint: parameter " + name + " has shape " + Shape(dims).str() + ", model expects " +
                              target->value.shape().str());
      }
      auto values = entry.at("values").get<std::vector<double>>();
      target->value = Tensor(target->value.shape(), std::move(values));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed parameter entry: ") + e.what());
  }
  return model;
}

void save_checkpoint(const std::string& path, const TimesNet& model) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  out << checkpoint_to_json(model).dump() << '\n';
  if (!out) throw CheckpointError("failed writing checkpoint " + path);
}

TimesNet load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot read checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace times2d
