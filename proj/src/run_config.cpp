#include "acenet/run_config.hpp"

#include <fstream>
#include <set>

#include "acenet/error.hpp"

namespace acenet {

using json = nlohmann::json;

namespace {

const std::set<std::string> kModelKeys{"s",          "num_structures", "filters",        "se_ratio",
                                       "dropout",    "parallel_encoders", "skull_module", "context_module",
                                       "skull_filters", "input_size"};
const std::set<std::string> kTrainKeys{"stage",        "base_lr",      "epochs",     "batch_size", "momentum",
                                       "weight_decay", "power",        "lambda_sec", "class_weights", "seed"};
const std::set<std::string> kPathKeys{"data", "validation", "out", "init"};

template <typename T>
void read(const json& j, const char* key, T& into) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    into = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key \"") + key + "\" has the wrong type");
  }
}

void reject_unknown(const json& j, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown config key \"" + key + "\"");
}

std::set<std::string> merged(std::initializer_list<const std::set<std::string>*> sets) {
  std::set<std::string> out;
  for (auto* s : sets) out.insert(s->begin(), s->end());
  return out;
}

}  // namespace

json to_json(const ACEnetConfig& c) {
  return {{"s", c.s},
          {"num_structures", c.num_structures},
          {"filters", c.filters},
          {"se_ratio", c.se_ratio},
          {"dropout", c.dropout},
          {"parallel_encoders", c.parallel_encoders},
          {"skull_module", c.skull_module},
          {"context_module", c.context_module},
          {"skull_filters", c.skull_filters},
          {"input_size", c.input_size}};
}

json to_json(const TrainConfig& c) {
  return {{"stage", stage_name(c.stage)},
          {"base_lr", c.base_lr},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"power", c.power},
          {"lambda_sec", c.lambda_sec},
          {"class_weights", c.class_weights},
          {"seed", c.seed}};
}

ACEnetConfig model_config_from_json(const json& j) {
  reject_unknown(j, kModelKeys);
  ACEnetConfig c;
  read(j, "s", c.s);
  read(j, "num_structures", c.num_structures);
  read(j, "filters", c.filters);
  read(j, "se_ratio", c.se_ratio);
  read(j, "dropout", c.dropout);
  read(j, "parallel_encoders", c.parallel_encoders);
  read(j, "skull_module", c.skull_module);
  read(j, "context_module", c.context_module);
  read(j, "skull_filters", c.skull_filters);
  read(j, "input_size", c.input_size);
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j, kTrainKeys);
  TrainConfig c;
  if (j.contains("stage")) {
    std::string stage;
    read(j, "stage", stage);
    c.stage = parse_stage(stage);
  }
  read(j, "base_lr", c.base_lr);
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "momentum", c.momentum);
  read(j, "weight_decay", c.weight_decay);
  read(j, "power", c.power);
  read(j, "lambda_sec", c.lambda_sec);
  read(j, "class_weights", c.class_weights);
  read(j, "seed", c.seed);
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  json j = acenet::to_json(model);
  const json tj = acenet::to_json(train);
  for (const auto& [k, v] : tj.items()) j[k] = v;
  j["data"] = data;
  j["validation"] = validation;
  j["out"] = out;
  j["init"] = init;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j, merged({&kModelKeys, &kTrainKeys, &kPathKeys}));
  json mj = json::object(), tj = json::object();
  for (const auto& [k, v] : j.items()) {
    if (kModelKeys.count(k)) mj[k] = v;
    if (kTrainKeys.count(k)) tj[k] = v;
  }
  RunConfig r;
  r.model = model_config_from_json(mj);
  r.train = train_config_from_json(tj);
  read(j, "data", r.data);
  read(j, "validation", r.validation);
  read(j, "out", r.out);
  read(j, "init", r.init);
  return r;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
  json j = config.to_json();
  if (!j.contains(key)) throw ConfigError("unknown config key \"" + key + "\"");
  json parsed;
  if (j[key].is_string()) {
    parsed = value;
  } else {
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      throw ConfigError("value \"" + value + "\" for \"" + key + "\" is not valid");
    }
  }
  j[key] = parsed;
  config = RunConfig::from_json(j);
}

}  // namespace acenet
