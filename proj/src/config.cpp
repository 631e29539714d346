#include "structrans/config.hpp"

#include <fstream>
#include <set>

namespace structrans::config {

using nlohmann::json;

namespace {

template <class T>
void read_field(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  seen.insert(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw model::ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void read_model_fields(const json& j, model::ModelConfig& c, std::set<std::string>& seen) {
  read_field(j, "embedding_dim", c.embedding_dim, seen);
  read_field(j, "fertility_hidden", c.fertility_hidden, seen);
  read_field(j, "reorder_hidden", c.reorder_hidden, seen);
  read_field(j, "decoder_hidden", c.decoder_hidden, seen);
  read_field(j, "fertility_mlp", c.fertility_mlp, seen);
  read_field(j, "reorder_mlp", c.reorder_mlp, seen);
  read_field(j, "decoder_mlp", c.decoder_mlp, seen);
  read_field(j, "max_fertility", c.max_fertility, seen);
  read_field(j, "max_source_length", c.max_source_length, seen);
  read_field(j, "temperature", c.temperature, seen);
  read_field(j, "rho", c.rho, seen);
  read_field(j, "init_scale", c.init_scale, seen);
  std::string order = model::to_string(c.order), decoder = model::to_string(c.decoder);
  read_field(j, "order", order, seen);
  read_field(j, "decoder", decoder, seen);
  c.order = model::parse_order(order);
  c.decoder = model::parse_decoder(decoder);
}

void check_unknown(const json& j, const std::set<std::string>& seen) {
  for (const auto& [key, value] : j.items())
    if (!seen.count(key)) throw model::ConfigError("unknown config key '" + key + "'");
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw model::ConfigError("config must be a JSON object");
  RunConfig c;
  std::set<std::string> seen;
  read_model_fields(j, c.model, seen);
  auto& t = c.train;
  read_field(j, "length_weight", t.length_weight, seen);
  read_field(j, "guidance_weight", t.guidance_weight, seen);
  read_field(j, "guidance_epochs", t.guidance_epochs, seen);
  read_field(j, "guidance_threshold", t.guidance_threshold, seen);
  read_field(j, "guidance", t.guidance, seen);
  read_field(j, "ibm1_iterations", t.ibm1_iterations, seen);
  read_field(j, "epochs", t.epochs, seen);
  read_field(j, "learning_rate", t.learning_rate, seen);
  read_field(j, "clip_norm", t.clip_norm, seen);
  read_field(j, "beta1", t.beta1, seen);
  read_field(j, "beta2", t.beta2, seen);
  read_field(j, "epsilon", t.epsilon, seen);
  read_field(j, "seed", t.seed, seen);
  read_field(j, "stop_dev_exact_match", t.stop_dev_exact_match, seen);
  read_field(j, "stop_patience", t.stop_patience, seen);
  seen.insert("embeddings_file");
  if (j.contains("embeddings_file") && !j.at("embeddings_file").is_null()) {
    if (!j.at("embeddings_file").is_string()) throw model::ConfigError("config key 'embeddings_file' must be a string");
    c.embeddings_file = j.at("embeddings_file").get<std::string>();
  }
  check_unknown(j, seen);
  t.validate();
  if (!(c.model.temperature > 0.0)) throw model::ConfigError("temperature must be positive");
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw model::ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

json model_config_to_json(const model::ModelConfig& c) {
  return json{{"source_vocab", c.source_vocab},
              {"target_vocab", c.target_vocab},
              {"embedding_dim", c.embedding_dim},
              {"fertility_hidden", c.fertility_hidden},
              {"reorder_hidden", c.reorder_hidden},
              {"decoder_hidden", c.decoder_hidden},
              {"fertility_mlp", c.fertility_mlp},
              {"reorder_mlp", c.reorder_mlp},
              {"decoder_mlp", c.decoder_mlp},
              {"max_fertility", c.max_fertility},
              {"max_source_length", c.max_source_length},
              {"temperature", c.temperature},
              {"rho", c.rho},
              {"init_scale", c.init_scale},
              {"order", model::to_string(c.order)},
              {"decoder", model::to_string(c.decoder)},
              {"copy_targets", c.copy_targets}};
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  std::set<std::string> seen;
  read_model_fields(j, c, seen);
  read_field(j, "source_vocab", c.source_vocab, seen);
  read_field(j, "target_vocab", c.target_vocab, seen);
  read_field(j, "copy_targets", c.copy_targets, seen);
  check_unknown(j, seen);
  return c;
}

json to_json(const RunConfig& c) {
  json j = model_config_to_json(c.model);
  j.erase("source_vocab");
  j.erase("target_vocab");
  j.erase("copy_targets");
  const auto& t = c.train;
  j["length_weight"] = t.length_weight;
  j["guidance_weight"] = t.guidance_weight;
  j["guidance_epochs"] = t.guidance_epochs;
  j["guidance_threshold"] = t.guidance_threshold;
  j["guidance"] = t.guidance;
  j["ibm1_iterations"] = t.ibm1_iterations;
  j["epochs"] = t.epochs;
  j["learning_rate"] = t.learning_rate;
  j["clip_norm"] = t.clip_norm;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["epsilon"] = t.epsilon;
  j["seed"] = t.seed;
  j["stop_dev_exact_match"] = t.stop_dev_exact_match;
  j["stop_patience"] = t.stop_patience;
  j["embeddings_file"] = c.embeddings_file ? json(*c.embeddings_file) : json(nullptr);
  return j;
}

data::Vocabularies vocabularies_for(const data::Dataset& train, const data::Dataset& dev, model::DecoderKind decoder) {
  data::Dataset all = train;
  all.insert(all.end(), dev.begin(), dev.end());
  auto v = data::build_vocabularies(all);
  if (decoder == model::DecoderKind::kCopy)
    for (const auto& t : v.source.tokens()) v.target.add(t);
  return v;
}

void bind_vocabularies(model::ModelConfig& c, const data::Vocabularies& v) {
  c.source_vocab = v.source.size();
  c.target_vocab = v.target.size();
  c.copy_targets.clear();
  if (c.decoder != model::DecoderKind::kCopy) return;
  for (const auto& t : v.source.tokens()) {
    if (!v.target.contains(t))
      throw model::ConfigError("copy decoder: source token '" + t + "' has no slot in the target vocabulary");
    c.copy_targets.push_back(v.target.id(t));
  }
}

std::vector<training::IdExample> to_ids(const data::Dataset& d, const data::Vocabularies& v) {
  std::vector<training::IdExample> out;
  out.reserve(d.size());
  for (const auto& e : d) out.push_back({v.source.encode(e.source), v.target.encode(e.target)});
  return out;
}

void save_model(const std::filesystem::path& path, const model::Model& m, const data::Vocabularies& v) {
  json meta{{"model", model_config_to_json(m.config())},
            {"source_vocab", v.source.tokens()},
            {"target_vocab", v.target.tokens()}};
  write_checkpoint(path, Checkpoint{meta.dump(), m.parameters().snapshot()});
}

LoadedModel load_model(const std::filesystem::path& path) {
  Checkpoint ck = read_checkpoint(path);
  json meta;
  try {
    meta = json::parse(ck.metadata);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": bad checkpoint metadata: " + e.what());
  }
  if (!meta.contains("model") || !meta.contains("source_vocab") || !meta.contains("target_vocab"))
    throw std::runtime_error(path.string() + ": checkpoint metadata lacks model config or vocabularies");
  data::Vocabularies v{data::Vocabulary(meta["source_vocab"].get<std::vector<std::string>>()),
                       data::Vocabulary(meta["target_vocab"].get<std::vector<std::string>>())};
  return LoadedModel{model::Model(model_config_from_json(meta["model"]), ck.tensors), std::move(v)};
}

}  // namespace structrans::config
