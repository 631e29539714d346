#pragma once

// JSON run configuration and model checkpoints.
//
// A run configuration is one flat JSON object. Every key is optional and
// defaults as in ModelConfig / TrainConfig; unknown keys are rejected.
//
//   model:    embedding_dim, fertility_hidden, reorder_hidden, decoder_hidden,
//             fertility_mlp, reorder_mlp, decoder_mlp, max_fertility,
//             max_source_length, temperature, rho, init_scale,
//             order ("F->R" | "R->F"),
//             decoder ("independent" | "copy" | "autoregressive"),
//             embeddings_file (text embeddings for the source side)
//   training: length_weight, guidance_weight, guidance_epochs,
//             guidance_threshold, guidance, ibm1_iterations, epochs,
//             learning_rate, clip_norm, beta1, beta2, epsilon, seed,
//             stop_dev_exact_match, stop_patience

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "structrans/data.hpp"
#include "structrans/model.hpp"
#include "structrans/training.hpp"

namespace structrans::config {

struct RunConfig {
  model::ModelConfig model;  // vocabulary fields are filled from data later
  training::TrainConfig train;
  std::optional<std::string> embeddings_file;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig read_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

nlohmann::json model_config_to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const nlohmann::json& j);

struct LoadedModel {
  model::Model model;
  data::Vocabularies vocab;
};

// Vocabularies from training and dev data. The copy decoder also gets every
// source token in its target vocabulary.
data::Vocabularies vocabularies_for(const data::Dataset& train, const data::Dataset& dev, model::DecoderKind decoder);
// Fills vocabulary sizes and copy targets.
void bind_vocabularies(model::ModelConfig& c, const data::Vocabularies& v);

std::vector<training::IdExample> to_ids(const data::Dataset& d, const data::Vocabularies& v);

// Checkpoint metadata carries the model config and both vocabularies.
void save_model(const std::filesystem::path& path, const model::Model& m, const data::Vocabularies& v);
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace structrans::config
