#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "structrans/config.hpp"
#include "structrans/inference.hpp"

using namespace structrans;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "structrans-tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("run config defaults and overrides") {
  const auto c = config::parse_run_config(json::parse(R"({"order":"R->F","epochs":3,"temperature":0.5})"));
  CHECK(c.model.order == model::Order::kReorderFirst);
  CHECK(c.model.temperature == 0.5);
  CHECK(c.train.epochs == 3);
  CHECK(c.train.learning_rate == 1e-3);
  CHECK_FALSE(c.embeddings_file);

  const auto again = config::parse_run_config(config::to_json(c));
  CHECK(config::to_json(again) == config::to_json(c));
}

TEST_CASE("run config errors") {
  CHECK_THROWS_AS(config::parse_run_config(json::parse(R"({"epoch":3})")), model::ConfigError);
  CHECK_THROWS_AS(config::parse_run_config(json::parse(R"({"epochs":"three"})")), model::ConfigError);
  CHECK_THROWS_AS(config::parse_run_config(json::parse(R"({"order":"F-R"})")), model::ConfigError);
  CHECK_THROWS_AS(config::parse_run_config(json::parse(R"({"temperature":0})")), model::ConfigError);
  CHECK_THROWS_AS(config::parse_run_config(json::parse("[1]")), model::ConfigError);
}

TEST_CASE("copy decoder vocabularies") {
  const data::Dataset d{{{"a", "q"}, {"a", "b"}}};
  auto v = config::vocabularies_for(d, {}, model::DecoderKind::kCopy);
  model::ModelConfig c;
  config::bind_vocabularies(c, v);
  CHECK(c.source_vocab == 2);
  CHECK(c.target_vocab == 3);
  CHECK(c.copy_targets.empty());
  c.decoder = model::DecoderKind::kCopy;
  config::bind_vocabularies(c, v);
  CHECK(c.target_vocab == 3);
  CHECK(c.copy_targets == std::vector<std::size_t>{v.target.id("a"), v.target.id("q")});

  auto plain = config::vocabularies_for(d, {}, model::DecoderKind::kIndependent);
  CHECK_THROWS_AS(config::bind_vocabularies(c, plain), model::ConfigError);
}

TEST_CASE("model checkpoints round trip") {
  const data::Dataset d{{{"a", "b"}, {"a", "b", "b", "a"}}};
  const auto v = config::vocabularies_for(d, {}, model::DecoderKind::kIndependent);
  model::ModelConfig c;
  c.embedding_dim = 6;
  c.max_fertility = 3;
  c.order = model::Order::kReorderFirst;
  config::bind_vocabularies(c, v);
  const model::Model m(c, 12);
  const auto path = scratch("roundtrip.ckpt");
  config::save_model(path, m, v);
  const auto loaded = config::load_model(path);
  CHECK(loaded.vocab.target.tokens() == v.target.tokens());
  CHECK(config::model_config_to_json(loaded.model.config()) == config::model_config_to_json(c));
  const auto a = inference::predict(m, {0, 1}, 3);
  const auto b = inference::predict(loaded.model, {0, 1}, 3);
  CHECK(a.tokens == b.tokens);
  CHECK(a.log_score == b.log_score);
}

TEST_CASE("bad checkpoint metadata") {
  const auto path = scratch("meta.ckpt");
  write_checkpoint(path, Checkpoint{"{\"model\":{}}", {}});
  CHECK_THROWS(config::load_model(path));
}
