// Command-line entry point: data generation, training, prediction,
// evaluation and the verification suites.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "structrans/checks.hpp"
#include "structrans/config.hpp"
#include "structrans/data.hpp"
#include "structrans/inference.hpp"
#include "structrans/training.hpp"

namespace fs = std::filesystem;
using namespace structrans;

namespace {

int generate_data(const std::string& setup, std::uint64_t seed, const fs::path& out) {
  data::Splits s;
  if (setup == "A")
    s = data::generate_mirror_a(seed);
  else if (setup == "B")
    s = data::generate_mirror_b(seed);
  else
    throw std::invalid_argument("unknown setup '" + setup + "' (expected A or B)");
  fs::create_directories(out);
  data::write_jsonl(out / "train.jsonl", s.train);
  data::write_jsonl(out / "dev.jsonl", s.dev);
  data::write_jsonl(out / "test.jsonl", s.test);
  std::cout << nlohmann::json{{"train", s.train.size()}, {"dev", s.dev.size()}, {"test", s.test.size()}}.dump() << "\n";
  return 0;
}

int train(const fs::path& config_path, const fs::path& data_dir, const fs::path& out, fs::path metrics_path) {
  auto cfg = config::read_run_config(config_path);
  const auto train_set = data::read_jsonl(data_dir / "train.jsonl");
  const auto dev_set = data::read_jsonl(data_dir / "dev.jsonl");
  const auto vocab = config::vocabularies_for(train_set, dev_set, cfg.model.decoder);
  config::bind_vocabularies(cfg.model, vocab);
  model::Model m(cfg.model, cfg.train.seed);
  if (cfg.embeddings_file) {
    fs::path emb(*cfg.embeddings_file);
    if (emb.is_relative()) emb = config_path.parent_path() / emb;
    model::load_text_embeddings(m, emb, vocab.source.tokens());
  }
  if (metrics_path.empty()) metrics_path = out.string() + ".metrics.jsonl";
  std::ofstream metrics(metrics_path);
  if (!metrics) throw std::runtime_error("cannot open " + metrics_path.string() + " for writing");
  const auto result = training::train(m, config::to_ids(train_set, vocab), config::to_ids(dev_set, vocab), cfg.train,
                                      &metrics);
  config::save_model(out, m, vocab);
  std::cout << nlohmann::json{{"best_epoch", result.best_epoch},
                              {"best_dev_exact_match", result.best_dev_exact_match},
                              {"epochs_run", result.history.size()},
                              {"checkpoint", out.string()},
                              {"metrics", metrics_path.string()}}
                   .dump()
            << "\n";
  return 0;
}

int predict(const fs::path& ckpt, const fs::path& input, const fs::path& grammar_path, std::size_t top_k,
            const fs::path& out) {
  auto loaded = config::load_model(ckpt);
  std::optional<inference::CompiledGrammar> grammar;
  if (!grammar_path.empty()) grammar = inference::compile(inference::parse_grammar_file(grammar_path), loaded.vocab.target);
  const auto sources = data::read_sequences_jsonl(input, {"source"});
  std::vector<data::Tokens> predictions;
  std::vector<inference::DecodeResult> results;
  for (const auto& src : sources) {
    auto r = inference::decode(loaded.model, loaded.vocab.source.encode(src), grammar ? &*grammar : nullptr, top_k);
    predictions.push_back(loaded.vocab.target.decode(r.tokens));
    results.push_back(std::move(r));
  }
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot open " + out.string() + " for writing");
  inference::write_predictions(os, sources, predictions, results);
  return 0;
}

int evaluate(const fs::path& pred, const fs::path& gold) {
  const auto p = data::read_sequences_jsonl(pred, {"prediction", "target"});
  const auto g = data::read_sequences_jsonl(gold, {"target"});
  std::cout << nlohmann::json{{"exact_match", data::exact_match(p, g)}}.dump() << "\n";
  return 0;
}

int run_checks(const std::vector<checks::CheckReport>& reports) {
  bool ok = true;
  for (const auto& r : reports) {
    std::cout << checks::format_report(r) << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured fertility/reordering sequence transducer"};
  app.require_subcommand(1);

  std::string setup;
  std::uint64_t seed = 1;
  std::string out_dir;
  auto* gen = app.add_subcommand("generate-data", "Write mirror-task train/dev/test JSONL files");
  gen->add_option("--setup", setup, "A or B")->required();
  gen->add_option("--seed", seed, "random seed");
  gen->add_option("--out", out_dir, "output directory")->required();

  std::string config_path, data_dir, ckpt_out, metrics_out;
  auto* tr = app.add_subcommand("train", "Train a model from a JSON config");
  tr->add_option("--config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", data_dir, "directory with train.jsonl and dev.jsonl")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", ckpt_out, "checkpoint path")->required();
  tr->add_option("--metrics", metrics_out, "metrics log (default: <out>.metrics.jsonl)");

  std::string ckpt_in, input, grammar, pred_out;
  std::size_t top_k = 0;
  auto* pr = app.add_subcommand("predict", "Decode a JSONL file of sources");
  pr->add_option("--ckpt", ckpt_in, "checkpoint")->required()->check(CLI::ExistingFile);
  pr->add_option("--input", input, "JSONL with a \"source\" list per line")->required()->check(CLI::ExistingFile);
  pr->add_option("--grammar", grammar, "CNF grammar file")->check(CLI::ExistingFile);
  pr->add_option("--top-k", top_k, "number of candidate lengths (default 1, or 5 with a grammar)")
      ->check(CLI::PositiveNumber);
  pr->add_option("--out", pred_out, "output JSONL")->required();

  std::string pred_in, gold_in;
  auto* ev = app.add_subcommand("evaluate", "Exact-match accuracy of predictions against references");
  ev->add_option("--pred", pred_in, "predictions JSONL")->required()->check(CLI::ExistingFile);
  ev->add_option("--gold", gold_in, "references JSONL")->required()->check(CLI::ExistingFile);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  auto* oc = app.add_subcommand("oracle-check", "Dynamic programmes against brute-force enumeration");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return generate_data(setup, seed, out_dir);
    if (*tr) return train(config_path, data_dir, ckpt_out, metrics_out);
    if (*pr) return predict(ckpt_in, input, grammar, top_k, pred_out);
    if (*ev) return evaluate(pred_in, gold_in);
    if (*gc) return run_checks(checks::all_gradient_checks());
    if (*oc) return run_checks(checks::all_oracle_checks());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
