#include "structrans/model.hpp"

#include <fstream>
#include <sstream>

#include "structrans/fertility.hpp"
#include "structrans/reordering.hpp"

namespace structrans::model {

namespace ad = structrans::ad;

std::string to_string(Order o) { return o == Order::kFertilityFirst ? "F->R" : "R->F"; }

std::string to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::kIndependent: return "independent";
    case DecoderKind::kCopy: return "copy";
    case DecoderKind::kAutoregressive: return "autoregressive";
  }
  return "?";
}

Order parse_order(const std::string& s) {
  if (s == "F->R") return Order::kFertilityFirst;
  if (s == "R->F") return Order::kReorderFirst;
  throw ConfigError("unknown composition order '" + s + "' (expected F->R or R->F)");
}

DecoderKind parse_decoder(const std::string& s) {
  if (s == "independent") return DecoderKind::kIndependent;
  if (s == "copy") return DecoderKind::kCopy;
  if (s == "autoregressive") return DecoderKind::kAutoregressive;
  throw ConfigError("unknown decoder '" + s + "' (expected independent, copy or autoregressive)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be at least 1");
  };
  positive(source_vocab, "source_vocab");
  positive(target_vocab, "target_vocab");
  positive(embedding_dim, "embedding_dim");
  positive(fertility_hidden, "fertility_hidden");
  positive(reorder_hidden, "reorder_hidden");
  positive(decoder_hidden, "decoder_hidden");
  positive(fertility_mlp, "fertility_mlp");
  positive(reorder_mlp, "reorder_mlp");
  positive(decoder_mlp, "decoder_mlp");
  positive(max_fertility, "max_fertility");
  positive(max_source_length, "max_source_length");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(init_scale >= 0.0)) throw ConfigError("init_scale must be nonnegative");
  if (decoder == DecoderKind::kCopy) {
    if (copy_targets.size() != source_vocab)
      throw ConfigError("copy decoder needs a target id for each of the " + std::to_string(source_vocab) +
                        " source tokens");
    for (auto t : copy_targets)
      if (t >= target_vocab) throw ConfigError("copy target id " + std::to_string(t) + " out of range");
  }
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  build(seed);
}

Model::Model(ModelConfig config, const std::vector<std::pair<std::string, Array>>& values)
    : config_(std::move(config)) {
  config_.validate();
  build(0);
  if (values.size() != store_.size())
    throw ConfigError("checkpoint holds " + std::to_string(values.size()) + " tensors, model expects " +
                      std::to_string(store_.size()));
  store_.assign(values);
}

void Model::build(std::uint64_t seed) {
  Rng rng(seed);
  const auto& c = config_;
  const double s = c.init_scale;
  const std::size_t E = c.embedding_dim, d = c.max_fertility, V = c.target_vocab;
  auto lstm_params = [&](const std::string& prefix, std::size_t in, std::size_t h) {
    for (const char* dir : {".fwd", ".bwd"}) {
      store_.add_uniform(prefix + dir + ".wx", {in, 4 * h}, s, rng);
      store_.add_uniform(prefix + dir + ".wh", {h, 4 * h}, s, rng);
      store_.add_zeros(prefix + dir + ".b", {4 * h});
    }
  };
  auto mlp_params = [&](const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out) {
    store_.add_uniform(prefix + ".w1", {in, hidden}, s, rng);
    store_.add_zeros(prefix + ".b1", {hidden});
    store_.add_uniform(prefix + ".w2", {hidden, out}, s, rng);
    store_.add_zeros(prefix + ".b2", {out});
  };

  store_.add_uniform("embed", {c.source_vocab, E}, s, rng);

  lstm_params("fert.lstm", E, c.fertility_hidden);
  mlp_params("fert.mlp", 2 * c.fertility_hidden, c.fertility_mlp, d + 1);
  store_.add_uniform("copy_embed", {d, E}, s, rng);

  lstm_params("reorder.lstm", E, c.reorder_hidden);
  if (2 * c.reorder_hidden != E) store_.add_uniform("reorder.skip", {E, 2 * c.reorder_hidden}, s, rng);
  mlp_params("reorder.mlp", 2 * c.reorder_hidden, c.reorder_mlp, 2);

  const std::size_t D = 2 * c.decoder_hidden;
  lstm_params("dec.lstm", E, c.decoder_hidden);
  if (D != E) store_.add_uniform("dec.skip", {E, D}, s, rng);
  store_.add_uniform("dec.w1", {D, c.decoder_mlp}, s, rng);
  store_.add_zeros("dec.b1", {c.decoder_mlp});
  store_.add_uniform("dec.out.w", {c.decoder_mlp, d * V}, s, rng);
  store_.add_zeros("dec.out.b", {d * V});
  if (c.decoder == DecoderKind::kCopy) {
    store_.add_uniform("dec.gate.w", {c.decoder_mlp, 1}, s, rng);
    store_.add_zeros("dec.gate.b", {d});
  }
  if (c.decoder == DecoderKind::kAutoregressive) {
    // Row V is the start-of-sequence symbol.
    store_.add_uniform("dec.prefix.embed", {V + 1, D}, s, rng);
    store_.add_uniform("dec.prefix.wx", {D, 4 * D}, s, rng);
    store_.add_uniform("dec.prefix.wh", {D, 4 * D}, s, rng);
    store_.add_zeros("dec.prefix.b", {4 * D});
  }
}

Var Model::bilstm(const std::string& prefix, const Var& x) const {
  Var f = ad::lstm(x, p(prefix + ".fwd.wx"), p(prefix + ".fwd.wh"), p(prefix + ".fwd.b"), false);
  Var b = ad::lstm(x, p(prefix + ".bwd.wx"), p(prefix + ".bwd.wh"), p(prefix + ".bwd.b"), true);
  return ad::concat({f, b}, 1);
}

Var Model::mlp(const std::string& prefix, const Var& x) const {
  Var h = ad::tanh(ad::add_rowwise(ad::matmul(x, p(prefix + ".w1")), p(prefix + ".b1")));
  return ad::add_rowwise(ad::matmul(h, p(prefix + ".w2")), p(prefix + ".b2"));
}

EncodedInput Model::encode(const Ids& source) const {
  const std::size_t n = source.size();
  if (n == 0 || n > config_.max_source_length)
    throw ConfigError("source length " + std::to_string(n) + " outside 1.." + std::to_string(config_.max_source_length));
  for (auto id : source)
    if (id >= config_.source_vocab) throw std::out_of_range("source token id " + std::to_string(id) + " out of range");
  EncodedInput enc;
  enc.source = source;
  enc.embeddings = ad::embedding(p("embed"), source);
  Var skip = store_.contains("dec.skip") ? ad::matmul(enc.embeddings, p("dec.skip")) : enc.embeddings;
  enc.decoder_states = ad::add(ad::scale(bilstm("dec.lstm", enc.embeddings), config_.rho), skip);
  return enc;
}

Var Model::fertility_head(const Var& states) const { return ad::softmax(mlp("fert.mlp", states), config_.temperature); }

Var Model::fertility_probs(const EncodedInput& enc) const {
  if (config_.order == Order::kFertilityFirst) return fertility_head(bilstm("fert.lstm", enc.embeddings));
  const std::size_t n = enc.source.size();
  Var r = reordering::expected_permutation(reordering_scores(enc.embeddings), n);
  Var z = ad::matmul(ad::transpose(r), enc.embeddings);
  return fertility_head(bilstm("fert.lstm", z));
}

Var Model::compose_intermediate(const Var& embeddings, const Var& marginal) const {
  // h = (sum_u F)^T x + (sum_i F) W_copy
  Var per_input = ad::transpose(ad::sum(marginal, 2));  // l x n
  Var per_copy = ad::sum(marginal, 0);                  // l x d
  return ad::add(ad::matmul(per_input, embeddings), ad::matmul(per_copy, p("copy_embed")));
}

Var Model::reordering_scores(const Var& sequence) const {
  const std::size_t l = sequence->value.dim(0);
  if (l < 2) return ad::constant(Array(Shape{0, 2}));
  const std::size_t H = config_.reorder_hidden;
  Var skip = store_.contains("reorder.skip") ? ad::matmul(sequence, p("reorder.skip")) : sequence;
  Var states = ad::add(bilstm("reorder.lstm", sequence), skip);  // l x 2H
  // Fence posts 0..l: forward part is the state after the preceding token,
  // backward part the state before the following one.
  Var zero = ad::constant(Array(Shape{1, H}));
  Var fwd = ad::concat({zero, ad::slice(states, 1, 0, H)}, 0);
  Var bwd = ad::concat({ad::slice(states, 1, H, 2 * H), zero}, 0);
  reordering::SpanIndex idx(l);
  std::vector<std::size_t> starts(idx.count()), ends(idx.count());
  for (std::size_t s = 0; s < idx.count(); ++s) {
    starts[s] = idx.start(s);
    ends[s] = idx.end(s);
  }
  Var features = ad::concat({ad::sub(ad::gather_rows(fwd, ends), ad::gather_rows(fwd, starts)),
                             ad::sub(ad::gather_rows(bwd, starts), ad::gather_rows(bwd, ends))},
                            1);
  return mlp("reorder.mlp", features);
}

Var Model::alignment_matrix(const Var& marginal, const Var& permutation, std::size_t n, std::size_t l) const {
  const std::size_t d = config_.max_fertility;
  if (config_.order == Order::kFertilityFirst) {
    Var a = ad::reshape(ad::transpose(marginal), {n * d, l});
    return ad::matmul(a, permutation);
  }
  Var g = ad::matmul(permutation, ad::reshape(marginal, {n, l * d}));
  return ad::reshape(ad::transpose(ad::reshape(g, {n, l, d})), {n * d, l});
}

Var Model::token_probs(const EncodedInput& enc) const {
  const std::size_t n = enc.source.size(), d = config_.max_fertility, V = config_.target_vocab;
  Var hidden = ad::tanh(ad::add_rowwise(ad::matmul(enc.decoder_states, p("dec.w1")), p("dec.b1")));
  Var logits = ad::add_rowwise(ad::matmul(hidden, p("dec.out.w")), p("dec.out.b"));
  Var probs = ad::softmax(ad::reshape(logits, {n * d, V}));
  if (config_.decoder != DecoderKind::kCopy) return probs;

  Var gate_logit = ad::matmul(ad::matmul(hidden, p("dec.gate.w")), ad::constant(Array(Shape{1, d}, 1.0)));
  Var gate = ad::sigmoid(ad::reshape(ad::add_rowwise(gate_logit, p("dec.gate.b")), {n * d}));
  Array onehot(Shape{n * d, V});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t u = 0; u < d; ++u) onehot.at(j * d + u, config_.copy_targets[enc.source[j]]) = 1.0;
  Var keep = ad::sub(ad::constant(Array(Shape{n * d}, 1.0)), gate);
  return ad::add(ad::scale_rows(probs, keep), ad::scale_rows(ad::constant(std::move(onehot)), gate));
}

Var Model::autoregressive_output(const EncodedInput& enc, const Var& alignment, const Ids& prefix,
                                 std::size_t l) const {
  const std::size_t n = enc.source.size(), d = config_.max_fertility, V = config_.target_vocab;
  const std::size_t m = std::min(prefix.size() + 1, l);
  Ids inputs{V};
  inputs.insert(inputs.end(), prefix.begin(), prefix.begin() + static_cast<std::ptrdiff_t>(m - 1));
  for (auto id : inputs)
    if (id > V) throw std::out_of_range("target token id " + std::to_string(id) + " out of range");
  Var states = ad::lstm(ad::embedding(p("dec.prefix.embed"), inputs), p("dec.prefix.wx"), p("dec.prefix.wh"),
                        p("dec.prefix.b"), false);                               // m x D
  Var joint = ad::add_outer_rows(enc.decoder_states, states);                   // (m*n) x D
  Var hidden = ad::tanh(ad::add_rowwise(ad::matmul(joint, p("dec.w1")), p("dec.b1")));
  Var logits = ad::add_rowwise(ad::matmul(hidden, p("dec.out.w")), p("dec.out.b"));
  Var probs = ad::softmax(ad::reshape(logits, {m, n * d, V}));
  Var weights = ad::reshape(ad::transpose(ad::slice(alignment, 1, 0, m)), {m, 1, n * d});
  return ad::reshape(ad::bmm(weights, probs), {m, V});
}

Var Model::output_distributions(const EncodedInput& enc, const Var& alignment, const Ids& prefix) const {
  const std::size_t l = alignment->value.dim(1);
  if (config_.decoder == DecoderKind::kAutoregressive) return autoregressive_output(enc, alignment, prefix, l);
  return ad::matmul(ad::transpose(alignment), token_probs(enc));
}

Forward Model::forward(const EncodedInput& enc, std::size_t length, const Ids& prefix) const {
  const std::size_t n = enc.source.size();
  Forward f;
  f.length = length;
  if (config_.order == Order::kFertilityFirst) {
    f.fertility_probs = fertility_head(bilstm("fert.lstm", enc.embeddings));
    f.marginal_fertility = fertility::marginal_fertility(f.fertility_probs, length);
    f.intermediate = compose_intermediate(enc.embeddings, f.marginal_fertility);
    f.span_scores = reordering_scores(f.intermediate);
    f.permutation = reordering::expected_permutation(f.span_scores, length);
  } else {
    f.span_scores = reordering_scores(enc.embeddings);
    f.permutation = reordering::expected_permutation(f.span_scores, n);
    Var z = ad::matmul(ad::transpose(f.permutation), enc.embeddings);
    f.fertility_probs = fertility_head(bilstm("fert.lstm", z));
    f.marginal_fertility = fertility::marginal_fertility(f.fertility_probs, length);
  }
  f.alignment = alignment_matrix(f.marginal_fertility, f.permutation, n, length);
  f.output = output_distributions(enc, f.alignment, prefix);
  return f;
}

Var Model::length_distribution(const EncodedInput& enc) const {
  return fertility::length_distribution(fertility_probs(enc));
}

std::size_t load_text_embeddings(Model& model, const std::filesystem::path& path,
                                 const std::vector<std::string>& source_tokens) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const ad::Var& table = model.parameters().get("embed");
  const std::size_t E = model.config().embedding_dim;
  std::unordered_map<std::string, std::size_t> ids;
  for (std::size_t k = 0; k < source_tokens.size(); ++k) ids.emplace(source_tokens[k], k);
  std::string line;
  std::size_t number = 0, replaced = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> values;
    double v;
    while (fields >> v) values.push_back(v);
    if (!fields.eof())
      throw std::runtime_error(path.string() + ":" + std::to_string(number) + ": malformed number");
    if (values.size() != E)
      throw std::runtime_error(path.string() + ":" + std::to_string(number) + ": expected " + std::to_string(E) +
                               " values, found " + std::to_string(values.size()));
    auto it = ids.find(token);
    if (it == ids.end() || it->second >= table->value.dim(0)) continue;
    for (std::size_t c = 0; c < E; ++c) table->value.at(it->second, c) = values[c];
    ++replaced;
  }
  return replaced;
}

}  // namespace structrans::model
