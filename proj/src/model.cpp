#include "cisum/model.hpp"

#include <cmath>

#include "cisum/backends.hpp"
#include "cisum/errors.hpp"

namespace cisum::model {

// ---- ParameterSet ----------------------------------------------------------

Parameter& ParameterSet::add(std::string name, Matrix init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
  params_.push_back(Parameter{name, std::move(init), Matrix()});
  Parameter& p = params_.back();
  index_.emplace(std::move(name), &p);
  return p;
}

Parameter* ParameterSet::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : it->second;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : it->second;
}

Parameter& ParameterSet::at(std::string_view name) {
  Parameter* p = find(name);
  if (!p) throw ConfigError("no parameter named " + std::string(name));
  return *p;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

// ---- parameter construction ------------------------------------------------

ParameterFactory::ParameterFactory(ParameterSet& set, int d_model, int d_attention, int n_heads, int d_ff,
                                   std::uint64_t seed)
    : set_(set), d_model_(d_model), d_attention_(d_attention), n_heads_(n_heads), d_ff_(d_ff), rng_(seed) {}

Parameter* ParameterFactory::weight(const std::string& name, int in, int out) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix m(in, out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng_.uniform(-a, a);
  return &set_.add(name, std::move(m));
}

Parameter* ParameterFactory::zeros(const std::string& name, int rows, int cols) {
  return &set_.add(name, Matrix::Zero(rows, cols));
}

Linear ParameterFactory::linear(const std::string& name, int in, int out, bool bias) {
  Linear l;
  l.weight = weight(name + ".weight", in, out);
  if (bias) l.bias = zeros(name + ".bias", 1, out);
  return l;
}

FeedForward ParameterFactory::ffn(const std::string& name, int in, int out) {
  return {linear(name + ".in", in, d_ff_), linear(name + ".out", d_ff_, out)};
}

LayerNormParams ParameterFactory::norm(const std::string& name) {
  return {&set_.add(name + ".gain", Matrix::Ones(1, d_model_)), zeros(name + ".shift", 1, d_model_)};
}

AttentionParams ParameterFactory::attention(const std::string& name) {
  AttentionParams a;
  a.query = weight(name + ".query", d_model_, d_attention_);
  a.key = weight(name + ".key", d_model_, d_attention_);
  a.value = weight(name + ".value", d_model_, d_attention_);
  a.output = linear(name + ".output", d_attention_, d_model_);
  a.n_heads = n_heads_;
  return a;
}

TrmLayerParams ParameterFactory::trm(const std::string& name) {
  TrmLayerParams t;
  t.attention = attention(name + ".attn");
  t.attention_norm = norm(name + ".attn_norm");
  t.ffn = ffn(name + ".ffn", d_model_, d_model_);
  t.ffn_norm = norm(name + ".ffn_norm");
  return t;
}

DecoderLayerParams ParameterFactory::decoder(const std::string& name) {
  DecoderLayerParams d;
  d.self_attention = attention(name + ".self_attn");
  d.self_norm = norm(name + ".self_norm");
  d.cross_attention = attention(name + ".cross_attn");
  d.cross_norm = norm(name + ".cross_norm");
  d.ffn = ffn(name + ".ffn", d_model_, d_model_);
  d.ffn_norm = norm(name + ".ffn_norm");
  return d;
}

NoisyFilterLayerParams ParameterFactory::filter(const std::string& name) {
  NoisyFilterLayerParams f;
  f.text_cross = trm(name + ".text_cross");
  f.visual_cross = trm(name + ".visual_cross");
  f.text_branch_visual_memory = ffn(name + ".text_branch.visual_memory", 2 * d_model_, d_model_);
  f.text_branch_text_memory = ffn(name + ".text_branch.text_memory", 2 * d_model_, d_model_);
  f.text_norm = norm(name + ".text_branch.norm");
  f.visual_branch_text_memory = ffn(name + ".visual_branch.text_memory", 2 * d_model_, d_model_);
  f.visual_branch_visual_memory = ffn(name + ".visual_branch.visual_memory", 2 * d_model_, d_model_);
  f.visual_norm = norm(name + ".visual_branch.norm");
  return f;
}

OutputHeadParams ParameterFactory::head(const std::string& name, int vocab_size) {
  OutputHeadParams h;
  h.projection = weight(name + ".projection", d_model_, d_model_);
  h.ffn = ffn(name + ".ffn", d_model_, vocab_size);
  return h;
}

ModelParams build_parameters(const ModelConfig& config, ParameterSet& set,
                             const EmbeddingBackend* init) {
  config.validate();
  std::optional<ToyBackend> fallback;
  if (!init) {
    fallback.emplace(ToyBackendOptions{config.vocab_size, config.d_h, config.d_v,
                                       config.max_positions(), 32, config.seed});
    init = &*fallback;
  }
  const BackendDims dims = init->dims();
  Matrix tokens = init->token_table();
  Matrix positions = init->position_table();
  if (dims.text_dim != config.d_h || dims.image_dim != config.d_v) {
    throw ConfigError("backend '" + init->name() + "' dimensions do not match d_h/d_v");
  }
  if (tokens.rows() < config.vocab_size || positions.rows() < config.max_positions()) {
    throw ConfigError("backend '" + init->name() + "' tables are smaller than vocab/max positions");
  }

  ModelParams m;
  ParameterFactory b(set, config.d_h, config.d_e, config.n_heads, config.d_ff, config.seed);
  m.token_table = &set.add("embed.tokens", tokens.topRows(config.vocab_size));
  m.position_table = &set.add("embed.positions", positions.topRows(config.max_positions()));
  m.image_projection.weight = &set.add("embed.image.weight", init->image_projection());
  m.image_projection.bias = &set.add("embed.image.bias", init->image_bias());

  for (int i = 0; i < config.text_layers; ++i) m.text_encoder.push_back(b.trm("text_encoder." + std::to_string(i)));
  for (int i = 0; i < config.visual_layers; ++i) m.visual_encoder.push_back(b.trm("visual_encoder." + std::to_string(i)));
  for (int i = 0; i < config.fusion_layers; ++i) m.fusion.push_back(b.filter("fusion." + std::to_string(i)));
  for (int i = 0; i < config.summary_layers; ++i) m.summary_decoder.push_back(b.decoder("summary_decoder." + std::to_string(i)));
  m.summary_head = b.head("summary_head", config.vocab_size);
  m.description_cross = b.trm("description_cross");
  for (int i = 0; i < config.description_layers; ++i) m.description_decoder.push_back(b.decoder("description_decoder." + std::to_string(i)));
  m.description_head = b.head("description_head", config.vocab_size);
  m.image_selector.gate = b.ffn("image_selector.gate", config.d_h, config.d_h);
  m.image_selector.score = b.ffn("image_selector.score", config.d_h, 1);
  return m;
}

// ---- building blocks -------------------------------------------------------

Var linear(Tape& tape, const Linear& p, const Var& x) {
  Var y = ag::matmul(x, tape.param(*p.weight));
  if (p.bias) y = ag::add_row(y, tape.param(*p.bias));
  return y;
}

Var feed_forward(Tape& tape, const FeedForward& p, const Var& x) {
  return linear(tape, p.out, ag::gelu(linear(tape, p.in, x)));
}

Var layer_norm(Tape& tape, const LayerNormParams& p, const Var& x) {
  return ag::layer_norm(x, tape.param(*p.gain), tape.param(*p.shift));
}

Var multi_head_attention(Tape& tape, const AttentionParams& p, const Var& query, const Var& kv,
                         const Mask& key_mask, bool causal, AttentionTrace* trace) {
  if (query.cols() != kv.cols()) {
    throw ConfigError("attention: query width " + std::to_string(query.cols()) +
                      " != key/value width " + std::to_string(kv.cols()));
  }
  if (!key_mask.empty() && static_cast<Index>(key_mask.size()) != kv.rows()) {
    throw ConfigError("attention: key mask length does not match key count");
  }
  const Var q = ag::matmul(query, tape.param(*p.query));
  const Var k = ag::matmul(kv, tape.param(*p.key));
  const Var v = ag::matmul(kv, tape.param(*p.value));
  const Index width = q.cols();
  if (width % p.n_heads != 0) throw ConfigError("attention width not divisible by head count");
  const Index head = width / p.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head));

  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(p.n_heads));
  for (int h = 0; h < p.n_heads; ++h) {
    const bool whole = p.n_heads == 1;
    const Var qh = whole ? q : ag::slice_cols(q, h * head, head);
    const Var kh = whole ? k : ag::slice_cols(k, h * head, head);
    const Var vh = whole ? v : ag::slice_cols(v, h * head, head);
    const Var weights = ag::masked_softmax_rows(ag::scale(ag::matmul_nt(qh, kh), scale), key_mask, causal);
    if (trace) trace->weights.push_back(weights.value());
    heads.push_back(ag::matmul(weights, vh));
  }
  const Var joined = heads.size() == 1 ? heads[0] : ag::concat_cols(heads);
  return linear(tape, p.output, joined);
}

Var trm_layer(Tape& tape, const TrmLayerParams& p, const Var& x, const Mask& mask,
              AttentionTrace* trace) {
  const Var attended = multi_head_attention(tape, p.attention, x, x, mask, false, trace);
  const Var h = layer_norm(tape, p.attention_norm, ag::add(x, attended));
  return layer_norm(tape, p.ffn_norm, ag::add(h, feed_forward(tape, p.ffn, h)));
}

Var trm_stack(Tape& tape, const Var& seq, const Mask& mask, std::span<const TrmLayerParams> layers,
              int n_layers, AttentionTrace* trace) {
  if (n_layers < 0 || static_cast<std::size_t>(n_layers) > layers.size()) {
    throw ConfigError("trm_stack: " + std::to_string(n_layers) + " layers requested, " +
                      std::to_string(layers.size()) + " available");
  }
  if (!mask.empty() && static_cast<Index>(mask.size()) != seq.rows()) {
    throw ConfigError("trm_stack: mask length does not match sequence length");
  }
  Var x = seq;
  for (int i = 0; i < n_layers; ++i) {
    x = trm_layer(tape, layers[static_cast<std::size_t>(i)], x, mask, trace);
    if (!x.value().allFinite()) {
      throw NumericError("non-finite activation in self-attention layer " + std::to_string(i));
    }
  }
  return x;
}

Var co_trm(Tape& tape, const TrmLayerParams& p, const Var& query, const Var& kv,
           const Mask& kv_mask, AttentionTrace* trace) {
  const Var attended = multi_head_attention(tape, p.attention, query, kv, kv_mask, false, trace);
  const Var h = layer_norm(tape, p.attention_norm, ag::add(query, attended));
  return layer_norm(tape, p.ffn_norm, ag::add(h, feed_forward(tape, p.ffn, h)));
}

FusedEncoding noisy_filter_fuse(Tape& tape, const Var& text, const Mask& text_mask,
                                const Var& visual, const Mask& visual_mask,
                                std::span<const NoisyFilterLayerParams> layers, int n_layers,
                                FilterTrace* trace) {
  if (n_layers < 1) throw ConfigError("noisy_filter_fuse: at least one fusion layer required");
  if (static_cast<std::size_t>(n_layers) > layers.size()) {
    throw ConfigError("noisy_filter_fuse: not enough fusion layer parameters");
  }
  if (text.cols() != visual.cols()) throw ConfigError("noisy_filter_fuse: text/visual width mismatch");

  Var h = text;
  Var g = visual;
  for (int i = 0; i < n_layers; ++i) {
    const auto& p = layers[static_cast<std::size_t>(i)];
    const Var h_cross = co_trm(tape, p.text_cross, h, g, visual_mask);
    const Var g_cross = co_trm(tape, p.visual_cross, g, h, text_mask);
    const Var g_pooled = ag::broadcast_rows(ag::masked_mean_rows(g, visual_mask), h.rows());
    const Var h_pooled = ag::broadcast_rows(ag::masked_mean_rows(h, text_mask), g.rows());

    const Var text_vis_mem = feed_forward(tape, p.text_branch_visual_memory, ag::concat_cols(std::vector<Var>{h_cross, g_pooled}));
    const Var text_gate = ag::sigmoid(text_vis_mem);
    const Var text_txt_mem = feed_forward(tape, p.text_branch_text_memory, ag::concat_cols(std::vector<Var>{h_cross, h}));
    const Var h_next = layer_norm(tape, p.text_norm, ag::add(ag::mul(text_gate, text_vis_mem), text_txt_mem));

    const Var vis_txt_mem = feed_forward(tape, p.visual_branch_text_memory, ag::concat_cols(std::vector<Var>{g_cross, h_pooled}));
    const Var vis_gate = ag::sigmoid(vis_txt_mem);
    const Var vis_vis_mem = feed_forward(tape, p.visual_branch_visual_memory, ag::concat_cols(std::vector<Var>{g_cross, g}));
    const Var g_next = layer_norm(tape, p.visual_norm, ag::add(ag::mul(vis_gate, vis_txt_mem), vis_vis_mem));

    if (trace) {
      trace->text_cross.push_back(h_cross.value());
      trace->visual_cross.push_back(g_cross.value());
      trace->text_gate.push_back(text_gate.value());
      trace->text_visual_memory.push_back(text_vis_mem.value());
      trace->text_text_memory.push_back(text_txt_mem.value());
      trace->visual_gate.push_back(vis_gate.value());
      trace->visual_text_memory.push_back(vis_txt_mem.value());
      trace->visual_visual_memory.push_back(vis_vis_mem.value());
    }
    if (!h_next.value().allFinite() || !g_next.value().allFinite()) {
      throw NumericError("non-finite activation in fusion layer " + std::to_string(i));
    }
    h = h_next;
    g = g_next;
  }
  return {h, g};
}

Var decoder_stack(Tape& tape, std::span<const DecoderLayerParams> layers, const Var& prefix,
                  const Var& memory, const Mask& memory_mask, AttentionTrace* trace) {
  Var x = prefix;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& p = layers[i];
    const Var self = multi_head_attention(tape, p.self_attention, x, x, {}, true, trace);
    const Var h1 = layer_norm(tape, p.self_norm, ag::add(x, self));
    const Var cross = multi_head_attention(tape, p.cross_attention, h1, memory, memory_mask, false, trace);
    const Var h2 = layer_norm(tape, p.cross_norm, ag::add(h1, cross));
    x = layer_norm(tape, p.ffn_norm, ag::add(h2, feed_forward(tape, p.ffn, h2)));
    if (!x.value().allFinite()) {
      throw NumericError("non-finite activation in decoder layer " + std::to_string(i));
    }
  }
  return x;
}

Var output_logits(Tape& tape, const OutputHeadParams& p, const Var& states) {
  return feed_forward(tape, p.ffn, ag::matmul(states, tape.param(*p.projection)));
}

Var image_log_scores(Tape& tape, const ImageSelectorParams& p, const Var& image_embeddings,
                     const Var& visual_encoding, const Mask& image_mask) {
  if (image_embeddings.rows() == 0) throw ContractViolation("select_image: no images");
  if (image_embeddings.rows() != visual_encoding.rows() || image_embeddings.cols() != visual_encoding.cols()) {
    throw ConfigError("select_image: image embeddings and visual encoding are not aligned");
  }
  const Var gate = ag::sigmoid(feed_forward(tape, p.gate, image_embeddings));
  const Var fused = ag::add(ag::mul(gate, image_embeddings), ag::mul(ag::one_minus(gate), visual_encoding));
  const Var scores = ag::transpose(feed_forward(tape, p.score, fused));
  return ag::masked_log_softmax_rows(scores, image_mask);
}

Matrix softmax_rows_from_log(const Matrix& log_probs) {
  return log_probs.unaryExpr([](double v) { return std::exp(v); });
}

// ---- CisumModel ------------------------------------------------------------

CisumModel::CisumModel(const ModelConfig& config, const EmbeddingBackend* init) : config_(config) {
  config_.validate();
  layout_ = build_parameters(config_, params_, init);
}

Var CisumModel::embed_tokens(Tape& tape, std::span<const int> tokens) const {
  const auto n = static_cast<Index>(tokens.size());
  if (n > config_.max_positions()) throw ContractViolation("token sequence longer than max positions");
  std::vector<int> ids(tokens.begin(), tokens.end());
  for (int& id : ids) {
    if (id < 0 || id >= config_.vocab_size) id = kUnk;
  }
  const Var rows = ag::gather_rows(tape.param(*layout_.token_table), ids);
  const Var pos = ag::slice_rows(tape.param(*layout_.position_table), 0, n);
  return ag::add(rows, pos);
}

Var CisumModel::embed_images(Tape& tape, const Matrix& features) const {
  if (features.cols() != config_.d_v) {
    throw ContractViolation("image feature dimension " + std::to_string(features.cols()) +
                            " != d_v " + std::to_string(config_.d_v));
  }
  return linear(tape, layout_.image_projection, tape.constant(features));
}

Encoded CisumModel::encode(Tape& tape, const ModelInput& input, FilterTrace* trace) const {
  const auto n = static_cast<Index>(input.tokens.size());
  const Index m = input.images.rows();
  if (n == 0) throw ContractViolation("encode: empty text");
  if (n > config_.max_text_len) throw ContractViolation("encode: text longer than max_text_len");
  if (m == 0) throw ContractViolation("encode: no images");
  if (m > config_.max_images) throw ContractViolation("encode: more images than max_images");
  Encoded enc;
  enc.text_mask = input.text_mask.empty() ? full_mask(n) : input.text_mask;
  enc.image_mask = input.image_mask.empty() ? full_mask(m) : input.image_mask;
  if (static_cast<Index>(enc.text_mask.size()) != n || static_cast<Index>(enc.image_mask.size()) != m) {
    throw ContractViolation("encode: mask length mismatch");
  }
  if (count_valid(enc.text_mask) == 0 || count_valid(enc.image_mask) == 0) {
    throw ContractViolation("encode: every position is masked");
  }

  const Var text = embed_tokens(tape, input.tokens);
  enc.image_embeddings = embed_images(tape, input.images);
  const Var h = trm_stack(tape, text, enc.text_mask, layout_.text_encoder, config_.text_layers);
  const Var g = trm_stack(tape, enc.image_embeddings, enc.image_mask, layout_.visual_encoder, config_.visual_layers);
  const FusedEncoding fused = noisy_filter_fuse(tape, h, enc.text_mask, g, enc.image_mask, layout_.fusion,
                                                config_.fusion_layers, trace);
  enc.text = fused.text;
  enc.visual = fused.visual;
  return enc;
}

void CisumModel::check_prefix(std::span<const int> prefix, int max_len, const char* what) const {
  if (prefix.empty()) throw ContractViolation(std::string(what) + ": empty prefix");
  if (prefix[0] != kBos) throw ContractViolation(std::string(what) + ": prefix must start with BOS");
  if (static_cast<int>(prefix.size()) > max_len) {
    throw ContractViolation(std::string(what) + ": prefix longer than " + std::to_string(max_len));
  }
  for (int t : prefix) {
    if (t < 0 || t >= config_.vocab_size) {
      throw ContractViolation(std::string(what) + ": prefix token " + std::to_string(t) + " outside vocabulary");
    }
  }
}

Var CisumModel::summary_logits(Tape& tape, const Encoded& enc, std::span<const int> prefix) const {
  check_prefix(prefix, config_.max_summary_len, "decode_summary");
  const Var states = decoder_stack(tape, layout_.summary_decoder, embed_tokens(tape, prefix), enc.text, enc.text_mask);
  return output_logits(tape, layout_.summary_head, states);
}

Var CisumModel::description_memory(Tape& tape, const Encoded& enc) const {
  return co_trm(tape, layout_.description_cross, enc.visual, enc.text, enc.text_mask);
}

Var CisumModel::description_logits(Tape& tape, const Encoded& enc, const Var& memory, int image,
                                   std::span<const int> prefix) const {
  if (image < 0 || image >= memory.rows() || !enc.image_mask[static_cast<std::size_t>(image)]) {
    throw ContractViolation("decode_description: image index " + std::to_string(image) + " out of range");
  }
  check_prefix(prefix, config_.max_description_len, "decode_description");
  const Var own = ag::slice_rows(memory, image, 1);
  const Var states = decoder_stack(tape, layout_.description_decoder, embed_tokens(tape, prefix), own, {});
  return output_logits(tape, layout_.description_head, states);
}

Var CisumModel::image_log_scores(Tape& tape, const Encoded& enc) const {
  return model::image_log_scores(tape, layout_.image_selector, enc.image_embeddings, enc.visual, enc.image_mask);
}

namespace {
Vector last_row_distribution(const Var& logits) {
  Tape& tape = *logits.tape();
  const Var last = ag::slice_rows(logits, logits.rows() - 1, 1);
  const Var log_p = ag::masked_log_softmax_rows(last, {});
  (void)tape;
  return softmax_rows_from_log(log_p.value()).row(0).transpose();
}

int argmax(const Vector& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<int>(best);
}
}  // namespace

Vector CisumModel::decode_summary(Tape& tape, const Encoded& enc, std::span<const int> prefix) const {
  return last_row_distribution(summary_logits(tape, enc, prefix));
}

Vector CisumModel::decode_description(Tape& tape, const Encoded& enc, const Var& memory, int image,
                                      std::span<const int> prefix) const {
  return last_row_distribution(description_logits(tape, enc, memory, image, prefix));
}

Vector CisumModel::select_image(Tape& tape, const Encoded& enc) const {
  return softmax_rows_from_log(image_log_scores(tape, enc).value()).row(0).transpose();
}

ForwardGraph CisumModel::forward_graph(Tape& tape, const ModelInput& input,
                                       const TeacherPrefixes& teacher) const {
  ForwardGraph g;
  g.encoded = encode(tape, input);
  g.summary_log_probs = ag::masked_log_softmax_rows(summary_logits(tape, g.encoded, teacher.summary), {});
  const Index m = input.images.rows();
  if (static_cast<Index>(teacher.descriptions.size()) != m) {
    throw ContractViolation("forward: one description prefix per image required");
  }
  const Var memory = description_memory(tape, g.encoded);
  g.description_log_probs.resize(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    if (!g.encoded.image_mask[static_cast<std::size_t>(i)]) continue;
    g.description_log_probs[static_cast<std::size_t>(i)] = ag::masked_log_softmax_rows(
        description_logits(tape, g.encoded, memory, static_cast<int>(i), teacher.descriptions[static_cast<std::size_t>(i)]), {});
  }
  g.image_log_scores = image_log_scores(tape, g.encoded);
  return g;
}

TripleOutput CisumModel::forward(const ModelInput& input, const TeacherPrefixes* teacher) const {
  Tape tape;
  TripleOutput out;
  const Index m = input.images.rows();
  if (teacher) {
    const ForwardGraph g = forward_graph(tape, input, *teacher);
    out.summary_dists = softmax_rows_from_log(g.summary_log_probs.value());
    out.desc_dists.resize(static_cast<std::size_t>(m));
    for (Index i = 0; i < m; ++i) {
      const Var& d = g.description_log_probs[static_cast<std::size_t>(i)];
      if (d.valid()) out.desc_dists[static_cast<std::size_t>(i)] = softmax_rows_from_log(d.value());
    }
    out.image_scores = softmax_rows_from_log(g.image_log_scores.value()).row(0).transpose();
    out.selected_image = argmax(out.image_scores);
    return out;
  }

  const Encoded enc = encode(tape, input);
  auto greedy = [&](auto&& next, int max_len, std::vector<int>& tokens) {
    std::vector<int> prefix{kBos};
    std::vector<Vector> rows;
    while (static_cast<int>(prefix.size()) <= max_len) {
      Vector dist = next(prefix);
      const int tok = argmax(dist);
      rows.push_back(std::move(dist));
      if (tok == kEos || static_cast<int>(prefix.size()) == max_len) {
        if (tok != kEos) tokens.push_back(tok);
        break;
      }
      tokens.push_back(tok);
      prefix.push_back(tok);
    }
    Matrix dists(static_cast<Index>(rows.size()), config_.vocab_size);
    for (std::size_t r = 0; r < rows.size(); ++r) dists.row(static_cast<Index>(r)) = rows[r].transpose();
    return dists;
  };

  out.summary_dists = greedy([&](const std::vector<int>& p) { return decode_summary(tape, enc, p); },
                             config_.max_summary_len, out.summary_tokens);
  const Var memory = description_memory(tape, enc);
  out.desc_dists.resize(static_cast<std::size_t>(m));
  out.description_tokens.resize(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    if (!enc.image_mask[static_cast<std::size_t>(i)]) continue;
    out.desc_dists[static_cast<std::size_t>(i)] = greedy(
        [&](const std::vector<int>& p) { return decode_description(tape, enc, memory, static_cast<int>(i), p); },
        config_.max_description_len, out.description_tokens[static_cast<std::size_t>(i)]);
  }
  out.image_scores = select_image(tape, enc);
  out.selected_image = argmax(out.image_scores);
  return out;
}

}  // namespace cisum::model
