#pragma once

// The cross-modality summarisation network: embeddings, self-attention
// encoders, the noisy-filter fusion encoder, and the three decoder heads
// (summary, per-image description, image selection).
//
// Every building block is a free function over an autograd Tape so tests can
// drive each piece in isolation; CisumModel wires them together and owns the
// parameters.

#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cisum/autograd.hpp"
#include "cisum/config.hpp"
#include "cisum/rng.hpp"
#include "cisum/tensor.hpp"

namespace cisum {
class EmbeddingBackend;
}

namespace cisum::model {

using ag::Parameter;
using ag::Tape;
using ag::Var;

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;

// Owns parameters with stable addresses, in creation order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Parameter& add(std::string name, Matrix init);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  Parameter& at(std::string_view name);

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }
  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, Parameter*> index_;
};

struct Linear {
  Parameter* weight = nullptr;  // [in x out]
  Parameter* bias = nullptr;    // [1 x out], optional
};

// out(gelu(in(x)))
struct FeedForward {
  Linear in;
  Linear out;
};

struct LayerNormParams {
  Parameter* gain = nullptr;
  Parameter* shift = nullptr;
};

struct AttentionParams {
  Parameter* query = nullptr;  // [d_h x d_e]
  Parameter* key = nullptr;    // [d_h x d_e]
  Parameter* value = nullptr;  // [d_h x d_e]
  Linear output;               // [d_e x d_h] + bias
  int n_heads = 1;
};

// Shared by the self-attention block and the cross-modality block; the latter
// just feeds a different key/value sequence.
struct TrmLayerParams {
  AttentionParams attention;
  LayerNormParams attention_norm;
  FeedForward ffn;
  LayerNormParams ffn_norm;
};

struct DecoderLayerParams {
  AttentionParams self_attention;
  LayerNormParams self_norm;
  AttentionParams cross_attention;
  LayerNormParams cross_norm;
  FeedForward ffn;
  LayerNormParams ffn_norm;
};

struct NoisyFilterLayerParams {
  TrmLayerParams text_cross;    // text queries over images
  TrmLayerParams visual_cross;  // image queries over text
  // Text branch: memory of the other modality (gated) and of its own.
  FeedForward text_branch_visual_memory;
  FeedForward text_branch_text_memory;
  LayerNormParams text_norm;
  // Image branch, roles swapped.
  FeedForward visual_branch_text_memory;
  FeedForward visual_branch_visual_memory;
  LayerNormParams visual_norm;
};

struct OutputHeadParams {
  Parameter* projection = nullptr;  // [d_h x d_h], no bias
  FeedForward ffn;                  // d_h -> vocab
};

struct ImageSelectorParams {
  FeedForward gate;   // d_h -> d_h, squashed by a sigmoid
  FeedForward score;  // d_h -> 1
};

struct ModelParams {
  Parameter* token_table = nullptr;     // [vocab x d_h]
  Parameter* position_table = nullptr;  // [max_positions x d_h]
  Linear image_projection;              // [d_v x d_h]
  std::vector<TrmLayerParams> text_encoder;
  std::vector<TrmLayerParams> visual_encoder;
  std::vector<NoisyFilterLayerParams> fusion;
  std::vector<DecoderLayerParams> summary_decoder;
  OutputHeadParams summary_head;
  TrmLayerParams description_cross;
  std::vector<DecoderLayerParams> description_decoder;
  OutputHeadParams description_head;
  ImageSelectorParams image_selector;
};

// Creates named, initialised parameter groups: fan-based uniform weights,
// zero biases, unit LN gain and zero shift. Draws come from one seeded
// stream in creation order.
class ParameterFactory {
 public:
  ParameterFactory(ParameterSet& set, int d_model, int d_attention, int n_heads, int d_ff,
                   std::uint64_t seed);

  Parameter* weight(const std::string& name, int in, int out);
  Parameter* zeros(const std::string& name, int rows, int cols);
  Linear linear(const std::string& name, int in, int out, bool bias = true);
  FeedForward ffn(const std::string& name, int in, int out);
  LayerNormParams norm(const std::string& name);
  AttentionParams attention(const std::string& name);
  TrmLayerParams trm(const std::string& name);
  DecoderLayerParams decoder(const std::string& name);
  NoisyFilterLayerParams filter(const std::string& name);
  OutputHeadParams head(const std::string& name, int vocab_size);

 private:
  ParameterSet& set_;
  int d_model_, d_attention_, n_heads_, d_ff_;
  Rng rng_;
};

// Embedding tables and the image projection are copied from `init` when
// given, otherwise from a toy backend seeded from config.seed.
ModelParams build_parameters(const ModelConfig& config, ParameterSet& set,
                             const EmbeddingBackend* init);

// ---- building blocks -------------------------------------------------------

// Attention weights of every head of every attention call, in call order.
struct AttentionTrace {
  std::vector<Matrix> weights;
};

// Intermediate values of each fusion layer, for inspection in tests.
struct FilterTrace {
  std::vector<Matrix> text_cross, visual_cross;
  std::vector<Matrix> text_gate, text_visual_memory, text_text_memory;
  std::vector<Matrix> visual_gate, visual_text_memory, visual_visual_memory;
};

Var linear(Tape& tape, const Linear& p, const Var& x);
Var feed_forward(Tape& tape, const FeedForward& p, const Var& x);
Var layer_norm(Tape& tape, const LayerNormParams& p, const Var& x);

Var multi_head_attention(Tape& tape, const AttentionParams& p, const Var& query, const Var& kv,
                         const Mask& key_mask, bool causal, AttentionTrace* trace = nullptr);

// MAtt -> LN(x + .) -> LN(. + FFN(.)).
Var trm_layer(Tape& tape, const TrmLayerParams& p, const Var& x, const Mask& mask,
              AttentionTrace* trace = nullptr);

// Applies the first n_layers blocks; n_layers == 0 returns seq unchanged.
// Throws ConfigError on shape mismatch and NumericError naming the layer on
// non-finite activations.
Var trm_stack(Tape& tape, const Var& seq, const Mask& mask, std::span<const TrmLayerParams> layers,
              int n_layers, AttentionTrace* trace = nullptr);

// Queries from `query`, keys/values from `kv`; both residuals are taken
// against the query stream.
Var co_trm(Tape& tape, const TrmLayerParams& p, const Var& query, const Var& kv,
           const Mask& kv_mask, AttentionTrace* trace = nullptr);

struct FusedEncoding {
  Var text;    // [N x d_h]
  Var visual;  // [M x d_h]
};

// Per layer, for the text branch:
//   cross      = co_trm(text, visual)
//   vis_memory = FFN([cross ; mean(visual)])
//   txt_memory = FFN([cross ; text])
//   text'      = LN(sigmoid(vis_memory) * vis_memory + txt_memory)
// and the mirror image for the visual branch. Layer outputs feed the next layer.
FusedEncoding noisy_filter_fuse(Tape& tape, const Var& text, const Mask& text_mask,
                                const Var& visual, const Mask& visual_mask,
                                std::span<const NoisyFilterLayerParams> layers, int n_layers,
                                FilterTrace* trace = nullptr);

// Causal self-attention over the prefix, cross-attention into memory, FFN.
Var decoder_stack(Tape& tape, std::span<const DecoderLayerParams> layers, const Var& prefix,
                  const Var& memory, const Mask& memory_mask, AttentionTrace* trace = nullptr);

// FFN(W h) logits, [rows x vocab].
Var output_logits(Tape& tape, const OutputHeadParams& p, const Var& states);

// lambda = sigmoid(FFN(G)); I = lambda*G + (1-lambda)*G_enc; log softmax of
// FFN(I) over the valid images. Returns [1 x M] log-scores.
Var image_log_scores(Tape& tape, const ImageSelectorParams& p, const Var& image_embeddings,
                     const Var& visual_encoding, const Mask& image_mask);

// ---- model -----------------------------------------------------------------

struct ModelInput {
  std::vector<int> tokens;  // [N]
  Mask text_mask;           // [N]; empty = all valid
  Matrix images;            // [M x d_v]
  Mask image_mask;          // [M]; empty = all valid
};

// Decoder inputs for teacher forcing; each starts with BOS.
struct TeacherPrefixes {
  std::vector<int> summary;
  std::vector<std::vector<int>> descriptions;  // one per image (empty for padded images)
};

struct TripleOutput {
  Matrix summary_dists;              // [S x V], row-stochastic
  std::vector<Matrix> desc_dists;    // per image [D_len x V]; empty for padded images
  Vector image_scores;               // [M] simplex (0 for padded images)
  // Greedy mode only: decoded ids without BOS/EOS.
  std::vector<int> summary_tokens;
  std::vector<std::vector<int>> description_tokens;
  int selected_image = -1;
};

struct Encoded {
  Var image_embeddings;  // G
  Var text;              // H_enc
  Var visual;            // G_enc
  Mask text_mask;
  Mask image_mask;
};

// Log-probability graph of a teacher-forced pass.
struct ForwardGraph {
  Encoded encoded;
  Var summary_log_probs;                     // [S x V]
  std::vector<Var> description_log_probs;    // per image; invalid Var for padded images
  Var image_log_scores;                      // [1 x M]
};

class CisumModel {
 public:
  // config.vocab_size must be set. Without a backend, a toy backend seeded
  // from config.seed provides the initial embeddings.
  explicit CisumModel(const ModelConfig& config, const EmbeddingBackend* init = nullptr);
  CisumModel(const CisumModel&) = delete;
  CisumModel& operator=(const CisumModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const ModelParams& layout() const { return layout_; }

  Var embed_tokens(Tape& tape, std::span<const int> tokens) const;
  Var embed_images(Tape& tape, const Matrix& features) const;

  Encoded encode(Tape& tape, const ModelInput& input, FilterTrace* trace = nullptr) const;

  Var summary_logits(Tape& tape, const Encoded& enc, std::span<const int> prefix) const;
  // Cross-modal image memory fed to the description decoder, [M x d_h].
  Var description_memory(Tape& tape, const Encoded& enc) const;
  Var description_logits(Tape& tape, const Encoded& enc, const Var& memory, int image,
                         std::span<const int> prefix) const;
  Var image_log_scores(Tape& tape, const Encoded& enc) const;

  // Next-token distributions at the last prefix position.
  Vector decode_summary(Tape& tape, const Encoded& enc, std::span<const int> prefix) const;
  Vector decode_description(Tape& tape, const Encoded& enc, const Var& memory, int image,
                            std::span<const int> prefix) const;
  Vector select_image(Tape& tape, const Encoded& enc) const;

  ForwardGraph forward_graph(Tape& tape, const ModelInput& input,
                             const TeacherPrefixes& teacher) const;

  // Teacher-forced when `teacher` is given, greedy decoding otherwise.
  TripleOutput forward(const ModelInput& input, const TeacherPrefixes* teacher) const;

 private:
  void check_prefix(std::span<const int> prefix, int max_len, const char* what) const;

  ModelConfig config_;
  ParameterSet params_;
  ModelParams layout_;
};

Matrix softmax_rows_from_log(const Matrix& log_probs);

}  // namespace cisum::model
