#pragma once

// Visual description locator: splits a text summary into short sentences,
// scores every gap with a sentence coherence classifier, and inserts the
// selected image's description at the best gap.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cisum/data.hpp"
#include "cisum/model.hpp"

namespace cisum::vdl {

// Splits after every sentence delimiter (the delimiter stays with the
// preceding piece). Concatenating the result gives back the input exactly;
// pieces that are empty are dropped.
std::vector<std::string> split_short_sentences(std::string_view text);

// Trimmed, non-empty short sentences.
std::vector<std::string> sentence_list(std::string_view text);

struct CoherenceSample {
  std::string a;
  std::string b;
  int label = 0;  // 1: b directly follows a
};

nlohmann::ordered_json to_json(const CoherenceSample& s);
CoherenceSample sample_from_json(const nlohmann::json& j, std::size_t line);
void save_samples(const std::vector<CoherenceSample>& samples, const std::filesystem::path& path);
std::vector<CoherenceSample> load_samples(const std::filesystem::path& path);

// Positives: adjacent short sentences of one title. Negatives: half ordered
// non-adjacent pairs from one title, half pairs across two titles; any
// negative string-equal to a positive pair is redrawn. ceil(n/2) positives,
// floor(n/2) negatives, shuffled. Throws ConfigError unless at least two
// titles split into two or more sentences.
std::vector<CoherenceSample> scsc_dataset(const std::vector<std::string>& titles, std::size_t n_samples,
                                          std::uint64_t seed);

class CoherenceScorer {
 public:
  virtual ~CoherenceScorer() = default;
  // Probability that b coherently follows a.
  virtual double score(std::string_view a, std::string_view b) const = 0;
};

struct ScscConfig {
  int d_model = 32;
  int n_heads = 2;
  int layers = 2;
  int d_ff = 64;
  int max_len = 64;  // joined pair including the three special tokens
  int epochs = 4;
  double learning_rate = 2e-3;
  int batch_size = 32;
  std::uint64_t seed = 99;
};

nlohmann::json to_json(const ScscConfig& c);
ScscConfig scsc_config_from_json(const nlohmann::json& j);

// Pair classifier: [BOS] a [EOS] b with token, position and segment
// embeddings, a self-attention stack, mean pooling and a logistic output.
class ScscModel final : public CoherenceScorer {
 public:
  ScscModel(ScscConfig config, Vocab vocab, Tokenizer tokenizer);

  const ScscConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  bool trained() const { return trained_; }
  model::ParameterSet& parameters() { return params_; }

  // Throws ContractViolation when the model has not been trained or loaded.
  double score(std::string_view a, std::string_view b) const override;
  double accuracy(const std::vector<CoherenceSample>& samples) const;

  // Minibatch Adam on binary cross-entropy. Returns mean loss per epoch.
  std::vector<double> train(const std::vector<CoherenceSample>& samples,
                            const std::function<void(int epoch, double loss)>& on_epoch = {});

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<ScscModel> load(const std::filesystem::path& path);

 private:
  std::vector<int> encode_pair(std::string_view a, std::string_view b, Mask* segment_b) const;
  model::Var logit(model::Tape& tape, std::string_view a, std::string_view b) const;

  ScscConfig config_;
  Vocab vocab_;
  Tokenizer tokenizer_;
  model::ParameterSet params_;
  model::Parameter* tokens_ = nullptr;
  model::Parameter* positions_ = nullptr;
  model::Parameter* segments_ = nullptr;
  std::vector<model::TrmLayerParams> layers_;
  model::Linear head_;
  bool trained_ = false;
};

// Builds the classifier vocabulary from the sentences of the samples.
Vocab scsc_vocab(const std::vector<CoherenceSample>& samples, const Tokenizer& tokenizer);

struct InsertionPlan {
  std::vector<std::string> sentences;  // trimmed short sentences of the summary
  int position = 0;                    // gap index in [0, sentences.size()]
  std::vector<double> scores;          // one per gap
};

// Gap g sits before sentence g. Its score is the mean of
// score(sentence g-1, description) and score(description, sentence g),
// using the single available side at either end. Ties go to the earliest gap.
InsertionPlan plan_insertion(std::string_view summary, std::string_view description,
                             const CoherenceScorer& scorer);

// Inserts the description at the planned gap: separator + description after
// the previous sentence, or description + separator at gap 0. An empty
// summary yields the description alone. Throws ContractViolation on an empty
// description.
std::string insert_description(std::string_view summary, std::string_view description,
                               const CoherenceScorer& scorer, std::string_view separator = " ",
                               InsertionPlan* plan = nullptr);

}  // namespace cisum::vdl
