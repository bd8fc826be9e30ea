#pragma once

// Corpus records, JSONL persistence, tokenizers, vocabulary, batching, and
// the synthetic multimodal corpus generator.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cisum/config.hpp"
#include "cisum/model.hpp"

namespace cisum {

class ToyBackend;

struct Article {
  std::string id;
  std::string title;
  std::string body;
  std::vector<std::vector<double>> images;  // raw features, one per image
  std::vector<std::string> captions;
  std::string target_summary;
  std::vector<std::string> target_descriptions;
  int relevant_image_index = 0;

  // Throws ParseError describing the first violated invariant.
  void validate() const;
};

nlohmann::ordered_json article_to_json(const Article& a);
// `line` is 1-based and only used in error messages.
Article article_from_json(const nlohmann::json& j, std::size_t line);

struct Corpus {
  std::string split = "train";
  std::vector<Article> articles;
};

// One article per line; blank lines are skipped. Errors name the line.
Corpus load_corpus(const std::filesystem::path& path, std::string split = "train");
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

enum class TokenizerKind { kWhitespace, kCharacter };

class Tokenizer {
 public:
  explicit Tokenizer(TokenizerKind kind = TokenizerKind::kWhitespace) : kind_(kind) {}
  static Tokenizer from_name(std::string_view name);  // "whitespace" | "character"

  TokenizerKind kind() const { return kind_; }
  std::string name() const;
  std::vector<std::string> tokenize(std::string_view text) const;
  std::string detokenize(const std::vector<std::string>& tokens) const;

 private:
  TokenizerKind kind_;
};

class Vocab {
 public:
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kBosToken = "<bos>";
  static constexpr std::string_view kEosToken = "<eos>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocab();
  // Tokens ranked by frequency, ties lexicographic; max_size counts the four
  // reserved entries.
  static Vocab build(const std::vector<std::vector<std::string>>& texts, int max_size);
  static Vocab build(const Corpus& corpus, const Tokenizer& tok, int max_size);
  static Vocab from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;  // UNK when absent
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  // Drops PAD/BOS/EOS; stops at the first EOS.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Model-ready view of one article.
struct EncodedArticle {
  model::ModelInput input;
  model::TeacherPrefixes teacher;
  std::vector<int> summary_target;                    // tokens + EOS
  std::vector<std::vector<int>> description_targets;  // per image
  int gold_image = 0;
};

// Truncates text to max_text_len, targets to the decoder length limits.
// Throws ContractViolation when the article has more images than max_images
// or features of the wrong dimension.
EncodedArticle encode_article(const Article& a, const Vocab& vocab, const Tokenizer& tok,
                              const ModelConfig& config);

struct Batch {
  std::vector<std::size_t> indices;  // positions in the source list
  std::vector<EncodedArticle> items; // padded copies
};

// Seeded shuffle into batches of batch_size (last one may be short). Inside a
// batch, text, images and decoder sequences are padded to the longest member;
// padded text/image positions are masked and padded targets are PAD.
std::vector<Batch> make_batches(const std::vector<EncodedArticle>& items, int batch_size,
                                std::uint64_t seed);
std::vector<std::vector<std::size_t>> batch_order(std::size_t n, int batch_size, std::uint64_t seed);

struct SynthOptions {
  int n_articles = 50;
  int n_topics = 8;
  int images_per_article = 4;
  int distractors = 2;
  double image_noise = 0.1;
  std::uint64_t seed = 1;
  std::string id_prefix = "synth";
};

// Topic-structured corpus. Each article has a gold topic told as a four-step
// story in the title and body; the other image topics get short mentions.
// Image features are the toy backend's concept vector of the topic's
// description plus Gaussian noise, so each image sits next to its
// description in the shared space.
Corpus synth_corpus(const SynthOptions& options, const ToyBackend& backend);

// Number of built-in topics available to synth_corpus.
int synth_topic_count();
// Normalised image prototype of topic t (what the noise is added to).
Vector synth_topic_prototype(int topic, const ToyBackend& backend);
// The four story steps of the gold topic for the given fillers.
std::vector<std::string> synth_story(int topic, std::string_view city, std::string_view crowd);
std::string synth_description(int topic);

}  // namespace cisum
