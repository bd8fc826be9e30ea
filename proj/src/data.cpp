#include "cisum/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <spdlog/spdlog.h>

#include "cisum/backends.hpp"
#include "cisum/errors.hpp"
#include "cisum/rng.hpp"
#include "cisum/text.hpp"

namespace cisum {

using nlohmann::json;
using nlohmann::ordered_json;

// ---- Article ---------------------------------------------------------------

void Article::validate() const {
  if (text::trim(body).empty()) throw ParseError("body: empty");
  if (images.empty()) throw ParseError("images: at least one image required");
  const std::size_t dim = images[0].size();
  for (const auto& img : images) {
    if (img.empty() || img.size() != dim) throw ParseError("images: inconsistent feature dimension");
  }
  if (captions.size() != images.size()) throw ParseError("captions: one caption per image required");
  if (target_descriptions.size() != images.size()) {
    throw ParseError("target_descriptions: one description per image required");
  }
  if (relevant_image_index < 0 || relevant_image_index >= static_cast<int>(images.size())) {
    throw ParseError("relevant_image_index: out of range");
  }
}

ordered_json article_to_json(const Article& a) {
  ordered_json j;
  j["id"] = a.id;
  j["title"] = a.title;
  j["body"] = a.body;
  j["images"] = a.images;
  j["captions"] = a.captions;
  j["target_summary"] = a.target_summary;
  j["target_descriptions"] = a.target_descriptions;
  j["relevant_image_index"] = a.relevant_image_index;
  return j;
}

Article article_from_json(const json& j, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  if (!j.is_object()) throw ParseError(where + "expected a JSON object");
  auto field = [&](const char* name) -> const json& {
    auto it = j.find(name);
    if (it == j.end()) throw ParseError(where + name + " missing");
    return *it;
  };
  Article a;
  try {
    a.id = field("id").get<std::string>();
    a.title = field("title").get<std::string>();
    a.body = field("body").get<std::string>();
  } catch (const json::type_error&) {
    throw ParseError(where + "id/title/body must be strings");
  }
  auto typed = [&](const char* name, auto& out) {
    try {
      out = field(name).get<std::decay_t<decltype(out)>>();
    } catch (const json::exception&) {
      throw ParseError(where + name + " has the wrong type");
    }
  };
  typed("images", a.images);
  typed("captions", a.captions);
  typed("target_summary", a.target_summary);
  typed("target_descriptions", a.target_descriptions);
  const json& rel = field("relevant_image_index");
  if (!rel.is_number_integer()) throw ParseError(where + "relevant_image_index must be an integer");
  a.relevant_image_index = rel.get<int>();
  try {
    a.validate();
  } catch (const ParseError& e) {
    throw ParseError(where + e.what());
  }
  return a;
}

Corpus load_corpus(const std::filesystem::path& path, std::string split) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus " + path.string());
  Corpus corpus;
  corpus.split = std::move(split);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(n) + ": invalid JSON (" + e.what() + ")");
    }
    corpus.articles.push_back(article_from_json(j, n));
  }
  if (corpus.articles.empty()) {
    spdlog::warn("corpus {} is empty", path.string());
  } else {
    spdlog::info("loaded {} {} articles from {}", corpus.articles.size(), corpus.split, path.string());
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write corpus " + path.string());
  for (const auto& a : corpus.articles) out << article_to_json(a).dump() << '\n';
}

// ---- Tokenizer -------------------------------------------------------------

Tokenizer Tokenizer::from_name(std::string_view name) {
  if (name == "whitespace") return Tokenizer(TokenizerKind::kWhitespace);
  if (name == "character") return Tokenizer(TokenizerKind::kCharacter);
  throw ConfigError("unknown tokenizer '" + std::string(name) + "' (expected whitespace or character)");
}

std::string Tokenizer::name() const {
  return kind_ == TokenizerKind::kWhitespace ? "whitespace" : "character";
}

std::vector<std::string> Tokenizer::tokenize(std::string_view s) const {
  return kind_ == TokenizerKind::kWhitespace ? text::split_whitespace(s) : text::split_codepoints(s);
}

std::string Tokenizer::detokenize(const std::vector<std::string>& tokens) const {
  return text::join(tokens, kind_ == TokenizerKind::kWhitespace ? " " : "");
}

// ---- Vocab -----------------------------------------------------------------

Vocab::Vocab()
    : tokens_{std::string(kPadToken), std::string(kBosToken), std::string(kEosToken), std::string(kUnkToken)} {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 4 || tokens[0] != kPadToken || tokens[1] != kBosToken || tokens[2] != kEosToken ||
      tokens[3] != kUnkToken) {
    throw ConfigError("vocabulary must start with <pad> <bos> <eos> <unk>");
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate vocabulary entry '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& texts, int max_size) {
  if (max_size < 4) throw ConfigError("max vocabulary size must be at least 4");
  std::map<std::string, long> counts;
  for (const auto& t : texts) {
    for (const auto& tok : t) ++counts[tok];
  }
  std::vector<std::pair<std::string, long>> ranked;
  for (auto& [tok, c] : counts) {
    if (tok == kPadToken || tok == kBosToken || tok == kEosToken || tok == kUnkToken) continue;
    ranked.emplace_back(tok, c);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{std::string(kPadToken), std::string(kBosToken), std::string(kEosToken),
                                  std::string(kUnkToken)};
  for (const auto& [tok, c] : ranked) {
    if (static_cast<int>(tokens.size()) >= max_size) break;
    tokens.push_back(tok);
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::build(const Corpus& corpus, const Tokenizer& tok, int max_size) {
  std::vector<std::vector<std::string>> texts;
  for (const auto& a : corpus.articles) {
    texts.push_back(tok.tokenize(a.title));
    texts.push_back(tok.tokenize(a.body));
    texts.push_back(tok.tokenize(a.target_summary));
    for (const auto& c : a.captions) texts.push_back(tok.tokenize(c));
    for (const auto& d : a.target_descriptions) texts.push_back(tok.tokenize(d));
  }
  return build(texts, max_size);
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? model::kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw ContractViolation("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == model::kEos) break;
    if (id == model::kPad || id == model::kBos) continue;
    out.push_back(token(id));
  }
  return out;
}

// ---- encoding and batching -------------------------------------------------

EncodedArticle encode_article(const Article& a, const Vocab& vocab, const Tokenizer& tok,
                              const ModelConfig& config) {
  const auto m = static_cast<int>(a.images.size());
  if (m > config.max_images) {
    throw ContractViolation("article " + a.id + ": " + std::to_string(m) + " images exceeds max_images");
  }
  EncodedArticle e;
  std::vector<int> body = vocab.encode(tok.tokenize(a.body));
  if (body.empty()) throw ContractViolation("article " + a.id + ": empty body");
  if (static_cast<int>(body.size()) > config.max_text_len) body.resize(static_cast<std::size_t>(config.max_text_len));
  e.input.tokens = std::move(body);
  e.input.text_mask = full_mask(static_cast<Index>(e.input.tokens.size()));
  e.input.images.resize(m, config.d_v);
  for (int i = 0; i < m; ++i) {
    const auto& f = a.images[static_cast<std::size_t>(i)];
    if (static_cast<int>(f.size()) != config.d_v) {
      throw ContractViolation("article " + a.id + ": image feature dimension " + std::to_string(f.size()) +
                              " != d_v " + std::to_string(config.d_v));
    }
    for (int k = 0; k < config.d_v; ++k) e.input.images(i, k) = f[static_cast<std::size_t>(k)];
  }
  e.input.image_mask = full_mask(m);

  auto target = [&](const std::string& text, int max_len, std::vector<int>& prefix, std::vector<int>& out) {
    std::vector<int> ids = vocab.encode(tok.tokenize(text));
    if (static_cast<int>(ids.size()) > max_len - 1) ids.resize(static_cast<std::size_t>(max_len - 1));
    prefix.assign(1, model::kBos);
    prefix.insert(prefix.end(), ids.begin(), ids.end());
    out = ids;
    out.push_back(model::kEos);
  };
  target(a.target_summary, config.max_summary_len, e.teacher.summary, e.summary_target);
  e.teacher.descriptions.resize(static_cast<std::size_t>(m));
  e.description_targets.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    target(a.target_descriptions[static_cast<std::size_t>(i)], config.max_description_len,
           e.teacher.descriptions[static_cast<std::size_t>(i)], e.description_targets[static_cast<std::size_t>(i)]);
  }
  e.gold_image = a.relevant_image_index;
  return e;
}

std::vector<std::vector<std::size_t>> batch_order(std::size_t n, int batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, hash_string("batch-order")));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

namespace {

void pad_to(std::vector<int>& v, std::size_t n) {
  if (v.size() < n) v.resize(n, model::kPad);
}

}  // namespace

std::vector<Batch> make_batches(const std::vector<EncodedArticle>& items, int batch_size, std::uint64_t seed) {
  std::vector<Batch> out;
  for (auto& idx : batch_order(items.size(), batch_size, seed)) {
    Batch b;
    b.indices = idx;
    std::size_t max_tokens = 0, max_summary = 0, max_desc = 0;
    Index max_images = 0;
    for (std::size_t i : idx) {
      const auto& e = items[i];
      max_tokens = std::max(max_tokens, e.input.tokens.size());
      max_images = std::max(max_images, e.input.images.rows());
      max_summary = std::max(max_summary, e.summary_target.size());
      for (const auto& d : e.description_targets) max_desc = std::max(max_desc, d.size());
    }
    for (std::size_t i : idx) {
      EncodedArticle e = items[i];
      pad_to(e.input.tokens, max_tokens);
      e.input.text_mask.resize(max_tokens, 0);
      const Index m = e.input.images.rows();
      Matrix images = Matrix::Zero(max_images, e.input.images.cols());
      images.topRows(m) = e.input.images;
      e.input.images = std::move(images);
      e.input.image_mask.resize(static_cast<std::size_t>(max_images), 0);
      pad_to(e.teacher.summary, max_summary);
      pad_to(e.summary_target, max_summary);
      e.teacher.descriptions.resize(static_cast<std::size_t>(max_images));
      e.description_targets.resize(static_cast<std::size_t>(max_images));
      for (Index k = 0; k < m; ++k) {
        pad_to(e.teacher.descriptions[static_cast<std::size_t>(k)], max_desc);
        pad_to(e.description_targets[static_cast<std::size_t>(k)], max_desc);
      }
      b.items.push_back(std::move(e));
    }
    out.push_back(std::move(b));
  }
  return out;
}

// ---- synthetic corpus ------------------------------------------------------

namespace {

struct Topic {
  const char* subject;
  const char* partner;
  const char* attribute;
  const char* action;
  const char* item;
};

constexpr Topic kTopics[] = {
    {"chef", "mayor", "smiling", "slices", "bread"},
    {"pilot", "crew", "tired", "steers", "plane"},
    {"farmer", "council", "proud", "harvests", "wheat"},
    {"singer", "band", "nervous", "grips", "microphone"},
    {"doctor", "patient", "busy", "checks", "chart"},
    {"painter", "gallery", "quiet", "mixes", "colors"},
    {"sailor", "captain", "soaked", "ties", "rope"},
    {"teacher", "principal", "patient", "reads", "book"},
    {"miner", "union", "dusty", "lifts", "lamp"},
    {"baker", "customer", "cheerful", "kneads", "dough"},
    {"dancer", "director", "graceful", "twirls", "ribbon"},
    {"judge", "jury", "stern", "raises", "gavel"},
    {"poet", "publisher", "dreamy", "writes", "verse"},
    {"guard", "minister", "alert", "watches", "gate"},
    {"nurse", "surgeon", "calm", "carries", "tray"},
    {"coach", "squad", "loud", "blows", "whistle"},
};

constexpr const char* kCities[] = {"paris", "lima", "oslo", "cairo", "tokyo", "dublin",
                                   "quito", "hanoi", "madrid", "nairobi", "seoul", "vienna"};
constexpr const char* kCrowds[] = {"fans", "workers", "students", "neighbors", "tourists", "children", "voters", "guests"};
constexpr const char* kWeather[] = {"sunny", "rainy", "windy", "cold", "humid", "foggy"};
constexpr const char* kRoads[] = {"north", "south", "river", "harbor", "market"};
constexpr const char* kTraffic[] = {"slow", "heavy", "light", "blocked"};

template <class T, std::size_t N>
const T& pick(const T (&arr)[N], Rng& rng) {
  return arr[rng.below(N)];
}

std::string mention(int topic, Rng& rng) {
  const Topic& t = kTopics[topic];
  switch (rng.below(3)) {
    case 0: return std::string("a ") + t.subject + " was also seen nearby .";
    case 1: return std::string("some say the ") + t.item + " belongs to a " + t.subject + " .";
    default: return std::string("one ") + t.attribute + " " + t.subject + " stayed home .";
  }
}

std::string distractor(Rng& rng) {
  if (rng.below(2) == 0) return std::string("the weather was ") + pick(kWeather, rng) + " all day .";
  return std::string("traffic on the ") + pick(kRoads, rng) + " road was " + pick(kTraffic, rng) + " .";
}

}  // namespace

int synth_topic_count() { return static_cast<int>(std::size(kTopics)); }

std::vector<std::string> synth_story(int topic, std::string_view city, std::string_view crowd) {
  const Topic& t = kTopics[topic];
  const std::string s = t.subject;
  const std::string p = t.partner;
  return {s + " arrives in " + std::string(city) + " ,", s + " meets the " + p + " ,",
          "the " + p + " praises " + s + " .", std::string(crowd) + " cheer for " + s + " ."};
}

std::string synth_description(int topic) {
  const Topic& t = kTopics[topic];
  return std::string(t.attribute) + " " + t.subject + " " + t.action + " " + t.item + " .";
}

Vector synth_topic_prototype(int topic, const ToyBackend& backend) {
  const Vector v = backend.segment_concept(synth_description(topic));
  return v / v.norm();
}

Corpus synth_corpus(const SynthOptions& o, const ToyBackend& backend) {
  if (o.n_articles < 0) throw ConfigError("synth: n_articles must be >= 0");
  if (o.images_per_article < 1 || o.n_topics < o.images_per_article) {
    throw ConfigError("synth: need n_topics >= images_per_article >= 1");
  }
  if (o.n_topics > synth_topic_count()) {
    throw ConfigError("synth: at most " + std::to_string(synth_topic_count()) + " topics available");
  }
  if (o.distractors < 0 || o.image_noise < 0) throw ConfigError("synth: negative distractors or noise");

  std::vector<Vector> prototypes;
  for (int t = 0; t < o.n_topics; ++t) prototypes.push_back(synth_topic_prototype(t, backend));

  Rng rng(derive_seed(o.seed, hash_string("synth-corpus")));
  Corpus corpus;
  for (int n = 0; n < o.n_articles; ++n) {
    std::vector<int> topics(static_cast<std::size_t>(o.n_topics));
    for (int t = 0; t < o.n_topics; ++t) topics[static_cast<std::size_t>(t)] = t;
    rng.shuffle(topics);
    topics.resize(static_cast<std::size_t>(o.images_per_article));
    const int gold = topics[0];

    const std::string city = pick(kCities, rng);
    const std::string crowd = pick(kCrowds, rng);
    const auto story = synth_story(gold, city, crowd);

    std::vector<std::string> blocks{text::join(story, " ")};
    for (std::size_t k = 1; k < topics.size(); ++k) {
      const std::size_t count = 1 + rng.below(2);
      for (std::size_t c = 0; c < count; ++c) blocks.push_back(mention(topics[k], rng));
    }
    for (int d = 0; d < o.distractors; ++d) blocks.push_back(distractor(rng));
    rng.shuffle(blocks);

    rng.shuffle(topics);
    Article a;
    a.id = o.id_prefix + "-" + std::to_string(n);
    a.title = text::join(story, " ");
    a.body = text::join(blocks, " ");
    a.target_summary = story[0] + " " + story[1] + " " + story[2];
    for (std::size_t k = 0; k < topics.size(); ++k) {
      const int t = topics[k];
      if (t == gold) a.relevant_image_index = static_cast<int>(k);
      std::vector<double> f(static_cast<std::size_t>(prototypes[0].size()));
      for (std::size_t d = 0; d < f.size(); ++d) {
        f[d] = prototypes[static_cast<std::size_t>(t)](static_cast<Index>(d)) + o.image_noise * rng.normal();
      }
      a.images.push_back(std::move(f));
      a.captions.push_back(std::string("image of ") + kTopics[t].subject);
      a.target_descriptions.push_back(synth_description(t));
    }
    a.validate();
    corpus.articles.push_back(std::move(a));
  }
  return corpus;
}

}  // namespace cisum
