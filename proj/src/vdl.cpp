#include "cisum/vdl.hpp"

#include <cmath>
#include <fstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "cisum/checkpoint.hpp"
#include "cisum/errors.hpp"
#include "cisum/rng.hpp"
#include "cisum/text.hpp"
#include "cisum/training.hpp"

namespace cisum::vdl {

using model::Tape;
using model::Var;

std::vector<std::string> split_short_sentences(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t d = text::delimiter_at(s, i);
    if (d > 0) {
      i += d;
      out.emplace_back(s.substr(start, i - start));
      start = i;
    } else {
      i += std::min(text::utf8_length(static_cast<unsigned char>(s[i])), s.size() - i);
    }
  }
  if (start < s.size()) out.emplace_back(s.substr(start));
  return out;
}

std::vector<std::string> sentence_list(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& piece : split_short_sentences(s)) {
    std::string t = text::trim(piece);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

// ---- samples ---------------------------------------------------------------

nlohmann::ordered_json to_json(const CoherenceSample& s) {
  nlohmann::ordered_json j;
  j["a"] = s.a;
  j["b"] = s.b;
  j["label"] = s.label;
  return j;
}

CoherenceSample sample_from_json(const nlohmann::json& j, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  CoherenceSample s;
  for (const char* key : {"a", "b", "label"}) {
    if (!j.contains(key)) throw ParseError(where + key + " missing");
  }
  try {
    s.a = j.at("a").get<std::string>();
    s.b = j.at("b").get<std::string>();
    s.label = j.at("label").get<int>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(where + "a/b must be strings and label an integer");
  }
  if (s.label != 0 && s.label != 1) throw ParseError(where + "label must be 0 or 1");
  if (text::trim(s.a).empty() || text::trim(s.b).empty()) throw ParseError(where + "empty sentence");
  return s;
}

void save_samples(const std::vector<CoherenceSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

std::vector<CoherenceSample> load_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<CoherenceSample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("line " + std::to_string(n) + ": invalid JSON (" + e.what() + ")");
    }
    out.push_back(sample_from_json(j, n));
  }
  return out;
}

std::vector<CoherenceSample> scsc_dataset(const std::vector<std::string>& titles, std::size_t n_samples,
                                          std::uint64_t seed) {
  std::vector<std::vector<std::string>> sents;
  for (const auto& t : titles) {
    auto s = sentence_list(t);
    if (!s.empty()) sents.push_back(std::move(s));
  }
  std::vector<std::size_t> multi;
  for (std::size_t t = 0; t < sents.size(); ++t) {
    if (sents[t].size() >= 2) multi.push_back(t);
  }
  if (multi.size() < 2) {
    throw ConfigError("coherence data needs at least two titles that split into two or more short sentences");
  }

  std::vector<std::pair<std::size_t, std::size_t>> positives;
  std::unordered_set<std::string> positive_keys;
  auto key = [](const std::string& a, const std::string& b) { return a + '\x1f' + b; };
  for (std::size_t t : multi) {
    for (std::size_t i = 0; i + 1 < sents[t].size(); ++i) {
      positives.emplace_back(t, i);
      positive_keys.insert(key(sents[t][i], sents[t][i + 1]));
    }
  }

  Rng rng(derive_seed(seed, hash_string("scsc-dataset")));
  const std::size_t n_pos = (n_samples + 1) / 2;
  const std::size_t n_neg = n_samples / 2;
  std::vector<CoherenceSample> out;
  out.reserve(n_samples);
  for (std::size_t k = 0; k < n_pos; ++k) {
    const auto [t, i] = positives[rng.below(positives.size())];
    out.push_back({sents[t][i], sents[t][i + 1], 1});
  }

  auto same_title = [&](CoherenceSample& s) {
    const auto& v = sents[multi[rng.below(multi.size())]];
    const std::size_t i = rng.below(v.size());
    const std::size_t j = rng.below(v.size());
    if (i == j || j == i + 1) return false;
    s = {v[i], v[j], 0};
    return true;
  };
  auto cross = [&](CoherenceSample& s) {
    const std::size_t t1 = rng.below(sents.size());
    const std::size_t t2 = rng.below(sents.size());
    if (t1 == t2) return false;
    s = {sents[t1][rng.below(sents[t1].size())], sents[t2][rng.below(sents[t2].size())], 0};
    return true;
  };
  for (std::size_t k = 0; k < n_neg; ++k) {
    const bool from_same = rng.below(2) == 0;
    CoherenceSample s;
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      ok = (from_same && attempt < 100) ? same_title(s) : cross(s);
      if (ok && (s.a == s.b || positive_keys.count(key(s.a, s.b)))) ok = false;
    }
    if (!ok) throw ConfigError("coherence data: could not draw a negative pair distinct from every positive");
    out.push_back(std::move(s));
  }
  rng.shuffle(out);
  return out;
}

// ---- classifier ------------------------------------------------------------

nlohmann::json to_json(const ScscConfig& c) {
  return {{"d_model", c.d_model}, {"n_heads", c.n_heads}, {"layers", c.layers},
          {"d_ff", c.d_ff},       {"max_len", c.max_len}, {"epochs", c.epochs},
          {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"seed", c.seed}};
}

ScscConfig scsc_config_from_json(const nlohmann::json& j) {
  ScscConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

Vocab scsc_vocab(const std::vector<CoherenceSample>& samples, const Tokenizer& tokenizer) {
  std::vector<std::vector<std::string>> texts;
  texts.reserve(samples.size() * 2);
  for (const auto& s : samples) {
    texts.push_back(tokenizer.tokenize(s.a));
    texts.push_back(tokenizer.tokenize(s.b));
  }
  return Vocab::build(texts, 1 << 20);
}

ScscModel::ScscModel(ScscConfig config, Vocab vocab, Tokenizer tokenizer)
    : config_(config), vocab_(std::move(vocab)), tokenizer_(tokenizer) {
  if (config_.d_model < 1 || config_.n_heads < 1 || config_.d_model % config_.n_heads != 0 ||
      config_.layers < 1 || config_.d_ff < 1 || config_.max_len < 5 || config_.epochs < 0 ||
      config_.batch_size < 1 || !(config_.learning_rate >= 0)) {
    throw ConfigError("invalid coherence classifier configuration");
  }
  model::ParameterFactory f(params_, config_.d_model, config_.d_model, config_.n_heads, config_.d_ff, config_.seed);
  tokens_ = f.weight("scsc.tokens", vocab_.size(), config_.d_model);
  positions_ = f.weight("scsc.positions", config_.max_len, config_.d_model);
  segments_ = f.weight("scsc.segments", 2, config_.d_model);
  for (int i = 0; i < config_.layers; ++i) layers_.push_back(f.trm("scsc.layer." + std::to_string(i)));
  head_ = f.linear("scsc.head", config_.d_model, 1);
}

std::vector<int> ScscModel::encode_pair(std::string_view a, std::string_view b, Mask* segment_b) const {
  const auto budget = static_cast<std::size_t>((config_.max_len - 3) / 2);
  auto ids_a = vocab_.encode(tokenizer_.tokenize(a));
  auto ids_b = vocab_.encode(tokenizer_.tokenize(b));
  if (ids_a.size() > budget) ids_a.resize(budget);
  if (ids_b.size() > budget) ids_b.resize(budget);
  std::vector<int> ids{model::kBos};
  ids.insert(ids.end(), ids_a.begin(), ids_a.end());
  ids.push_back(model::kEos);
  const std::size_t split = ids.size();
  ids.insert(ids.end(), ids_b.begin(), ids_b.end());
  ids.push_back(model::kEos);
  if (segment_b) {
    segment_b->assign(ids.size(), 0);
    for (std::size_t i = split; i < ids.size(); ++i) (*segment_b)[i] = 1;
  }
  return ids;
}

Var ScscModel::logit(Tape& tape, std::string_view a, std::string_view b) const {
  Mask seg;
  const std::vector<int> ids = encode_pair(a, b, &seg);
  const std::vector<int> seg_ids(seg.begin(), seg.end());
  const auto n = static_cast<Index>(ids.size());
  Var x = ag::add(ag::gather_rows(tape.param(*tokens_), ids),
                  ag::add(ag::slice_rows(tape.param(*positions_), 0, n), ag::gather_rows(tape.param(*segments_), seg_ids)));
  const Mask mask = full_mask(n);
  x = model::trm_stack(tape, x, mask, layers_, config_.layers);
  return model::linear(tape, head_, ag::masked_mean_rows(x, mask));
}

double ScscModel::score(std::string_view a, std::string_view b) const {
  if (!trained_) throw ContractViolation("coherence classifier has not been trained");
  Tape tape;
  const double z = logit(tape, a, b).value()(0, 0);
  return 1.0 / (1.0 + std::exp(-z));
}

double ScscModel::accuracy(const std::vector<CoherenceSample>& samples) const {
  if (samples.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& s : samples) hit += (score(s.a, s.b) >= 0.5 ? 1 : 0) == s.label;
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

std::vector<double> ScscModel::train(const std::vector<CoherenceSample>& samples,
                                     const std::function<void(int, double)>& on_epoch) {
  if (samples.empty()) throw ContractViolation("coherence classifier: no training samples");
  TrainConfig tc;
  tc.learning_rate = config_.learning_rate;
  training::Adam adam(tc);
  std::vector<double> losses;
  const Matrix zero = Matrix::Zero(1, 1);
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    double total = 0;
    for (const auto& batch : batch_order(samples.size(), config_.batch_size,
                                         derive_seed(config_.seed, static_cast<std::uint64_t>(epoch)))) {
      params_.zero_grad();
      for (std::size_t i : batch) {
        const auto& s = samples[i];
        Tape tape;
        const Var z = logit(tape, s.a, s.b);
        const std::vector<Var> pair{tape.constant(zero), z};
        const std::vector<int> label{s.label};
        const Var loss = ag::scale(ag::pick(ag::masked_log_softmax_rows(ag::concat_cols(pair), {}), label), -1.0);
        const double v = loss.value()(0, 0);
        if (!std::isfinite(v)) throw NumericError("coherence classifier diverged in epoch " + std::to_string(epoch));
        total += v;
        tape.backward(loss, 1.0 / static_cast<double>(batch.size()));
      }
      training::clip_gradients(params_, tc.clip_norm);
      adam.step(params_, config_.learning_rate);
    }
    const double mean = total / static_cast<double>(samples.size());
    spdlog::info("coherence epoch {} loss {:.4f}", epoch, mean);
    losses.push_back(mean);
    trained_ = true;
    if (on_epoch) on_epoch(epoch, mean);
  }
  return losses;
}

void ScscModel::save(const std::filesystem::path& path) const {
  nlohmann::json meta;
  meta["kind"] = "scsc";
  meta["config"] = to_json(config_);
  meta["vocab"] = vocab_.tokens();
  meta["tokenizer"] = tokenizer_.name();
  meta["trained"] = trained_;
  write_checkpoint(path, meta, params_.all());
}

std::unique_ptr<ScscModel> ScscModel::load(const std::filesystem::path& path) {
  const CheckpointData data = read_checkpoint(path);
  if (data.meta.value("kind", "") != "scsc") throw ConfigError(path.string() + " is not a coherence classifier checkpoint");
  std::unique_ptr<ScscModel> m;
  try {
    m = std::make_unique<ScscModel>(scsc_config_from_json(data.meta.at("config")),
                                    Vocab::from_tokens(data.meta.at("vocab").get<std::vector<std::string>>()),
                                    Tokenizer::from_name(data.meta.at("tokenizer").get<std::string>()));
    m->trained_ = data.meta.at("trained").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("coherence checkpoint metadata: ") + e.what());
  }
  assign_parameters(m->params_.all(), data);
  return m;
}

// ---- insertion -------------------------------------------------------------

InsertionPlan plan_insertion(std::string_view summary, std::string_view description, const CoherenceScorer& scorer) {
  const std::string desc = text::trim(description);
  if (desc.empty()) throw ContractViolation("insert_description: empty description");
  InsertionPlan plan;
  plan.sentences = sentence_list(summary);
  const std::size_t n = plan.sentences.size();
  for (std::size_t g = 0; g <= n; ++g) {
    double sum = 0;
    int count = 0;
    if (g > 0) {
      sum += scorer.score(plan.sentences[g - 1], desc);
      ++count;
    }
    if (g < n) {
      sum += scorer.score(desc, plan.sentences[g]);
      ++count;
    }
    plan.scores.push_back(count ? sum / count : 0.0);
  }
  plan.position = 0;
  for (std::size_t g = 1; g < plan.scores.size(); ++g) {
    if (plan.scores[g] > plan.scores[static_cast<std::size_t>(plan.position)]) plan.position = static_cast<int>(g);
  }
  return plan;
}

std::string insert_description(std::string_view summary, std::string_view description, const CoherenceScorer& scorer,
                               std::string_view separator, InsertionPlan* plan_out) {
  InsertionPlan plan = plan_insertion(summary, description, scorer);
  std::string out;
  if (plan.sentences.empty()) {
    out = std::string(description);
  } else if (plan.position == 0) {
    out = std::string(description) + std::string(separator) + std::string(summary);
  } else {
    // Byte offset just past the content of the sentence before the gap.
    std::size_t offset = 0;
    std::size_t seen = 0;
    for (const auto& piece : split_short_sentences(summary)) {
      const auto last = piece.find_last_not_of(" \t\r\n");
      if (last != std::string::npos && ++seen == static_cast<std::size_t>(plan.position)) {
        offset += last + 1;
        break;
      }
      offset += piece.size();
    }
    out = std::string(summary.substr(0, offset)) + std::string(separator) + std::string(description) +
          std::string(summary.substr(offset));
  }
  if (plan_out) *plan_out = std::move(plan);
  return out;
}

}  // namespace cisum::vdl
