#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cisum/backends.hpp"
#include "cisum/config.hpp"
#include "cisum/data.hpp"
#include "cisum/model.hpp"
#include "cisum/rng.hpp"

namespace fixtures {

inline cisum::ModelConfig tiny_config(int n_heads = 2) {
  cisum::ModelConfig c;
  c.d_h = 8;
  c.d_e = 8;
  c.d_v = 4;
  c.d_ff = 16;
  c.n_heads = n_heads;
  c.text_layers = 1;
  c.visual_layers = 1;
  c.fusion_layers = 1;
  c.summary_layers = 1;
  c.description_layers = 1;
  c.vocab_size = 12;
  c.max_text_len = 8;
  c.max_images = 4;
  c.max_summary_len = 6;
  c.max_description_len = 6;
  c.seed = 5;
  return c;
}

// Moves every parameter off its initial value so zero biases and unit gains
// cannot hide a wiring mistake.
inline void randomize(cisum::model::ParameterSet& params, std::uint64_t seed, double scale = 0.4) {
  cisum::Rng rng(seed);
  for (auto& p : params.all()) {
    const bool gain = p.name.size() > 5 && p.name.compare(p.name.size() - 5, 5, ".gain") == 0;
    for (cisum::Index i = 0; i < p.value.size(); ++i) {
      p.value.data()[i] = (gain ? 1.0 : 0.0) + scale * rng.normal();
    }
  }
}

inline cisum::Matrix random_matrix(cisum::Index rows, cisum::Index cols, std::uint64_t seed, double scale = 1.0) {
  cisum::Rng rng(seed);
  cisum::Matrix m(rows, cols);
  for (cisum::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline std::vector<int> random_tokens(std::size_t n, int vocab, std::uint64_t seed) {
  cisum::Rng rng(seed);
  std::vector<int> t(n);
  for (int& v : t) v = 4 + static_cast<int>(rng.below(static_cast<std::size_t>(vocab - 4)));
  return t;
}

inline std::vector<int> random_prefix(std::size_t n, int vocab, std::uint64_t seed) {
  std::vector<int> p = random_tokens(n, vocab, seed);
  p[0] = cisum::model::kBos;
  return p;
}

// N = 5 text tokens, M = 2 images, prefixes of length 4 and 3.
struct TinyExample {
  cisum::model::ModelInput input;
  cisum::model::TeacherPrefixes teacher;
  std::vector<int> summary_target;
  std::vector<std::vector<int>> description_targets;
  int gold_image = 1;
};

inline TinyExample tiny_example(const cisum::ModelConfig& c, std::uint64_t seed) {
  TinyExample e;
  e.input.tokens = random_tokens(5, c.vocab_size, seed);
  e.input.images = random_matrix(2, c.d_v, seed + 1);
  e.teacher.summary = random_prefix(4, c.vocab_size, seed + 2);
  e.teacher.descriptions = {random_prefix(3, c.vocab_size, seed + 3), random_prefix(3, c.vocab_size, seed + 4)};
  auto shift = [](const std::vector<int>& prefix, std::uint64_t s, int vocab) {
    std::vector<int> t(prefix.begin() + 1, prefix.end());
    cisum::Rng rng(s);
    t.push_back(4 + static_cast<int>(rng.below(static_cast<std::size_t>(vocab - 4))));
    return t;
  };
  e.summary_target = shift(e.teacher.summary, seed + 5, c.vocab_size);
  for (std::size_t m = 0; m < 2; ++m) {
    e.description_targets.push_back(shift(e.teacher.descriptions[m], seed + 6 + m, c.vocab_size));
  }
  return e;
}

inline double max_abs(const cisum::Matrix& a, const cisum::Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

// Synthetic train/test corpora with a train-built vocabulary, encoded for
// `config` (whose vocab_size is filled in).
struct SynthData {
  cisum::ModelConfig config;
  cisum::Tokenizer tokenizer;
  cisum::Vocab vocab;
  cisum::Corpus train, test;
  std::vector<cisum::EncodedArticle> encoded;
};

inline cisum::ToyBackend synth_backend(const cisum::ModelConfig& c, int vocab_size = 4) {
  return cisum::ToyBackend({vocab_size, c.d_h, c.d_v, c.max_positions(), 32, 7});
}

inline SynthData synth_data(int n_train, int n_test, std::uint64_t seed,
                            cisum::ModelConfig config = cisum::ModelConfig::desk()) {
  SynthData d;
  const auto backend = synth_backend(config);
  cisum::SynthOptions o;
  o.n_articles = n_train;
  o.seed = seed;
  d.train = cisum::synth_corpus(o, backend);
  if (n_test > 0) {
    o.n_articles = n_test;
    o.seed = seed + 1000;
    o.id_prefix = "test";
    d.test = cisum::synth_corpus(o, backend);
    d.test.split = "test";
  }
  d.vocab = cisum::Vocab::build(d.train, d.tokenizer, 4096);
  config.vocab_size = d.vocab.size();
  d.config = config;
  for (const auto& a : d.train.articles) d.encoded.push_back(cisum::encode_article(a, d.vocab, d.tokenizer, config));
  return d;
}

}  // namespace fixtures
