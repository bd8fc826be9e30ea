#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "cisum/data.hpp"
#include "cisum/errors.hpp"
#include "cisum/training.hpp"
#include "support/fixtures.hpp"

namespace {

namespace fs = std::filesystem;
using cisum::Vocab;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("cisum_data_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST(Vocab, FrequencyRankWithLexicographicTies) {
  const Vocab v = Vocab::build({{"b", "a", "b"}, {"c", "a", "b", "d"}}, 7);
  const std::vector<std::string> expected{"<pad>", "<bos>", "<eos>", "<unk>", "b", "a", "c"};
  EXPECT_EQ(v.tokens(), expected);
  EXPECT_EQ(v.id("d"), cisum::model::kUnk);
  EXPECT_EQ(v.id("b"), 4);
  EXPECT_THROW(Vocab::build({}, 3), cisum::ConfigError);
}

TEST(Vocab, EncodeDecode) {
  const Vocab v = Vocab::from_tokens({"<pad>", "<bos>", "<eos>", "<unk>", "x", "y"});
  EXPECT_EQ(v.encode({"y", "zz", "x"}), (std::vector<int>{5, 3, 4}));
  EXPECT_EQ(v.decode({1, 4, 0, 5, 2, 4}), (std::vector<std::string>{"x", "y"}));
  EXPECT_THROW(v.token(6), cisum::ContractViolation);
  EXPECT_THROW(Vocab::from_tokens({"x", "<bos>", "<eos>", "<unk>"}), cisum::ConfigError);
  EXPECT_THROW(Vocab::from_tokens({"<pad>", "<bos>", "<eos>", "<unk>", "x", "x"}), cisum::ConfigError);
  EXPECT_EQ(Vocab().size(), 4);
}

TEST(Tokenizer, WhitespaceAndCharacter) {
  const cisum::Tokenizer ws;
  EXPECT_EQ(ws.tokenize("  a  b\tc\n"), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(ws.detokenize({"a", "b"}), "a b");
  const auto ch = cisum::Tokenizer::from_name("character");
  EXPECT_EQ(ch.tokenize("你好a"), (std::vector<std::string>{"你", "好", "a"}));
  EXPECT_EQ(ch.detokenize({"你", "好"}), "你好");
  EXPECT_THROW(cisum::Tokenizer::from_name("bpe"), cisum::ConfigError);
}

TEST(Batching, SizesAndCoverage) {
  const auto order = cisum::batch_order(10, 4, 3);
  ASSERT_EQ(order.size(), 3u);
  EXPECT_EQ(order[0].size(), 4u);
  EXPECT_EQ(order[1].size(), 4u);
  EXPECT_EQ(order[2].size(), 2u);
  std::set<std::size_t> seen;
  for (const auto& b : order) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(order, cisum::batch_order(10, 4, 3));
  EXPECT_NE(order, cisum::batch_order(10, 4, 4));
  EXPECT_THROW(cisum::batch_order(10, 0, 3), cisum::ConfigError);
}

cisum::ModelConfig small_config() {
  cisum::ModelConfig c;
  c.d_h = 16;
  c.d_e = 16;
  c.d_ff = 32;
  c.n_heads = 2;
  c.text_layers = c.visual_layers = c.fusion_layers = c.summary_layers = c.description_layers = 1;
  return c;
}

TEST(Batching, PaddingIsMaskedAndLossNeutral) {
  cisum::ModelConfig config = small_config();
  auto data = fixtures::synth_data(6, 0, 9, config);
  // Vary lengths and image counts inside the batch.
  data.encoded[0].input.tokens.resize(5);
  data.encoded[0].input.text_mask.resize(5);
  auto& e1 = data.encoded[1];
  e1.input.images = cisum::Matrix(e1.input.images.topRows(2));
  e1.input.image_mask.resize(2);
  e1.teacher.descriptions.resize(2);
  e1.description_targets.resize(2);
  e1.gold_image = 0;

  const auto batches = cisum::make_batches(data.encoded, 6, 1);
  ASSERT_EQ(batches.size(), 1u);
  const auto& b = batches[0];
  cisum::model::CisumModel model(data.config);
  for (std::size_t k = 0; k < b.items.size(); ++k) {
    const auto& padded = b.items[k];
    const auto& orig = data.encoded[b.indices[k]];
    EXPECT_EQ(padded.input.tokens.size(), b.items[0].input.tokens.size());
    EXPECT_EQ(padded.input.images.rows(), 4);
    EXPECT_EQ(cisum::count_valid(padded.input.text_mask), static_cast<cisum::Index>(orig.input.tokens.size()));
    EXPECT_EQ(cisum::count_valid(padded.input.image_mask), orig.input.images.rows());
    for (std::size_t t = orig.input.tokens.size(); t < padded.input.tokens.size(); ++t) {
      EXPECT_EQ(padded.input.tokens[t], cisum::model::kPad);
    }
    const auto a = cisum::training::task_losses(model.forward(orig.input, &orig.teacher), cisum::training::targets_of(orig));
    const auto p =
        cisum::training::task_losses(model.forward(padded.input, &padded.teacher), cisum::training::targets_of(padded));
    EXPECT_NEAR(a.l_text, p.l_text, 1e-10);
    EXPECT_NEAR(a.l_visual, p.l_visual, 1e-10);
    EXPECT_NEAR(a.l_image, p.l_image, 1e-10);
  }
}

TEST(Encoding, PrefixesTargetsAndTruncation) {
  cisum::ModelConfig config = small_config();
  config.max_text_len = 10;
  config.max_summary_len = 5;
  auto data = fixtures::synth_data(3, 0, 12, config);
  for (const auto& e : data.encoded) {
    EXPECT_EQ(e.input.tokens.size(), 10u);
    EXPECT_EQ(e.teacher.summary.size(), 5u);
    EXPECT_EQ(e.summary_target.size(), 5u);
    EXPECT_EQ(e.teacher.summary[0], cisum::model::kBos);
    EXPECT_EQ(e.summary_target.back(), cisum::model::kEos);
    EXPECT_TRUE(std::equal(e.teacher.summary.begin() + 1, e.teacher.summary.end(), e.summary_target.begin()));
    for (std::size_t m = 0; m < e.teacher.descriptions.size(); ++m) {
      EXPECT_EQ(e.teacher.descriptions[m].size(), e.description_targets[m].size());
    }
  }
  config.max_images = 2;
  EXPECT_THROW(cisum::encode_article(data.train.articles[0], data.vocab, data.tokenizer, config),
               cisum::ContractViolation);
}

TEST_F(TempDir, CorpusRoundTripIsByteIdentical) {
  auto data = fixtures::synth_data(5, 0, 13);
  cisum::save_corpus(data.train, dir_ / "a.jsonl");
  const auto loaded = cisum::load_corpus(dir_ / "a.jsonl");
  cisum::save_corpus(loaded, dir_ / "b.jsonl");
  EXPECT_EQ(slurp(dir_ / "a.jsonl"), slurp(dir_ / "b.jsonl"));
  ASSERT_EQ(loaded.articles.size(), 5u);
  EXPECT_EQ(loaded.articles[2].images, data.train.articles[2].images);
  EXPECT_EQ(loaded.articles[2].target_summary, data.train.articles[2].target_summary);
}

TEST_F(TempDir, ErrorsNameLineAndField) {
  const auto a = cisum::article_to_json(fixtures::synth_data(1, 0, 14).train.articles[0]);
  auto bad_index = a;
  bad_index["relevant_image_index"] = 9;
  auto missing = a;
  missing.erase("captions");
  auto write = [&](const std::string& second) {
    std::ofstream(dir_ / "c.jsonl") << a.dump() << "\n\n" << second << "\n";
  };
  auto message = [&]() -> std::string {
    try {
      cisum::load_corpus(dir_ / "c.jsonl");
    } catch (const cisum::ParseError& e) {
      return e.what();
    }
    return "no error";
  };
  write(bad_index.dump());
  EXPECT_NE(message().find("line 3: relevant_image_index"), std::string::npos) << message();
  write(missing.dump());
  EXPECT_NE(message().find("line 3: captions missing"), std::string::npos) << message();
  write("{not json");
  EXPECT_NE(message().find("line 3: invalid JSON"), std::string::npos) << message();
  EXPECT_THROW(cisum::load_corpus(dir_ / "absent.jsonl"), cisum::ConfigError);
}

TEST_F(TempDir, EmptyCorpusLoads) {
  std::ofstream(dir_ / "e.jsonl") << "\n";
  EXPECT_TRUE(cisum::load_corpus(dir_ / "e.jsonl").articles.empty());
}

TEST(Article, ValidateRejectsInconsistentRecords) {
  auto a = fixtures::synth_data(1, 0, 15).train.articles[0];
  a.validate();
  auto b = a;
  b.captions.pop_back();
  EXPECT_THROW(b.validate(), cisum::ParseError);
  b = a;
  b.images[1].push_back(0.0);
  EXPECT_THROW(b.validate(), cisum::ParseError);
  b = a;
  b.body = "   ";
  EXPECT_THROW(b.validate(), cisum::ParseError);
}

TEST(Synth, StructureAndDeterminism) {
  const auto backend = fixtures::synth_backend(cisum::ModelConfig::desk());
  cisum::SynthOptions o;
  o.n_articles = 30;
  const auto a = cisum::synth_corpus(o, backend);
  const auto b = cisum::synth_corpus(o, backend);
  o.seed = 2;
  const auto c = cisum::synth_corpus(o, backend);
  ASSERT_EQ(a.articles.size(), 30u);
  EXPECT_EQ(cisum::article_to_json(a.articles[7]), cisum::article_to_json(b.articles[7]));
  EXPECT_NE(cisum::article_to_json(a.articles[7]), cisum::article_to_json(c.articles[7]));
  for (const auto& art : a.articles) {
    EXPECT_EQ(art.images.size(), 4u);
    EXPECT_NE(art.body.find(art.title), std::string::npos);
    EXPECT_EQ(art.title.rfind(art.target_summary, 0), 0u);
    const std::string gold_desc = art.target_descriptions[static_cast<std::size_t>(art.relevant_image_index)];
    const std::string subject = art.title.substr(0, art.title.find(' '));
    EXPECT_NE(gold_desc.find(" " + subject + " "), std::string::npos) << gold_desc << " / " << art.title;
  }
  o.n_topics = 3;
  EXPECT_THROW(cisum::synth_corpus(o, backend), cisum::ConfigError);
}

TEST(Synth, ImagesAreNearestToTheirTopicPrototype) {
  const auto backend = fixtures::synth_backend(cisum::ModelConfig::desk());
  cisum::SynthOptions o;
  o.n_articles = 200;
  o.n_topics = cisum::synth_topic_count();
  const auto corpus = cisum::synth_corpus(o, backend);
  std::vector<cisum::Vector> protos;
  for (int t = 0; t < o.n_topics; ++t) protos.push_back(cisum::synth_topic_prototype(t, backend));
  int hit = 0, total = 0;
  for (const auto& art : corpus.articles) {
    for (std::size_t m = 0; m < art.images.size(); ++m) {
      const cisum::Vector f = Eigen::Map<const cisum::Vector>(art.images[m].data(), static_cast<cisum::Index>(art.images[m].size()));
      int best = 0;
      for (int t = 1; t < o.n_topics; ++t) {
        if ((f - protos[static_cast<std::size_t>(t)]).norm() < (f - protos[static_cast<std::size_t>(best)]).norm()) best = t;
      }
      hit += cisum::synth_description(best) == art.target_descriptions[m];
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(hit) / total, 0.99);
}

}  // namespace
