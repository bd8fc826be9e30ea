#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "cisum/config.hpp"
#include "cisum/errors.hpp"

namespace {

namespace fs = std::filesystem;
using cisum::ConfigError;
using cisum::Settings;

TEST(Settings, ProfileDefaults) {
  const auto desk = Settings::defaults("desk");
  const auto full = Settings::defaults("full");
  EXPECT_EQ(desk.get("profile"), "desk");
  EXPECT_EQ(desk.get_int("epochs"), 15);
  EXPECT_EQ(full.get_int("max_vocab"), 21128);
  EXPECT_DOUBLE_EQ(full.get_double("learning_rate"), 2e-4);
  EXPECT_EQ(full.model_config().d_h, cisum::ModelConfig::full().d_h);
  EXPECT_EQ(desk.model_config().d_h, cisum::ModelConfig::desk().d_h);
  EXPECT_THROW(Settings::defaults("huge"), ConfigError);
}

TEST(Settings, Assignments) {
  EXPECT_EQ(Settings::parse_assignment(" epochs = 3 "), (std::pair<std::string, std::string>{"epochs", "3"}));
  EXPECT_EQ(Settings::parse_assignment("separator=\" \"").second, " ");
  EXPECT_EQ(Settings::parse_assignment("a=b=c").second, "b=c");
  EXPECT_THROW(Settings::parse_assignment("epochs"), ConfigError);
  EXPECT_THROW(Settings::parse_assignment(" = 3"), ConfigError);
}

TEST(Settings, FileParsing) {
  const auto dir = fs::temp_directory_path() / "cisum_config_file";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "c.conf");
    f << "# comment\n\nepochs = 4  # trailing\nseparator = \" # \"\n";
  }
  const auto m = Settings::parse_file(dir / "c.conf");
  EXPECT_EQ(m.size(), 2u);
  EXPECT_EQ(m.at("epochs"), "4");
  EXPECT_EQ(m.at("separator"), " # ");

  std::ofstream(dir / "bad.conf") << "epochs = 1\nnonsense\n";
  try {
    Settings::parse_file(dir / "bad.conf");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  EXPECT_THROW(Settings::parse_file(dir / "missing.conf"), ConfigError);
  fs::remove_all(dir);
}

TEST(Settings, UnknownKeysAndBadValues) {
  auto s = Settings::defaults("desk");
  EXPECT_THROW(s.set("epoch", "3"), ConfigError);
  EXPECT_THROW(s.get("epoch"), ConfigError);
  s.set("epochs", "3x");
  EXPECT_THROW(s.get_int("epochs"), ConfigError);
  s.set("tau", "0.5.1");
  EXPECT_THROW(s.get_double("tau"), ConfigError);
  s.set("seed", "-1");
  EXPECT_THROW(s.get_u64("seed"), ConfigError);
  s.set("tokenizer", "true");
  EXPECT_TRUE(s.get_bool("tokenizer"));
  s.set("tokenizer", "yes");
  EXPECT_THROW(s.get_bool("tokenizer"), ConfigError);
}

TEST(Settings, TrainConfig) {
  auto s = Settings::defaults("desk");
  s.set("loss_normalization", "sum");
  s.set("seed", "99");
  s.set("batch_size", "3");
  const auto t = s.train_config();
  EXPECT_EQ(t.loss_normalization, cisum::LossNormalization::kTokenSum);
  EXPECT_EQ(t.seed, 99u);
  EXPECT_EQ(t.batch_size, 3);
  EXPECT_EQ(s.model_config().seed, 99u);
  s.set("loss_normalization", "median");
  EXPECT_THROW(s.train_config(), ConfigError);
}

TEST(Settings, DumpIsSortedAndReparses) {
  auto s = Settings::defaults("desk");
  s.set("separator", " ");
  const std::string d = s.dump();
  std::istringstream in(d);
  std::string line, prev;
  while (std::getline(in, line)) {
    const auto [k, v] = Settings::parse_assignment(line);
    EXPECT_LT(prev, k);
    EXPECT_EQ(v, s.get(k));
    prev = k;
  }
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
  auto c = cisum::ModelConfig::desk();
  c.vocab_size = 77;
  c.dwa_temperature = 3.5;
  const nlohmann::json j = c;
  const auto back = j.get<cisum::ModelConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_NO_THROW(c.validate());

  auto odd_heads = c;
  odd_heads.n_heads = 3;
  odd_heads.d_e = 8;
  EXPECT_THROW(odd_heads.validate(), ConfigError);
  auto no_images = c;
  no_images.max_images = 0;
  EXPECT_THROW(no_images.validate(), ConfigError);
  auto cold = c;
  cold.dwa_temperature = 0;
  EXPECT_THROW(cold.validate(), ConfigError);

  cisum::TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

}  // namespace
