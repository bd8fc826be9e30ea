#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace cisum {

struct ModelConfig {
  int d_h = 64;   // hidden size
  int d_e = 64;   // total attention width, split evenly over heads
  int d_v = 16;   // raw image feature size
  int d_ff = 128; // feed-forward inner width
  int n_heads = 4;
  int text_layers = 2;         // self-attention blocks over text
  int visual_layers = 1;       // self-attention blocks over images
  int fusion_layers = 1;       // noisy-filter cross-modal layers
  int summary_layers = 2;      // summary decoder blocks
  int description_layers = 2;  // description decoder blocks
  int vocab_size = 0;          // 0 = take from the corpus vocabulary
  int max_text_len = 128;
  int max_images = 8;
  int max_summary_len = 64;
  int max_description_len = 32;
  double dwa_temperature = 2.0;
  std::uint64_t seed = 1234;

  // Throws ConfigError.
  void validate() const;
  int max_positions() const;

  static ModelConfig desk();
  static ModelConfig full();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class LossNormalization { kTokenMean, kTokenSum };

struct TrainConfig {
  double learning_rate = 1e-3;
  double lr_decay = 0.9;
  int lr_decay_every = 10;
  int epochs = 200;
  int batch_size = 8;
  double clip_norm = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossNormalization loss_normalization = LossNormalization::kTokenMean;
  std::uint64_t seed = 1234;

  void validate() const;
};

// Flat key = value settings: profile defaults, then config file, then
// --set overrides, then dedicated flags. Unknown keys are rejected.
class Settings {
 public:
  // "desk" or "full".
  static Settings defaults(std::string_view profile);

  // Parses "key = value" lines; '#' starts a comment.
  static std::map<std::string, std::string> parse_file(const std::filesystem::path& path);
  static std::pair<std::string, std::string> parse_assignment(std::string_view text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;

  // Sorted "key = value" lines.
  std::string dump() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace cisum
