#include "cisum/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cisum/errors.hpp"

namespace cisum {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1, got " + std::to_string(v));
  };
  positive(d_h, "d_h");
  positive(d_e, "d_e");
  positive(d_v, "d_v");
  positive(d_ff, "d_ff");
  positive(n_heads, "n_heads");
  positive(text_layers, "text_layers");
  positive(visual_layers, "visual_layers");
  positive(fusion_layers, "fusion_layers");
  positive(summary_layers, "summary_layers");
  positive(description_layers, "description_layers");
  positive(max_text_len, "max_text_len");
  positive(max_images, "max_images");
  positive(max_summary_len, "max_summary_len");
  positive(max_description_len, "max_description_len");
  if (d_h % n_heads != 0) throw ConfigError("d_h must be divisible by n_heads");
  if (d_e % n_heads != 0) throw ConfigError("d_e must be divisible by n_heads");
  if (vocab_size < 4) {
    throw ConfigError("vocab_size must be >= 4 (PAD/BOS/EOS/UNK reserved), got " +
                      std::to_string(vocab_size));
  }
  if (!(dwa_temperature > 0.0)) throw ConfigError("dwa_temperature must be > 0");
}

int ModelConfig::max_positions() const {
  return std::max({max_text_len, max_summary_len, max_description_len});
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.d_h = 768;
  c.d_e = 768;
  c.d_v = 2048;
  c.d_ff = 3072;
  c.n_heads = 8;
  c.text_layers = 6;
  c.visual_layers = 2;
  c.fusion_layers = 2;
  c.summary_layers = 6;
  c.description_layers = 6;
  c.vocab_size = 21128;
  c.max_text_len = 1024;
  c.max_images = 16;
  c.max_summary_len = 64;
  c.max_description_len = 32;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_h", c.d_h},
                     {"d_e", c.d_e},
                     {"d_v", c.d_v},
                     {"d_ff", c.d_ff},
                     {"n_heads", c.n_heads},
                     {"text_layers", c.text_layers},
                     {"visual_layers", c.visual_layers},
                     {"fusion_layers", c.fusion_layers},
                     {"summary_layers", c.summary_layers},
                     {"description_layers", c.description_layers},
                     {"vocab_size", c.vocab_size},
                     {"max_text_len", c.max_text_len},
                     {"max_images", c.max_images},
                     {"max_summary_len", c.max_summary_len},
                     {"max_description_len", c.max_description_len},
                     {"dwa_temperature", c.dwa_temperature},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d_h").get_to(c.d_h);
  j.at("d_e").get_to(c.d_e);
  j.at("d_v").get_to(c.d_v);
  j.at("d_ff").get_to(c.d_ff);
  j.at("n_heads").get_to(c.n_heads);
  j.at("text_layers").get_to(c.text_layers);
  j.at("visual_layers").get_to(c.visual_layers);
  j.at("fusion_layers").get_to(c.fusion_layers);
  j.at("summary_layers").get_to(c.summary_layers);
  j.at("description_layers").get_to(c.description_layers);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("max_text_len").get_to(c.max_text_len);
  j.at("max_images").get_to(c.max_images);
  j.at("max_summary_len").get_to(c.max_summary_len);
  j.at("max_description_len").get_to(c.max_description_len);
  j.at("dwa_temperature").get_to(c.dwa_temperature);
  j.at("seed").get_to(c.seed);
}

void TrainConfig::validate() const {
  if (learning_rate < 0) throw ConfigError("learning_rate must be >= 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be > 0");
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

std::string quote_if_needed(const std::string& v) {
  if (v.empty() || v.front() == ' ' || v.back() == ' ' || v.find('#') != std::string::npos) {
    return "\"" + v + "\"";
  }
  return v;
}

}  // namespace

Settings Settings::defaults(std::string_view profile) {
  ModelConfig m;
  TrainConfig t;
  if (profile == "full") {
    m = ModelConfig::full();
    t.learning_rate = 2e-4;
  } else if (profile != "desk") {
    throw ConfigError("unknown profile '" + std::string(profile) + "' (expected desk or full)");
  }
  Settings s;
  auto& v = s.values_;
  v["profile"] = std::string(profile);
  const nlohmann::json mj = m;
  for (const auto& [key, val] : mj.items()) v[key] = val.dump();
  v["max_vocab"] = profile == "full" ? "21128" : "4096";
  v["tokenizer"] = "whitespace";

  std::ostringstream lr;
  lr << t.learning_rate;
  v["learning_rate"] = lr.str();
  v["lr_decay"] = "0.9";
  v["lr_decay_every"] = "10";
  v["epochs"] = profile == "full" ? std::to_string(t.epochs) : "15";
  v["batch_size"] = std::to_string(t.batch_size);
  v["clip_norm"] = "1";
  v["adam_beta1"] = "0.9";
  v["adam_beta2"] = "0.999";
  v["adam_eps"] = "1e-08";
  v["loss_normalization"] = "mean";

  v["train_path"] = "";
  v["test_path"] = "";
  v["predictions_path"] = "";
  v["checkpoint"] = "";
  v["scsc_checkpoint"] = "";
  v["scsc_data_path"] = "";

  v["tau"] = "0.5";
  v["backend"] = "toy";
  v["backend_path"] = "";
  v["backend_seed"] = "7";
  v["msc_dim"] = "32";

  v["data_seed"] = "1";
  v["synth_train"] = "500";
  v["synth_test"] = "100";
  v["n_topics"] = "8";
  v["images_per_article"] = "4";
  v["image_noise"] = "0.1";
  v["distractors"] = "2";

  v["scsc_samples"] = "24000";
  v["scsc_heldout_fraction"] = "0.15";
  v["scsc_d"] = "32";
  v["scsc_heads"] = "2";
  v["scsc_layers"] = "2";
  v["scsc_d_ff"] = "64";
  v["scsc_epochs"] = "4";
  v["scsc_lr"] = "0.002";
  v["scsc_batch_size"] = "32";
  v["separator"] = " ";
  return s;
}

std::pair<std::string, std::string> Settings::parse_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(text) + "'");
  }
  std::string key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + std::string(text) + "'");
  return {key, unquote(trim(text.substr(eq + 1)))};
}

std::map<std::string, std::string> Settings::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Comments start at a '#' outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    if (trim(line).empty()) continue;
    try {
      auto [k, v] = parse_assignment(line);
      out[k] = v;
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void Settings::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& Settings::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

namespace {
template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + s + "'");
  }
  return v;
}
}  // namespace

int Settings::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }

double Settings::get_double(const std::string& key) const {
  const std::string& s = get(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + s + "'");
  }
}

std::uint64_t Settings::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key));
}

bool Settings::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + s + "'");
}

ModelConfig Settings::model_config() const {
  ModelConfig c;
  c.d_h = get_int("d_h");
  c.d_e = get_int("d_e");
  c.d_v = get_int("d_v");
  c.d_ff = get_int("d_ff");
  c.n_heads = get_int("n_heads");
  c.text_layers = get_int("text_layers");
  c.visual_layers = get_int("visual_layers");
  c.fusion_layers = get_int("fusion_layers");
  c.summary_layers = get_int("summary_layers");
  c.description_layers = get_int("description_layers");
  c.vocab_size = get_int("vocab_size");
  c.max_text_len = get_int("max_text_len");
  c.max_images = get_int("max_images");
  c.max_summary_len = get_int("max_summary_len");
  c.max_description_len = get_int("max_description_len");
  c.dwa_temperature = get_double("dwa_temperature");
  c.seed = get_u64("seed");
  return c;
}

TrainConfig Settings::train_config() const {
  TrainConfig t;
  t.learning_rate = get_double("learning_rate");
  t.lr_decay = get_double("lr_decay");
  t.lr_decay_every = get_int("lr_decay_every");
  t.epochs = get_int("epochs");
  t.batch_size = get_int("batch_size");
  t.clip_norm = get_double("clip_norm");
  t.adam_beta1 = get_double("adam_beta1");
  t.adam_beta2 = get_double("adam_beta2");
  t.adam_eps = get_double("adam_eps");
  const std::string& norm = get("loss_normalization");
  if (norm == "mean") {
    t.loss_normalization = LossNormalization::kTokenMean;
  } else if (norm == "sum") {
    t.loss_normalization = LossNormalization::kTokenSum;
  } else {
    throw ConfigError("loss_normalization must be mean or sum, got '" + norm + "'");
  }
  t.seed = get_u64("seed");
  return t;
}

std::string Settings::dump() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << quote_if_needed(v) << "\n";
  return out.str();
}

}  // namespace cisum
