#include "cisum/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cisum/backends.hpp"
#include "cisum/checkpoint.hpp"
#include "cisum/data.hpp"
#include "cisum/errors.hpp"
#include "cisum/pipeline.hpp"
#include "cisum/rng.hpp"
#include "cisum/training.hpp"
#include "cisum/vdl.hpp"

namespace cisum::cli {

namespace fs = std::filesystem;

void init_logging() {
  const char* env = std::getenv("CISUM_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    if (level != "info") spdlog::warn("CISUM_LOG='{}' not recognised, using info", level);
    spdlog::set_level(spdlog::level::info);
  }
}

Settings resolve_settings(const RunSpec& spec) {
  std::map<std::string, std::string> file;
  if (spec.config) file = Settings::parse_file(*spec.config);
  std::vector<std::pair<std::string, std::string>> sets;
  for (const auto& o : spec.overrides) sets.push_back(Settings::parse_assignment(o));

  std::string profile = "desk";
  if (auto it = file.find("profile"); it != file.end()) profile = it->second;
  for (const auto& [k, v] : sets) {
    if (k == "profile") profile = v;
  }
  Settings s = Settings::defaults(profile);
  for (const auto& [k, v] : file) s.set(k, v);
  for (const auto& [k, v] : sets) s.set(k, v);
  if (spec.seed) s.set("seed", std::to_string(*spec.seed));
  if (spec.checkpoint) s.set("checkpoint", spec.checkpoint->string());
  if (spec.tau) {
    std::ostringstream t;
    t.precision(17);
    t << *spec.tau;
    s.set("tau", t.str());
  }
  return s;
}

namespace {

const std::string& require_path(const Settings& s, const std::string& key) {
  const std::string& v = s.get(key);
  if (v.empty()) throw ConfigError("config key '" + key + "' must be set for this command");
  return v;
}

std::unique_ptr<EmbeddingBackend> backend_for(const Settings& s, int vocab_size) {
  const ModelConfig m = s.model_config();
  ToyBackendOptions toy;
  toy.vocab_size = std::max(vocab_size, 4);
  toy.text_dim = m.d_h;
  toy.image_dim = m.d_v;
  toy.max_positions = m.max_positions();
  toy.shared_dim = s.get_int("msc_dim");
  toy.seed = s.get_u64("backend_seed");
  return make_backend(s.get("backend"), toy, s.get("backend_path"));
}

const ToyBackend& require_toy(const EmbeddingBackend& b) {
  const auto* toy = dynamic_cast<const ToyBackend*>(&b);
  if (!toy) throw ConfigError("synthetic data generation needs the toy backend");
  return *toy;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void cmd_synth_data(const Settings& s, const fs::path& out) {
  const auto backend = backend_for(s, 4);
  const ToyBackend& toy = require_toy(*backend);
  SynthOptions o;
  o.n_topics = s.get_int("n_topics");
  o.images_per_article = s.get_int("images_per_article");
  o.distractors = s.get_int("distractors");
  o.image_noise = s.get_double("image_noise");
  const std::uint64_t seed = s.get_u64("data_seed");

  o.n_articles = s.get_int("synth_train");
  o.seed = derive_seed(seed, hash_string("train"));
  o.id_prefix = "train";
  Corpus train = synth_corpus(o, toy);
  o.n_articles = s.get_int("synth_test");
  o.seed = derive_seed(seed, hash_string("test"));
  o.id_prefix = "test";
  Corpus test = synth_corpus(o, toy);
  test.split = "test";
  save_corpus(train, out / "train.jsonl");
  save_corpus(test, out / "test.jsonl");
  spdlog::info("wrote {} train and {} test articles to {}", train.articles.size(), test.articles.size(), out.string());
}

std::vector<std::string> titles_of(const Corpus& c) {
  std::vector<std::string> t;
  for (const auto& a : c.articles) t.push_back(a.title);
  return t;
}

void cmd_gen_scsc_data(const Settings& s, const fs::path& out) {
  const Corpus corpus = load_corpus(require_path(s, "train_path"));
  const auto samples = vdl::scsc_dataset(titles_of(corpus), static_cast<std::size_t>(s.get_int("scsc_samples")),
                                         derive_seed(s.get_u64("seed"), hash_string("scsc-data")));
  save_samples(samples, out / "scsc.jsonl");
  spdlog::info("wrote {} coherence samples", samples.size());
}

vdl::ScscConfig scsc_config(const Settings& s) {
  vdl::ScscConfig c;
  c.d_model = s.get_int("scsc_d");
  c.n_heads = s.get_int("scsc_heads");
  c.layers = s.get_int("scsc_layers");
  c.d_ff = s.get_int("scsc_d_ff");
  c.epochs = s.get_int("scsc_epochs");
  c.learning_rate = s.get_double("scsc_lr");
  c.batch_size = s.get_int("scsc_batch_size");
  c.seed = derive_seed(s.get_u64("seed"), hash_string("scsc-model"));
  return c;
}

void cmd_train_scsc(const Settings& s, const fs::path& out) {
  const double frac = s.get_double("scsc_heldout_fraction");
  if (!(frac > 0 && frac < 1)) throw ConfigError("scsc_heldout_fraction must lie in (0, 1)");
  const std::uint64_t seed = s.get_u64("seed");
  std::vector<vdl::CoherenceSample> train, heldout;
  if (!s.get("scsc_data_path").empty()) {
    auto all = vdl::load_samples(s.get("scsc_data_path"));
    const auto n_held = static_cast<std::size_t>(static_cast<double>(all.size()) * frac);
    heldout.assign(all.end() - static_cast<std::ptrdiff_t>(n_held), all.end());
    all.resize(all.size() - n_held);
    train = std::move(all);
  } else {
    // Held-out samples come from articles never seen in training.
    const Corpus corpus = load_corpus(require_path(s, "train_path"));
    auto titles = titles_of(corpus);
    Rng rng(derive_seed(seed, hash_string("scsc-split")));
    rng.shuffle(titles);
    const auto n_held = std::max<std::size_t>(2, static_cast<std::size_t>(static_cast<double>(titles.size()) * frac));
    if (titles.size() < n_held + 2) throw ConfigError("train-scsc: corpus too small for a held-out split");
    const std::vector<std::string> held_titles(titles.end() - static_cast<std::ptrdiff_t>(n_held), titles.end());
    titles.resize(titles.size() - n_held);
    const auto n = static_cast<std::size_t>(s.get_int("scsc_samples"));
    train = vdl::scsc_dataset(titles, n, derive_seed(seed, hash_string("scsc-train")));
    heldout = vdl::scsc_dataset(held_titles, std::max<std::size_t>(200, static_cast<std::size_t>(static_cast<double>(n) * frac)),
                                derive_seed(seed, hash_string("scsc-heldout")));
  }
  const Tokenizer tok = Tokenizer::from_name(s.get("tokenizer"));
  vdl::ScscModel m(scsc_config(s), vdl::scsc_vocab(train, tok), tok);
  const auto losses = m.train(train);
  m.save(out / "scsc.ckpt");
  nlohmann::ordered_json report;
  report["n_train"] = train.size();
  report["n_heldout"] = heldout.size();
  report["epoch_loss"] = losses;
  report["heldout_accuracy"] = m.accuracy(heldout);
  write_json(out / "scsc_report.json", report);
  spdlog::info("coherence classifier held-out accuracy {:.4f}", report["heldout_accuracy"].get<double>());
}

void cmd_train(const Settings& s, const fs::path& out) {
  const Corpus corpus = load_corpus(require_path(s, "train_path"));
  if (corpus.articles.empty()) throw ConfigError("train: training corpus is empty");
  const Tokenizer tok = Tokenizer::from_name(s.get("tokenizer"));
  const Vocab vocab = Vocab::build(corpus, tok, s.get_int("max_vocab"));
  ModelConfig config = s.model_config();
  if (config.vocab_size != 0 && config.vocab_size != vocab.size()) {
    throw ConfigError("vocab_size " + std::to_string(config.vocab_size) + " disagrees with the corpus vocabulary (" +
                      std::to_string(vocab.size()) + ")");
  }
  config.vocab_size = vocab.size();
  const auto backend = backend_for(s, vocab.size());
  model::CisumModel m(config, backend.get());
  spdlog::info("model has {} parameters, vocabulary {}", m.parameters().scalar_count(), vocab.size());

  std::vector<EncodedArticle> data;
  for (const auto& a : corpus.articles) data.push_back(encode_article(a, vocab, tok, config));
  std::ofstream curve(out / "loss_curve.jsonl", std::ios::binary);
  if (!curve) throw ConfigError("cannot write loss curve");
  training::TrainHooks hooks;
  hooks.curve = &curve;
  training::train(m, data, s.train_config(), hooks);
  save_model(out / "model.ckpt", m, vocab, tok);
}

void cmd_summarize(const Settings& s, const fs::path& out) {
  const LoadedModel loaded = load_model(require_path(s, "checkpoint"));
  const auto scsc = vdl::ScscModel::load(require_path(s, "scsc_checkpoint"));
  const Corpus corpus = load_corpus(require_path(s, "test_path"), "test");
  std::vector<pipeline::Prediction> preds;
  for (const auto& a : corpus.articles) {
    preds.push_back(pipeline::summarize_article(*loaded.model, loaded.vocab, loaded.tokenizer, a, scsc.get(),
                                                s.get("separator")));
  }
  pipeline::save_predictions(preds, out / "predictions.jsonl");
  spdlog::info("summarised {} articles", preds.size());
}

void cmd_evaluate(const Settings& s, const fs::path& out) {
  const Corpus refs = load_corpus(require_path(s, "test_path"), "test");
  const auto preds = pipeline::load_predictions(require_path(s, "predictions_path"));
  const auto backend = backend_for(s, 4);
  const Tokenizer tok = Tokenizer::from_name(s.get("tokenizer"));
  const auto report = pipeline::evaluate(preds, refs, *backend, tok, s.get_double("tau"));
  write_json(out / "metrics.json", pipeline::to_json(report));
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
  if (dynamic_cast<const ContractViolation*>(&e)) return "contract_violation";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric_error";
  if (dynamic_cast<const ParseError*>(&e)) return "parse_error";
  return "internal_error";
}

}  // namespace

int run(const RunSpec& spec, std::ostream& err) {
  try {
    if (std::find(kCommands.begin(), kCommands.end(), spec.command) == kCommands.end()) {
      throw ConfigError("unknown command '" + spec.command + "'");
    }
    fs::create_directories(spec.out);
    const Settings s = resolve_settings(spec);
    {
      std::ofstream snap(spec.out / "config.resolved", std::ios::binary);
      if (!snap) throw ConfigError("cannot write " + (spec.out / "config.resolved").string());
      snap << "# cisum " << spec.command << "\n" << s.dump();
    }
    if (spec.command == "synth-data") cmd_synth_data(s, spec.out);
    else if (spec.command == "gen-scsc-data") cmd_gen_scsc_data(s, spec.out);
    else if (spec.command == "train-scsc") cmd_train_scsc(s, spec.out);
    else if (spec.command == "train") cmd_train(s, spec.out);
    else if (spec.command == "summarize") cmd_summarize(s, spec.out);
    else if (spec.command == "evaluate") cmd_evaluate(s, spec.out);
    return 0;
  } catch (const std::exception& e) {
    nlohmann::ordered_json rec;
    rec["error"] = error_kind(e);
    rec["command"] = spec.command;
    rec["message"] = e.what();
    err << rec.dump() << std::endl;
    std::error_code ec;
    if (fs::is_directory(spec.out, ec)) {
      std::ofstream f(spec.out / "error.json", std::ios::binary);
      if (f) f << rec.dump() << '\n';
    }
    return 1;
  }
}

}  // namespace cisum::cli
