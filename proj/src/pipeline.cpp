#include "cisum/pipeline.hpp"

#include <fstream>

#include "cisum/errors.hpp"
#include "cisum/metrics.hpp"
#include "cisum/text.hpp"

namespace cisum::pipeline {

nlohmann::ordered_json to_json(const Prediction& p) {
  nlohmann::ordered_json j;
  j["y_t"] = p.y_t;
  j["y_v"] = p.y_v;
  j["y_d"] = p.y_d;
  j["y_s"] = p.y_s;
  return j;
}

Prediction prediction_from_json(const nlohmann::json& j, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  for (const char* key : {"y_t", "y_v", "y_d", "y_s"}) {
    if (!j.contains(key)) throw ParseError(where + key + " missing");
  }
  Prediction p;
  try {
    p.y_t = j.at("y_t").get<std::string>();
    p.y_v = j.at("y_v").get<int>();
    p.y_d = j.at("y_d").get<std::vector<std::string>>();
    p.y_s = j.at("y_s").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(where + "y_t/y_s must be strings, y_v an integer and y_d a list of strings");
  }
  return p;
}

void save_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& p : predictions) out << to_json(p).dump() << '\n';
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open predictions " + path.string());
  std::vector<Prediction> out;
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
    out.push_back(prediction_from_json(j, n));
  }
  return out;
}

Prediction summarize_article(const model::CisumModel& model, const Vocab& vocab, const Tokenizer& tokenizer,
                             const Article& article, const vdl::CoherenceScorer* scorer,
                             const std::string& separator) {
  const EncodedArticle e = encode_article(article, vocab, tokenizer, model.config());
  const model::TripleOutput out = model.forward(e.input, nullptr);
  Prediction p;
  p.y_t = tokenizer.detokenize(vocab.decode(out.summary_tokens));
  p.y_v = out.selected_image;
  for (const auto& d : out.description_tokens) p.y_d.push_back(tokenizer.detokenize(vocab.decode(d)));
  if (scorer) {
    const std::string& desc = p.y_d[static_cast<std::size_t>(p.y_v)];
    p.y_s = text::trim(desc).empty() ? p.y_t : vdl::insert_description(p.y_t, desc, *scorer, separator);
  }
  return p;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["rouge1"] = 100 * r.rouge1;
  j["rouge2"] = 100 * r.rouge2;
  j["rougeL"] = 100 * r.rougeL;
  for (int n = 0; n < 4; ++n) j["bleu" + std::to_string(n + 1)] = 100 * r.bleu[n];
  j["ip"] = 100 * r.ip;
  j["msc_p"] = 100 * r.msc_p;
  j["msc_r"] = 100 * r.msc_r;
  j["msc_f1"] = 100 * r.msc_f1;
  j["n_samples"] = r.n_samples;
  j["tau"] = r.tau;
  return j;
}

EvalReport evaluate(const std::vector<Prediction>& predictions, const Corpus& references,
                    const EmbeddingBackend& backend, const Tokenizer& tokenizer, double tau,
                    MscCandidate candidate) {
  if (predictions.size() != references.articles.size()) {
    throw ContractViolation("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                            std::to_string(references.articles.size()) + " reference articles");
  }
  if (!(tau >= -1.0 && tau <= 1.0)) throw ConfigError("tau must lie in [-1, 1]");
  EvalReport r;
  r.tau = tau;
  r.n_samples = predictions.size();
  if (predictions.empty()) return r;
  std::vector<int> selected, gold;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Prediction& p = predictions[i];
    const Article& a = references.articles[i];
    const auto cand = tokenizer.tokenize(p.y_t);
    const auto ref = tokenizer.tokenize(a.target_summary);
    r.rouge1 += metrics::rouge_n(cand, ref, 1);
    r.rouge2 += metrics::rouge_n(cand, ref, 2);
    r.rougeL += metrics::rouge_l(cand, ref);
    for (int n = 0; n < 4; ++n) r.bleu[n] += metrics::bleu(cand, ref, n + 1);
    selected.push_back(p.y_v);
    gold.push_back(a.relevant_image_index);

    const auto g = static_cast<std::size_t>(a.relevant_image_index);
    const metrics::FeatureSet targets = metrics::msc_features(a.target_summary, a.target_descriptions[g], &a.images[g], backend);
    metrics::FeatureSet cands;
    if (candidate == MscCandidate::kFull) {
      const bool valid = p.y_v >= 0 && static_cast<std::size_t>(p.y_v) < a.images.size();
      const std::string desc = valid && static_cast<std::size_t>(p.y_v) < p.y_d.size() ? p.y_d[static_cast<std::size_t>(p.y_v)] : "";
      cands = metrics::msc_features(p.y_t, desc, valid ? &a.images[static_cast<std::size_t>(p.y_v)] : nullptr, backend);
    } else {
      cands = metrics::msc_features(p.y_t, "", nullptr, backend);
    }
    const auto msc = metrics::msc_scores(cands, targets, tau);
    r.msc_p += msc.msc_p;
    r.msc_r += msc.msc_r;
    r.msc_f1 += msc.msc_f1;
  }
  const double n = static_cast<double>(predictions.size());
  r.rouge1 /= n;
  r.rouge2 /= n;
  r.rougeL /= n;
  for (double& b : r.bleu) b /= n;
  r.ip = metrics::image_precision(selected, gold);
  r.msc_p /= n;
  r.msc_r /= n;
  r.msc_f1 /= n;
  return r;
}

}  // namespace cisum::pipeline
