#pragma once

// Inference and evaluation glue shared by the command line and the tests.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cisum/backends.hpp"
#include "cisum/data.hpp"
#include "cisum/model.hpp"
#include "cisum/vdl.hpp"

namespace cisum::pipeline {

struct Prediction {
  std::string y_t;               // text summary
  int y_v = 0;                   // selected image
  std::vector<std::string> y_d;  // one description per image
  std::string y_s;               // summary with the selected description inserted
};

nlohmann::ordered_json to_json(const Prediction& p);
Prediction prediction_from_json(const nlohmann::json& j, std::size_t line);
void save_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

// Greedy decoding of all three heads. With a scorer, y_s places the selected
// description by the locator; without one y_s is left empty.
Prediction summarize_article(const model::CisumModel& model, const Vocab& vocab, const Tokenizer& tokenizer,
                             const Article& article, const vdl::CoherenceScorer* scorer,
                             const std::string& separator = " ");

struct EvalReport {
  double rouge1 = 0, rouge2 = 0, rougeL = 0;
  double bleu[4] = {0, 0, 0, 0};
  double ip = 0;
  double msc_p = 0, msc_r = 0, msc_f1 = 0;
  std::size_t n_samples = 0;
  double tau = 0.5;
};

// Scores are kept in [0, 1]; to_json reports them x100.
nlohmann::ordered_json to_json(const EvalReport& r);

enum class MscCandidate {
  kFull,      // summary segments + selected description segments + selected image
  kTextOnly,  // summary segments only
};

// Text metrics compare y_t with the reference summary; MSC targets are the
// reference summary, the gold image's reference description and the gold
// image. All per-sample scores are averaged.
EvalReport evaluate(const std::vector<Prediction>& predictions, const Corpus& references,
                    const EmbeddingBackend& backend, const Tokenizer& tokenizer, double tau,
                    MscCandidate candidate = MscCandidate::kFull);

}  // namespace cisum::pipeline
