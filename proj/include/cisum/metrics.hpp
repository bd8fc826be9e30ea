#pragma once

// Text overlap metrics, image precision, and multimodal semantic coverage.
// All scores are in [0, 1].

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cisum/backends.hpp"
#include "cisum/tensor.hpp"

namespace cisum::metrics {

using Tokens = std::vector<std::string>;

// Clipped n-gram F1. Empty candidate scores 0; when neither side has an
// n-gram of this order the pair counts as a match (1).
double rouge_n(const Tokens& candidate, const Tokens& reference, int n);
// Longest-common-subsequence F1.
double rouge_l(const Tokens& candidate, const Tokens& reference);

// Geometric mean of clipped precisions for orders 1..max_n times the
// brevity penalty. A zero count contributes 1e-9 instead; orders with no
// n-gram on either side are left out; no unigram match at all gives 0.
double bleu(const Tokens& candidate, const Tokens& reference, int max_n);

double image_precision(const std::vector<int>& selected, const std::vector<int>& gold);

enum class FeatureKind { kTextSegment, kImage };

struct FeatureSet {
  std::vector<Vector> vectors;  // unit norm
  std::vector<FeatureKind> kinds;
  std::vector<std::string> sources;

  std::size_t size() const { return vectors.size(); }
  void add(Vector v, FeatureKind kind, std::string source);
};

// Text segments are the short sentences of the summary and the description;
// the image, when present, adds one more vector.
FeatureSet msc_features(std::string_view summary, std::string_view description,
                        const std::vector<double>* image, const EmbeddingBackend& backend);

using MatchedPairs = std::vector<std::pair<int, int>>;

// For every candidate, the most similar target (ties to the smallest index),
// kept when the cosine reaches tau.
MatchedPairs f_match(const FeatureSet& candidates, const FeatureSet& targets, double tau);

struct MscResult {
  double msc_p = 0;
  double msc_r = 0;
  double msc_f1 = 0;
  MatchedPairs matched_pairs;
};

// P counts distinct matched candidates over |candidates|, R distinct matched
// targets over |targets|. Throws ContractViolation on an empty target set;
// an empty candidate set scores 0.
MscResult msc_scores(const FeatureSet& candidates, const FeatureSet& targets, double tau);

}  // namespace cisum::metrics
