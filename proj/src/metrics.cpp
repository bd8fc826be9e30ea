#include "cisum/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "cisum/errors.hpp"
#include "cisum/vdl.hpp"

namespace cisum::metrics {

namespace {

using Counts = std::map<Tokens, long>;

Counts ngrams(const Tokens& t, int n) {
  Counts c;
  if (n < 1) return c;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i) {
    ++c[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return c;
}

long total(const Counts& c) {
  long n = 0;
  for (const auto& [g, k] : c) n += k;
  return n;
}

long clipped_overlap(const Counts& cand, const Counts& ref) {
  long n = 0;
  for (const auto& [g, k] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) n += std::min(k, it->second);
  }
  return n;
}

double f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

}  // namespace

double rouge_n(const Tokens& candidate, const Tokens& reference, int n) {
  if (n < 1) throw ContractViolation("rouge_n: order must be >= 1");
  if (candidate.empty()) return 0.0;
  const Counts c = ngrams(candidate, n);
  const Counts r = ngrams(reference, n);
  const long tc = total(c), tr = total(r);
  if (tc == 0 && tr == 0) return 1.0;
  if (tc == 0 || tr == 0) return 0.0;
  const double overlap = static_cast<double>(clipped_overlap(c, r));
  return f1(overlap / static_cast<double>(tc), overlap / static_cast<double>(tr));
}

double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::vector<std::vector<int>> dp(candidate.size() + 1, std::vector<int>(reference.size() + 1, 0));
  for (std::size_t i = 1; i <= candidate.size(); ++i) {
    for (std::size_t j = 1; j <= reference.size(); ++j) {
      dp[i][j] = candidate[i - 1] == reference[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
    }
  }
  const double lcs = dp[candidate.size()][reference.size()];
  return f1(lcs / static_cast<double>(candidate.size()), lcs / static_cast<double>(reference.size()));
}

double bleu(const Tokens& candidate, const Tokens& reference, int max_n) {
  if (max_n < 1) throw ContractViolation("bleu: max_n must be >= 1");
  if (candidate.empty()) return 0.0;
  constexpr double kSmooth = 1e-9;
  double log_sum = 0;
  int orders = 0;
  for (int n = 1; n <= max_n; ++n) {
    const Counts c = ngrams(candidate, n);
    const Counts r = ngrams(reference, n);
    const long tc = total(c), tr = total(r);
    if (tc == 0 && tr == 0) continue;
    const long hit = tc == 0 ? 0 : clipped_overlap(c, r);
    if (n == 1 && hit == 0) return 0.0;
    const double p = hit == 0 ? kSmooth : static_cast<double>(hit) / static_cast<double>(tc);
    log_sum += std::log(p);
    ++orders;
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / orders);
}

double image_precision(const std::vector<int>& selected, const std::vector<int>& gold) {
  if (selected.size() != gold.size()) throw ContractViolation("image_precision: length mismatch");
  if (selected.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < selected.size(); ++i) hit += selected[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(selected.size());
}

void FeatureSet::add(Vector v, FeatureKind kind, std::string source) {
  const double n = v.norm();
  if (std::abs(n - 1.0) > 1e-6) throw ContractViolation("feature set: vector for " + source + " is not unit norm");
  vectors.push_back(std::move(v));
  kinds.push_back(kind);
  sources.push_back(std::move(source));
}

FeatureSet msc_features(std::string_view summary, std::string_view description, const std::vector<double>* image,
                        const EmbeddingBackend& backend) {
  FeatureSet out;
  auto add_text = [&](std::string_view text, const char* tag) {
    const auto segments = vdl::sentence_list(text);
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const std::string id = std::string(tag) + "[" + std::to_string(i) + "]";
      try {
        out.add(backend.embed_text_for_msc(segments[i]), FeatureKind::kTextSegment, id);
      } catch (const std::exception& e) {
        throw NumericError("msc features, segment " + id + ": " + e.what());
      }
    }
  };
  add_text(summary, "summary");
  add_text(description, "description");
  if (image) out.add(backend.embed_image_for_msc(*image), FeatureKind::kImage, "image");
  return out;
}

MatchedPairs f_match(const FeatureSet& candidates, const FeatureSet& targets, double tau) {
  MatchedPairs out;
  if (targets.size() == 0) return out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Vector& e = candidates.vectors[i];
    std::size_t best = 0;
    double best_cos = -2;
    for (std::size_t j = 0; j < targets.size(); ++j) {
      const Vector& t = targets.vectors[j];
      const double cos = e.dot(t) / (e.norm() * t.norm());
      if (cos > best_cos) {
        best_cos = cos;
        best = j;
      }
    }
    if (best_cos >= tau) out.emplace_back(static_cast<int>(i), static_cast<int>(best));
  }
  return out;
}

MscResult msc_scores(const FeatureSet& candidates, const FeatureSet& targets, double tau) {
  if (targets.size() == 0) throw ContractViolation("msc_scores: empty target feature set");
  MscResult r;
  if (candidates.size() == 0) return r;
  r.matched_pairs = f_match(candidates, targets, tau);
  std::set<int> cand, targ;
  for (const auto& [i, j] : r.matched_pairs) {
    cand.insert(i);
    targ.insert(j);
  }
  r.msc_p = static_cast<double>(cand.size()) / static_cast<double>(candidates.size());
  r.msc_r = static_cast<double>(targ.size()) / static_cast<double>(targets.size());
  r.msc_f1 = f1(r.msc_p, r.msc_r);
  return r;
}

}  // namespace cisum::metrics
