#pragma once

// Embedding backends: where the model's initial text/image embeddings and
// the shared text-image space used by the coverage metric come from.

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "cisum/tensor.hpp"

namespace cisum {

struct BackendDims {
  int text_dim = 0;    // model hidden size the embeddings are produced in
  int image_dim = 0;   // raw image feature size
  int shared_dim = 0;  // joint text/image space for coverage scoring
};

// A text segment or a raw image feature vector.
using MscItem = std::variant<std::string, std::vector<double>>;

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;

  virtual std::string name() const = 0;
  virtual BackendDims dims() const = 0;

  // Token rows plus absolute position rows, [n x text_dim]. Unknown ids map
  // to the UNK row.
  virtual SequenceTensor embed_text_tokens(std::span<const int> tokens) const = 0;
  // Affine projection of raw features [M x image_dim] -> [M x text_dim].
  virtual SequenceTensor embed_image_features(const Matrix& raw) const = 0;

  // Unit vectors in the shared space. Throw NumericError on a zero vector.
  virtual Vector embed_text_for_msc(std::string_view segment) const = 0;
  virtual Vector embed_image_for_msc(std::span<const double> feature) const = 0;
  Vector embed_for_msc(const MscItem& item) const;

  // Initial values for the model's trainable embedding parameters.
  virtual Matrix token_table() const = 0;      // [vocab x text_dim]
  virtual Matrix position_table() const = 0;   // [max_positions x text_dim]
  virtual Matrix image_projection() const = 0; // [image_dim x text_dim]
  virtual Matrix image_bias() const = 0;       // [1 x text_dim]
};

struct ToyBackendOptions {
  int vocab_size = 0;
  int text_dim = 64;
  int image_dim = 16;
  int max_positions = 128;
  int shared_dim = 32;
  std::uint64_t seed = 7;
};

// Deterministic, seed-only backend. Text segments in the shared space are a
// bag of per-token concept vectors; images are an orthonormal projection of
// the raw feature. Both go through the same projection, so a feature built
// from a segment's concepts (see concept_of) lands next to that segment.
class ToyBackend final : public EmbeddingBackend {
 public:
  explicit ToyBackend(ToyBackendOptions options);

  std::string name() const override { return "toy"; }
  BackendDims dims() const override;

  SequenceTensor embed_text_tokens(std::span<const int> tokens) const override;
  SequenceTensor embed_image_features(const Matrix& raw) const override;
  Vector embed_text_for_msc(std::string_view segment) const override;
  Vector embed_image_for_msc(std::span<const double> feature) const override;

  Matrix token_table() const override { return token_table_; }
  Matrix position_table() const override { return position_table_; }
  Matrix image_projection() const override { return image_projection_; }
  Matrix image_bias() const override { return image_bias_; }

  // Per-token concept vector in raw-feature space (image_dim).
  Vector concept_of(std::string_view token) const;
  // Sum of concept vectors over the non-punctuation tokens of a segment.
  Vector segment_concept(std::string_view segment) const;
  const Matrix& shared_projection() const { return shared_projection_; }

 private:
  ToyBackendOptions opt_;
  Matrix token_table_;
  Matrix position_table_;
  Matrix image_projection_;
  Matrix image_bias_;
  Matrix shared_projection_;  // [shared_dim x image_dim], orthonormal columns
};

// Adapter for externally computed encoder outputs stored in a JSON feature
// file (token table, projections, per-segment vectors). No model runtime is
// invoked. Detector regions below the confidence cutoff are dropped by
// filter_regions before they reach the model.
class FeatureFileBackend final : public EmbeddingBackend {
 public:
  static constexpr double kDefaultMinConfidence = 0.55;

  explicit FeatureFileBackend(const std::filesystem::path& path);

  std::string name() const override { return name_; }
  BackendDims dims() const override { return dims_; }

  SequenceTensor embed_text_tokens(std::span<const int> tokens) const override;
  SequenceTensor embed_image_features(const Matrix& raw) const override;
  Vector embed_text_for_msc(std::string_view segment) const override;
  Vector embed_image_for_msc(std::span<const double> feature) const override;

  Matrix token_table() const override { return token_table_; }
  Matrix position_table() const override { return position_table_; }
  Matrix image_projection() const override { return image_projection_; }
  Matrix image_bias() const override { return image_bias_; }

  double min_confidence() const { return min_confidence_; }
  // Keeps rows of `regions` whose detector confidence is strictly above the cutoff.
  Matrix filter_regions(const Matrix& regions, std::span<const double> confidence) const;

 private:
  std::string name_;
  BackendDims dims_;
  Matrix token_table_;
  Matrix position_table_;
  Matrix image_projection_;
  Matrix image_bias_;
  Matrix msc_image_projection_;  // [shared_dim x image_dim]
  std::unordered_map<std::string, Vector> segments_;
  double min_confidence_ = kDefaultMinConfidence;
};

// Whitespace tokens made only of sentence punctuation carry no content for
// the toy shared space.
bool is_punctuation_token(std::string_view token);

std::unique_ptr<EmbeddingBackend> make_backend(const std::string& kind,
                                               const ToyBackendOptions& toy,
                                               const std::filesystem::path& feature_file);

}  // namespace cisum
