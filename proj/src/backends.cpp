#include "cisum/backends.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cisum/errors.hpp"
#include "cisum/rng.hpp"
#include "cisum/text.hpp"

namespace cisum {

namespace {

constexpr int kUnkId = 3;

Vector normalized_or_throw(const Vector& v, std::string_view what) {
  const double n = v.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) {
    throw NumericError("embedding of " + std::string(what) + " is a zero vector");
  }
  return v / n;
}

Matrix read_matrix(const nlohmann::json& j, const char* key) {
  const auto& rows = j.at(key);
  if (!rows.is_array() || rows.empty()) throw ParseError(std::string("feature file: '") + key + "' must be a non-empty 2-D array");
  const auto r = static_cast<Index>(rows.size());
  const auto c = static_cast<Index>(rows[0].size());
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (static_cast<Index>(row.size()) != c) throw ParseError(std::string("feature file: ragged '") + key + "'");
    for (Index k = 0; k < c; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

}  // namespace

bool is_punctuation_token(std::string_view token) {
  if (token.empty()) return false;
  std::size_t i = 0;
  while (i < token.size()) {
    const std::size_t n = text::delimiter_at(token, i);
    if (n == 0) return false;
    i += n;
  }
  return true;
}

Vector EmbeddingBackend::embed_for_msc(const MscItem& item) const {
  if (const auto* s = std::get_if<std::string>(&item)) {
    if (text::trim(*s).empty()) throw ContractViolation("embed_for_msc: empty text segment");
    return embed_text_for_msc(*s);
  }
  const auto& f = std::get<std::vector<double>>(item);
  if (f.empty()) throw ContractViolation("embed_for_msc: empty image feature");
  return embed_image_for_msc(f);
}

// ---------------------------------------------------------------------------

ToyBackend::ToyBackend(ToyBackendOptions options) : opt_(options) {
  if (opt_.vocab_size < 4 || opt_.text_dim < 1 || opt_.image_dim < 1 || opt_.max_positions < 1) {
    throw ConfigError("toy backend: invalid dimensions");
  }
  if (opt_.shared_dim < opt_.image_dim) opt_.shared_dim = opt_.image_dim;

  token_table_.resize(opt_.vocab_size, opt_.text_dim);
  for (int t = 0; t < opt_.vocab_size; ++t) {
    Rng rng(derive_seed(opt_.seed, 0x70000000ULL + static_cast<std::uint64_t>(t)));
    for (int k = 0; k < opt_.text_dim; ++k) token_table_(t, k) = 0.1 * rng.normal();
  }

  Rng pos_rng(derive_seed(opt_.seed, hash_string("positions")));
  position_table_.resize(opt_.max_positions, opt_.text_dim);
  for (Index i = 0; i < position_table_.size(); ++i) position_table_.data()[i] = 0.05 * pos_rng.normal();

  Rng proj_rng(derive_seed(opt_.seed, hash_string("image-projection")));
  const double a = std::sqrt(6.0 / (opt_.image_dim + opt_.text_dim));
  image_projection_.resize(opt_.image_dim, opt_.text_dim);
  for (Index i = 0; i < image_projection_.size(); ++i) image_projection_.data()[i] = proj_rng.uniform(-a, a);
  image_bias_.resize(1, opt_.text_dim);
  for (Index i = 0; i < image_bias_.size(); ++i) image_bias_.data()[i] = proj_rng.uniform(-0.01, 0.01);

  Rng shared_rng(derive_seed(opt_.seed, hash_string("shared-space")));
  Matrix g(opt_.shared_dim, opt_.image_dim);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = shared_rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  shared_projection_ = qr.householderQ() * Matrix::Identity(opt_.shared_dim, opt_.image_dim);
}

BackendDims ToyBackend::dims() const { return {opt_.text_dim, opt_.image_dim, opt_.shared_dim}; }

SequenceTensor ToyBackend::embed_text_tokens(std::span<const int> tokens) const {
  const auto n = static_cast<Index>(tokens.size());
  if (n > opt_.max_positions) {
    throw ContractViolation("embed_text_tokens: sequence longer than max positions");
  }
  SequenceTensor out{Matrix(n, opt_.text_dim), full_mask(n)};
  for (Index i = 0; i < n; ++i) {
    int id = tokens[static_cast<std::size_t>(i)];
    if (id < 0 || id >= opt_.vocab_size) id = kUnkId;
    out.values.row(i) = token_table_.row(id) + position_table_.row(i);
  }
  return out;
}

SequenceTensor ToyBackend::embed_image_features(const Matrix& raw) const {
  if (raw.cols() != opt_.image_dim) {
    throw ContractViolation("embed_image_features: feature dimension " + std::to_string(raw.cols()) +
                            " != " + std::to_string(opt_.image_dim));
  }
  Matrix v = raw * image_projection_;
  v.rowwise() += image_bias_.row(0);
  return {std::move(v), full_mask(raw.rows())};
}

Vector ToyBackend::concept_of(std::string_view token) const {
  Rng rng(derive_seed(opt_.seed, hash_string(token)));
  Vector v(opt_.image_dim);
  for (Index k = 0; k < v.size(); ++k) v(k) = rng.normal();
  return v;
}

Vector ToyBackend::segment_concept(std::string_view segment) const {
  const auto tokens = text::split_whitespace(segment);
  Vector sum = Vector::Zero(opt_.image_dim);
  bool any = false;
  for (const auto& t : tokens) {
    if (is_punctuation_token(t)) continue;
    sum += concept_of(t);
    any = true;
  }
  if (!any) {
    for (const auto& t : tokens) sum += concept_of(t);
  }
  return sum;
}

Vector ToyBackend::embed_text_for_msc(std::string_view segment) const {
  return normalized_or_throw(shared_projection_ * segment_concept(segment),
                             "segment '" + std::string(segment) + "'");
}

Vector ToyBackend::embed_image_for_msc(std::span<const double> feature) const {
  if (static_cast<int>(feature.size()) != opt_.image_dim) {
    throw ContractViolation("embed_image_for_msc: feature dimension mismatch");
  }
  const Eigen::Map<const Vector> f(feature.data(), static_cast<Index>(feature.size()));
  return normalized_or_throw(shared_projection_ * f, "image feature");
}

// ---------------------------------------------------------------------------

FeatureFileBackend::FeatureFileBackend(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open feature file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    name_ = j.value("name", std::string("feature-file"));
    token_table_ = read_matrix(j, "token_table");
    position_table_ = read_matrix(j, "position_table");
    image_projection_ = read_matrix(j, "image_projection");
    image_bias_ = read_matrix(j, "image_bias");
    msc_image_projection_ = read_matrix(j, "msc_image_projection");
    min_confidence_ = j.value("min_confidence", kDefaultMinConfidence);
    for (const auto& [seg, vec] : j.at("segments").items()) {
      Vector v(static_cast<Index>(vec.size()));
      for (std::size_t k = 0; k < vec.size(); ++k) v(static_cast<Index>(k)) = vec[k].get<double>();
      segments_.emplace(text::trim(seg), std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("feature file " + path.string() + ": " + e.what());
  }
  dims_.text_dim = static_cast<int>(token_table_.cols());
  dims_.image_dim = static_cast<int>(image_projection_.rows());
  dims_.shared_dim = static_cast<int>(msc_image_projection_.rows());
  if (position_table_.cols() != dims_.text_dim || image_projection_.cols() != dims_.text_dim ||
      image_bias_.rows() != 1 || image_bias_.cols() != dims_.text_dim ||
      msc_image_projection_.cols() != dims_.image_dim) {
    throw ConfigError("feature file " + path.string() + ": inconsistent dimensions");
  }
  for (const auto& [seg, v] : segments_) {
    if (v.size() != dims_.shared_dim) throw ConfigError("feature file: segment '" + seg + "' has wrong dimension");
  }
}

SequenceTensor FeatureFileBackend::embed_text_tokens(std::span<const int> tokens) const {
  const auto n = static_cast<Index>(tokens.size());
  if (n > position_table_.rows()) throw ContractViolation("embed_text_tokens: sequence too long");
  SequenceTensor out{Matrix(n, dims_.text_dim), full_mask(n)};
  for (Index i = 0; i < n; ++i) {
    int id = tokens[static_cast<std::size_t>(i)];
    if (id < 0 || id >= token_table_.rows()) id = kUnkId;
    out.values.row(i) = token_table_.row(id) + position_table_.row(i);
  }
  return out;
}

SequenceTensor FeatureFileBackend::embed_image_features(const Matrix& raw) const {
  if (raw.cols() != dims_.image_dim) throw ContractViolation("embed_image_features: feature dimension mismatch");
  Matrix v = raw * image_projection_;
  v.rowwise() += image_bias_.row(0);
  return {std::move(v), full_mask(raw.rows())};
}

Vector FeatureFileBackend::embed_text_for_msc(std::string_view segment) const {
  auto it = segments_.find(text::trim(segment));
  if (it == segments_.end()) {
    throw ContractViolation("feature file has no vector for segment '" + std::string(segment) + "'");
  }
  return normalized_or_throw(it->second, "segment '" + std::string(segment) + "'");
}

Vector FeatureFileBackend::embed_image_for_msc(std::span<const double> feature) const {
  if (static_cast<int>(feature.size()) != dims_.image_dim) {
    throw ContractViolation("embed_image_for_msc: feature dimension mismatch");
  }
  const Eigen::Map<const Vector> f(feature.data(), static_cast<Index>(feature.size()));
  return normalized_or_throw(msc_image_projection_ * f, "image feature");
}

Matrix FeatureFileBackend::filter_regions(const Matrix& regions, std::span<const double> confidence) const {
  if (static_cast<Index>(confidence.size()) != regions.rows()) {
    throw ContractViolation("filter_regions: one confidence per region required");
  }
  std::vector<Index> keep;
  for (Index i = 0; i < regions.rows(); ++i) {
    if (confidence[static_cast<std::size_t>(i)] > min_confidence_) keep.push_back(i);
  }
  Matrix out(static_cast<Index>(keep.size()), regions.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) out.row(static_cast<Index>(k)) = regions.row(keep[k]);
  return out;
}

std::unique_ptr<EmbeddingBackend> make_backend(const std::string& kind, const ToyBackendOptions& toy,
                                               const std::filesystem::path& feature_file) {
  if (kind == "toy") return std::make_unique<ToyBackend>(toy);
  if (kind == "feature-file") return std::make_unique<FeatureFileBackend>(feature_file);
  throw ConfigError("unknown backend '" + kind + "' (expected toy or feature-file)");
}

}  // namespace cisum
