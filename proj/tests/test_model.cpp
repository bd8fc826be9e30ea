#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "cisum/errors.hpp"
#include "cisum/model.hpp"
#include "support/fixtures.hpp"
#include "support/scalar_oracle.hpp"

namespace {

using cisum::Matrix;
using cisum::model::CisumModel;
using cisum::model::Tape;
using cisum::model::Var;

struct ModelCase : ::testing::TestWithParam<int> {};

TEST_P(ModelCase, ForwardMatchesScalarOracle) {
  const auto config = fixtures::tiny_config(GetParam());
  CisumModel model(config);
  fixtures::randomize(model.parameters(), 3);
  const auto ex = fixtures::tiny_example(config, 10);

  Tape tape;
  const auto g = model.forward_graph(tape, ex.input, ex.teacher);
  const oracle::ScalarModel scalar(model.parameters(), config);
  const auto ref = scalar.forward(ex.input, ex.teacher);

  EXPECT_LT(oracle::max_abs_diff(ref.h_enc, g.encoded.text.value()), 1e-9);
  EXPECT_LT(oracle::max_abs_diff(ref.g_enc, g.encoded.visual.value()), 1e-9);
  EXPECT_LT(oracle::max_abs_diff(ref.summary_log_probs, g.summary_log_probs.value()), 1e-9);
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_LT(oracle::max_abs_diff(ref.description_log_probs[m], g.description_log_probs[m].value()), 1e-9);
  }
  EXPECT_LT(oracle::max_abs_diff({ref.image_log_scores}, g.image_log_scores.value()), 1e-9);
}

TEST_P(ModelCase, PaddedInputsMatchScalarOracle) {
  const auto config = fixtures::tiny_config(GetParam());
  CisumModel model(config);
  fixtures::randomize(model.parameters(), 4);
  auto ex = fixtures::tiny_example(config, 20);
  ex.input.text_mask = {1, 1, 1, 0, 0};
  ex.input.images = fixtures::random_matrix(3, config.d_v, 21);
  ex.input.image_mask = {1, 0, 1};
  ex.teacher.descriptions.insert(ex.teacher.descriptions.begin() + 1, std::vector<int>{});

  Tape tape;
  const auto g = model.forward_graph(tape, ex.input, ex.teacher);
  const auto ref = oracle::ScalarModel(model.parameters(), config).forward(ex.input, ex.teacher);
  EXPECT_LT(oracle::max_abs_diff(ref.summary_log_probs, g.summary_log_probs.value()), 1e-9);
  EXPECT_FALSE(g.description_log_probs[1].valid());
  EXPECT_LT(oracle::max_abs_diff(ref.description_log_probs[2], g.description_log_probs[2].value()), 1e-9);
  EXPECT_LT(oracle::max_abs_diff({ref.image_log_scores}, g.image_log_scores.value()), 1e-9);
  EXPECT_TRUE(std::isinf(g.image_log_scores.value()(0, 1)));
}

INSTANTIATE_TEST_SUITE_P(Heads, ModelCase, ::testing::Values(1, 2));

TEST(Attention, MatchesNaiveLoopsIncludingWeights) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  fixtures::randomize(model.parameters(), 8);
  const Matrix q = fixtures::random_matrix(3, config.d_h, 1);
  const Matrix kv = fixtures::random_matrix(5, config.d_h, 2);
  const cisum::Mask mask{1, 1, 0, 1, 0};

  Tape tape;
  cisum::model::AttentionTrace trace;
  const Var out = cisum::model::multi_head_attention(tape, model.layout().text_encoder[0].attention, tape.constant(q),
                                                     tape.constant(kv), mask, false, &trace);
  std::vector<oracle::Mat> weights;
  const auto ref = oracle::ScalarModel(model.parameters(), config)
                       .attention(oracle::from_eigen(q), oracle::from_eigen(kv), mask, false,
                                  "text_encoder.0.attn", &weights);
  EXPECT_LT(oracle::max_abs_diff(ref, out.value()), 1e-12);
  ASSERT_EQ(trace.weights.size(), 2u);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_LT(oracle::max_abs_diff(weights[h], trace.weights[h]), 1e-12);
    for (int i = 0; i < 3; ++i) {
      EXPECT_EQ(trace.weights[h](i, 2), 0.0);
      EXPECT_EQ(trace.weights[h](i, 4), 0.0);
      EXPECT_NEAR(trace.weights[h].row(i).sum(), 1.0, 1e-12);
    }
  }
}

TEST(Attention, RejectsMismatchedWidths) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  Tape tape;
  EXPECT_THROW(cisum::model::multi_head_attention(tape, model.layout().text_encoder[0].attention,
                                                  tape.constant(Matrix::Ones(2, 8)), tape.constant(Matrix::Ones(2, 6)),
                                                  {}, false),
               cisum::ConfigError);
}

TEST(NoisyFilter, TraceMatchesOracleGate) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  fixtures::randomize(model.parameters(), 12);
  const Matrix text = fixtures::random_matrix(5, config.d_h, 3);
  const Matrix vis = fixtures::random_matrix(2, config.d_h, 4);

  Tape tape;
  cisum::model::FilterTrace trace;
  const auto fused = cisum::model::noisy_filter_fuse(tape, tape.constant(text), {}, tape.constant(vis), {},
                                                     model.layout().fusion, 1, &trace);
  const oracle::ScalarModel scalar(model.parameters(), config);
  const auto [h, g] = scalar.fuse(oracle::from_eigen(text), {}, oracle::from_eigen(vis), {});
  EXPECT_LT(oracle::max_abs_diff(h, fused.text.value()), 1e-6);
  EXPECT_LT(oracle::max_abs_diff(g, fused.visual.value()), 1e-6);

  const Matrix& gate = trace.text_gate[0];
  const Matrix& mem = trace.text_visual_memory[0];
  for (cisum::Index i = 0; i < gate.size(); ++i) {
    EXPECT_NEAR(gate.data()[i], 1.0 / (1.0 + std::exp(-mem.data()[i])), 1e-12);
    EXPECT_GT(gate.data()[i], 0.0);
    EXPECT_LT(gate.data()[i], 1.0);
  }
}

Matrix norm_rows(const Matrix& x, const cisum::model::Parameter& gain, const cisum::model::Parameter& shift) {
  Matrix out = x;
  for (cisum::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    out.row(i) = ((x.row(i).array() - mu) / std::sqrt(var + 1e-5)) * gain.value.row(0).array() +
                 shift.value.row(0).array();
  }
  return out;
}

TEST(NoisyFilter, PinnedGateSelectsMemories) {
  const auto config = fixtures::tiny_config(2);
  for (double pin : {-1e3, 1e3}) {
    CisumModel model(config);
    fixtures::randomize(model.parameters(), 13);
    auto& bias = model.parameters().at("fusion.0.text_branch.visual_memory.out.bias");
    bias.value.setConstant(pin);
    Tape tape;
    cisum::model::FilterTrace trace;
    const auto fused = cisum::model::noisy_filter_fuse(tape, tape.constant(fixtures::random_matrix(5, 8, 1)), {},
                                                       tape.constant(fixtures::random_matrix(2, 8, 2)), {},
                                                       model.layout().fusion, 1, &trace);
    const auto& gain = model.parameters().at("fusion.0.text_branch.norm.gain");
    const auto& shift = model.parameters().at("fusion.0.text_branch.norm.shift");
    const Matrix expected = pin < 0 ? norm_rows(trace.text_text_memory[0], gain, shift)
                                    : norm_rows(trace.text_visual_memory[0] + trace.text_text_memory[0], gain, shift);
    EXPECT_LT(fixtures::max_abs(expected, fused.text.value()), 1e-9) << "pin " << pin;
  }
}

TEST(NoisyFilter, ClosedGateIgnoresVisualMemory) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  fixtures::randomize(model.parameters(), 15);
  model.parameters().at("fusion.0.text_branch.visual_memory.out.bias").value.setConstant(-1e3);
  auto text_out = [&] {
    Tape tape;
    return Matrix(cisum::model::noisy_filter_fuse(tape, tape.constant(fixtures::random_matrix(5, 8, 1)), {},
                                                  tape.constant(fixtures::random_matrix(2, 8, 2)), {},
                                                  model.layout().fusion, 1)
                      .text.value());
  };
  const Matrix before = text_out();
  model.parameters().at("fusion.0.text_branch.visual_memory.in.weight").value.array() += 0.3;
  EXPECT_EQ(text_out(), before);
}

TEST(ImageSelector, MatchesOracleAndIsDistribution) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  fixtures::randomize(model.parameters(), 14);
  const Matrix g = fixtures::random_matrix(4, 8, 5);
  const Matrix g_enc = fixtures::random_matrix(4, 8, 6);
  const cisum::Mask mask{1, 1, 0, 1};
  Tape tape;
  const Var scores = cisum::model::image_log_scores(tape, model.layout().image_selector, tape.constant(g),
                                                    tape.constant(g_enc), mask);
  const auto ref = oracle::ScalarModel(model.parameters(), config)
                       .image_log_scores(oracle::from_eigen(g), oracle::from_eigen(g_enc), mask);
  EXPECT_LT(oracle::max_abs_diff({ref}, scores.value()), 1e-6);
  const Matrix p = cisum::model::softmax_rows_from_log(scores.value());
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_EQ(p(0, 2), 0.0);
}

TEST(ImageSelector, NoImagesIsContractViolation) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  Tape tape;
  EXPECT_THROW(cisum::model::image_log_scores(tape, model.layout().image_selector, tape.constant(Matrix(0, 8)),
                                              tape.constant(Matrix(0, 8)), {}),
               cisum::ContractViolation);
}

TEST(Decoder, IsCausal) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  fixtures::randomize(model.parameters(), 15);
  const auto ex = fixtures::tiny_example(config, 30);
  auto changed = ex.teacher;
  changed.summary[3] = (changed.summary[3] + 1 - 4) % 8 + 4;
  changed.descriptions[0][2] = (changed.descriptions[0][2] + 1 - 4) % 8 + 4;

  const auto a = model.forward(ex.input, &ex.teacher);
  const auto b = model.forward(ex.input, &changed);
  EXPECT_EQ(a.summary_dists.topRows(3), b.summary_dists.topRows(3));
  EXPECT_NE(a.summary_dists.row(3), b.summary_dists.row(3));
  EXPECT_EQ(a.desc_dists[0].topRows(2), b.desc_dists[0].topRows(2));
  EXPECT_EQ(a.desc_dists[1], b.desc_dists[1]);
}

TEST(Model, PaddingDoesNotLeak) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  fixtures::randomize(model.parameters(), 16);
  const auto ex = fixtures::tiny_example(config, 40);
  const auto base = model.forward(ex.input, &ex.teacher);

  auto padded_input = ex.input;
  padded_input.tokens.insert(padded_input.tokens.end(), {7, 9});
  padded_input.text_mask = {1, 1, 1, 1, 1, 0, 0};
  Matrix images(3, config.d_v);
  images << ex.input.images, fixtures::random_matrix(1, config.d_v, 99);
  padded_input.images = images;
  padded_input.image_mask = {1, 1, 0};
  auto padded_teacher = ex.teacher;
  padded_teacher.descriptions.push_back({});

  const auto padded = model.forward(padded_input, &padded_teacher);
  EXPECT_LT(fixtures::max_abs(base.summary_dists, padded.summary_dists), 1e-12);
  for (int m = 0; m < 2; ++m) EXPECT_LT(fixtures::max_abs(base.desc_dists[m], padded.desc_dists[m]), 1e-12);
  EXPECT_LT((base.image_scores - padded.image_scores.head(2)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(padded.image_scores(2), 0.0);
}

TEST(Model, ImagePermutationPermutesOutputs) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  fixtures::randomize(model.parameters(), 17);
  auto ex = fixtures::tiny_example(config, 50);
  const auto a = model.forward(ex.input, &ex.teacher);

  Matrix swapped(2, config.d_v);
  swapped << ex.input.images.row(1), ex.input.images.row(0);
  ex.input.images = swapped;
  std::swap(ex.teacher.descriptions[0], ex.teacher.descriptions[1]);
  const auto b = model.forward(ex.input, &ex.teacher);

  EXPECT_LT(fixtures::max_abs(a.summary_dists, b.summary_dists), 1e-12);
  EXPECT_NEAR(a.image_scores(0), b.image_scores(1), 1e-12);
  EXPECT_NEAR(a.image_scores(1), b.image_scores(0), 1e-12);
  EXPECT_LT(fixtures::max_abs(a.desc_dists[0], b.desc_dists[1]), 1e-12);
}

TEST(Model, OutputsAreDistributions) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  const auto ex = fixtures::tiny_example(config, 60);
  const auto out = model.forward(ex.input, &ex.teacher);
  ASSERT_EQ(out.summary_dists.rows(), 4);
  ASSERT_EQ(out.summary_dists.cols(), config.vocab_size);
  for (cisum::Index i = 0; i < out.summary_dists.rows(); ++i) {
    EXPECT_NEAR(out.summary_dists.row(i).sum(), 1.0, 1e-12);
    EXPECT_GE(out.summary_dists.row(i).minCoeff(), 0.0);
  }
  EXPECT_NEAR(out.image_scores.sum(), 1.0, 1e-12);
}

TEST(Model, SameSeedSameParametersAndOutputs) {
  const auto config = fixtures::tiny_config(2);
  CisumModel a(config);
  CisumModel b(config);
  ASSERT_EQ(a.parameters().all().size(), b.parameters().all().size());
  for (std::size_t i = 0; i < a.parameters().all().size(); ++i) {
    EXPECT_EQ(a.parameters().all()[i].name, b.parameters().all()[i].name);
    EXPECT_EQ(a.parameters().all()[i].value, b.parameters().all()[i].value);
  }
  const auto ex = fixtures::tiny_example(config, 70);
  const auto x = a.forward(ex.input, nullptr);
  const auto y = b.forward(ex.input, nullptr);
  EXPECT_EQ(x.summary_tokens, y.summary_tokens);
  EXPECT_EQ(x.summary_dists, y.summary_dists);
  EXPECT_EQ(x.selected_image, y.selected_image);

  auto other = config;
  other.seed = 6;
  CisumModel c(other);
  EXPECT_NE(a.parameters().at("summary_head.projection").value, c.parameters().at("summary_head.projection").value);
}

TEST(Model, GreedyTokensAreRowArgmaxes) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  fixtures::randomize(model.parameters(), 18);
  const auto ex = fixtures::tiny_example(config, 80);
  const auto out = model.forward(ex.input, nullptr);
  ASSERT_LE(static_cast<int>(out.summary_tokens.size()), config.max_summary_len);
  for (std::size_t t = 0; t < out.summary_tokens.size(); ++t) {
    cisum::Index best;
    out.summary_dists.row(static_cast<cisum::Index>(t)).maxCoeff(&best);
    EXPECT_EQ(out.summary_tokens[t], best);
    EXPECT_NE(out.summary_tokens[t], cisum::model::kEos);
  }
  cisum::Index best_image;
  out.image_scores.maxCoeff(&best_image);
  EXPECT_EQ(out.selected_image, best_image);
  EXPECT_EQ(out.description_tokens.size(), 2u);
}

TEST(Model, OutOfVocabularyIdsReadUnkRow) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  Tape tape;
  const std::vector<int> ids{99, cisum::model::kUnk};
  const Var e = model.embed_tokens(tape, ids);
  const Matrix& pos = model.parameters().at("embed.positions").value;
  EXPECT_LT(fixtures::max_abs(e.value().row(0) - pos.row(0), e.value().row(1) - pos.row(1)), 1e-12);
}

TEST(Model, ContractViolations) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  auto ex = fixtures::tiny_example(config, 90);

  auto empty = ex.input;
  empty.tokens.clear();
  EXPECT_THROW(model.forward(empty, nullptr), cisum::ContractViolation);

  auto long_text = ex.input;
  long_text.tokens.assign(static_cast<std::size_t>(config.max_text_len + 1), 5);
  EXPECT_THROW(model.forward(long_text, nullptr), cisum::ContractViolation);

  auto wrong_dim = ex.input;
  wrong_dim.images = Matrix::Ones(2, config.d_v + 1);
  EXPECT_THROW(model.forward(wrong_dim, nullptr), cisum::ContractViolation);

  auto all_masked = ex.input;
  all_masked.image_mask = {0, 0};
  EXPECT_THROW(model.forward(all_masked, nullptr), cisum::ContractViolation);

  auto no_bos = ex.teacher;
  no_bos.summary[0] = 5;
  EXPECT_THROW(model.forward(ex.input, &no_bos), cisum::ContractViolation);
}

TEST(Model, InvalidConfigIsRejected) {
  auto config = fixtures::tiny_config(3);
  EXPECT_THROW(CisumModel{config}, cisum::ConfigError);
  config = fixtures::tiny_config(2);
  config.vocab_size = 0;
  EXPECT_THROW(CisumModel{config}, cisum::ConfigError);
}

TEST(Model, TrmStackWithZeroLayersIsIdentity) {
  const auto config = fixtures::tiny_config(2);
  CisumModel model(config);
  Tape tape;
  const Matrix x = fixtures::random_matrix(3, 8, 1);
  const Var y = cisum::model::trm_stack(tape, tape.constant(x), {}, model.layout().text_encoder, 0);
  EXPECT_EQ(y.value(), x);
  EXPECT_THROW(cisum::model::trm_stack(tape, tape.constant(x), {}, model.layout().text_encoder, 2),
               cisum::ConfigError);
}

}  // namespace
