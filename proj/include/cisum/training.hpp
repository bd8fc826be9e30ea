#pragma once

// Multi-task losses, dynamic weight averaging, optimisation and the training
// loop for the summarisation model.

#include <array>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "cisum/config.hpp"
#include "cisum/data.hpp"
#include "cisum/model.hpp"

namespace cisum::training {

struct TaskLosses {
  double l_text = 0;
  double l_visual = 0;
  double l_image = 0;

  std::array<double, 3> as_array() const { return {l_text, l_visual, l_image}; }
};

using TaskWeights = std::array<double, 3>;

// Gold tokens per decoder stream; PAD entries are ignored.
struct LossTargets {
  std::vector<int> summary;
  std::vector<std::vector<int>> descriptions;  // one per image, empty for padded images
  int gold_image = 0;
};

LossTargets targets_of(const EncodedArticle& e);

// Negative log-likelihoods from materialised distributions. Mean mode
// averages over the non-PAD tokens of each task (description tokens of all
// image streams pooled); sum mode adds them. Throws ContractViolation when a
// task has no non-PAD target.
TaskLosses task_losses(const model::TripleOutput& output, const LossTargets& targets,
                       LossNormalization norm = LossNormalization::kTokenMean);

struct TaskLossGraph {
  model::Var l_text, l_visual, l_image;
};

// Same quantities as differentiable tape nodes.
TaskLossGraph task_loss_graph(const model::ForwardGraph& graph, const LossTargets& targets,
                              LossNormalization norm = LossNormalization::kTokenMean);

class DwaState {
 public:
  explicit DwaState(double temperature = 2.0);

  // Records the losses of the step (epoch) that just finished.
  void push(const TaskLosses& losses);
  std::size_t steps() const { return steps_; }
  double temperature() const { return temperature_; }
  // Newest first; valid when steps() > index.
  const TaskLosses& previous(std::size_t index) const { return history_[index]; }

 private:
  double temperature_;
  std::array<TaskLosses, 2> history_{};
  std::size_t steps_ = 0;
};

// lambda_k = K exp(w_k / T) / sum_i exp(w_i / T), w_k = L_k(t-1) / L_k(t-2).
// All ones until two steps are recorded; w_k = 1 when L_k(t-2) < 1e-12.
TaskWeights dwa_weights(const DwaState& state);

double global_loss(const TaskLosses& losses, const TaskWeights& weights);

// lr0 * decay^floor(epoch / every)
double learning_rate(const TrainConfig& config, int epoch);

// Scales all gradients so their global L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_gradients(model::ParameterSet& params, double max_norm);

class Adam {
 public:
  explicit Adam(const TrainConfig& config) : config_(config) {}
  void step(model::ParameterSet& params, double lr);
  long steps() const { return t_; }

 private:
  TrainConfig config_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  TaskLosses losses;  // averaged over the epoch's articles
  TaskWeights lambda{1, 1, 1};
  double lr = 0;
  double global = 0;  // lambda-weighted epoch loss
};

nlohmann::ordered_json to_json(const EpochRecord& r);

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  // Called after every optimiser step with the weights used for it.
  std::function<void(int epoch, int step, const TaskWeights&)> on_step;
  std::ostream* curve = nullptr;  // one JSON line per epoch
};

// Per-article global loss gradients, averaged over each batch, clipped, and
// applied with Adam. DWA weights are recomputed at each epoch start from the
// two previous epoch averages. Throws NumericError naming epoch and step on
// a non-finite loss.
std::vector<EpochRecord> train(model::CisumModel& model, const std::vector<EncodedArticle>& data,
                               const TrainConfig& config, const TrainHooks& hooks = {});

// Fraction of non-PAD target tokens whose argmax under teacher forcing is
// the gold token, per head.
struct TeacherForcedAccuracy {
  double summary = 0;
  double description = 0;
};
TeacherForcedAccuracy teacher_forced_accuracy(const model::CisumModel& model,
                                              const std::vector<EncodedArticle>& data);

// Argmax image under the selection head for each article.
std::vector<int> predicted_images(const model::CisumModel& model, const std::vector<EncodedArticle>& data);

}  // namespace cisum::training
