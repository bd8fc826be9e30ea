#include "cisum/training.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "cisum/errors.hpp"
#include "cisum/rng.hpp"

namespace cisum::training {

using model::Tape;
using model::Var;

LossTargets targets_of(const EncodedArticle& e) {
  return {e.summary_target, e.description_targets, e.gold_image};
}

namespace {

std::vector<int> pick_index(const std::vector<int>& gold) {
  std::vector<int> idx(gold);
  for (int& t : idx) {
    if (t == model::kPad) t = -1;
  }
  return idx;
}

long non_pad(const std::vector<int>& v) {
  long n = 0;
  for (int t : v) n += t != model::kPad;
  return n;
}

double normaliser(LossNormalization norm, long count) {
  return norm == LossNormalization::kTokenMean ? 1.0 / static_cast<double>(count) : 1.0;
}

double stream_nll(const Matrix& dists, const std::vector<int>& gold, const char* what) {
  if (dists.rows() < static_cast<Index>(gold.size())) {
    throw ContractViolation(std::string(what) + ": fewer distribution rows than target tokens");
  }
  double sum = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (gold[s] == model::kPad) continue;
    if (gold[s] < 0 || gold[s] >= dists.cols()) throw ContractViolation(std::string(what) + ": target outside vocabulary");
    sum -= std::log(dists(static_cast<Index>(s), gold[s]));
  }
  return sum;
}

}  // namespace

TaskLosses task_losses(const model::TripleOutput& output, const LossTargets& targets, LossNormalization norm) {
  TaskLosses out;
  const long n_summary = non_pad(targets.summary);
  if (n_summary == 0) throw ContractViolation("task_losses: empty summary target");
  out.l_text = stream_nll(output.summary_dists, targets.summary, "summary") * normaliser(norm, n_summary);

  long n_desc = 0;
  double desc = 0;
  for (std::size_t i = 0; i < targets.descriptions.size(); ++i) {
    if (non_pad(targets.descriptions[i]) == 0) continue;
    if (i >= output.desc_dists.size()) throw ContractViolation("task_losses: missing description stream");
    n_desc += non_pad(targets.descriptions[i]);
    desc += stream_nll(output.desc_dists[i], targets.descriptions[i], "description");
  }
  if (n_desc == 0) throw ContractViolation("task_losses: empty description targets");
  out.l_visual = desc * normaliser(norm, n_desc);

  if (targets.gold_image < 0 || targets.gold_image >= output.image_scores.size()) {
    throw ContractViolation("task_losses: gold image index out of range");
  }
  out.l_image = -std::log(output.image_scores(targets.gold_image));
  return out;
}

TaskLossGraph task_loss_graph(const model::ForwardGraph& graph, const LossTargets& targets, LossNormalization norm) {
  TaskLossGraph out;
  const long n_summary = non_pad(targets.summary);
  if (n_summary == 0) throw ContractViolation("task_losses: empty summary target");
  out.l_text = ag::scale(ag::sum_all(ag::pick(graph.summary_log_probs, pick_index(targets.summary))),
                         -normaliser(norm, n_summary));

  long n_desc = 0;
  std::vector<Var> parts;
  for (std::size_t i = 0; i < targets.descriptions.size(); ++i) {
    const long n = non_pad(targets.descriptions[i]);
    if (n == 0) continue;
    if (i >= graph.description_log_probs.size() || !graph.description_log_probs[i].valid()) {
      throw ContractViolation("task_losses: missing description stream");
    }
    n_desc += n;
    parts.push_back(ag::sum_all(ag::pick(graph.description_log_probs[i], pick_index(targets.descriptions[i]))));
  }
  if (n_desc == 0) throw ContractViolation("task_losses: empty description targets");
  Var desc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) desc = ag::add(desc, parts[i]);
  out.l_visual = ag::scale(desc, -normaliser(norm, n_desc));

  if (targets.gold_image < 0 || targets.gold_image >= graph.image_log_scores.cols()) {
    throw ContractViolation("task_losses: gold image index out of range");
  }
  const std::vector<int> gold{targets.gold_image};
  out.l_image = ag::scale(ag::pick(graph.image_log_scores, gold), -1.0);
  return out;
}

// ---- DWA -------------------------------------------------------------------

DwaState::DwaState(double temperature) : temperature_(temperature) {
  if (!(temperature > 0)) throw ConfigError("dwa temperature must be positive");
}

void DwaState::push(const TaskLosses& losses) {
  history_[1] = history_[0];
  history_[0] = losses;
  ++steps_;
}

TaskWeights dwa_weights(const DwaState& state) {
  if (state.steps() < 2) return {1, 1, 1};
  const auto last = state.previous(0).as_array();
  const auto before = state.previous(1).as_array();
  std::array<double, 3> e{};
  double total = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double w = before[k] < 1e-12 ? 1.0 : last[k] / before[k];
    e[k] = std::exp(w / state.temperature());
    total += e[k];
  }
  TaskWeights out{};
  for (std::size_t k = 0; k < 3; ++k) out[k] = 3.0 * e[k] / total;
  return out;
}

double global_loss(const TaskLosses& l, const TaskWeights& w) {
  return w[0] * l.l_text + w[1] * l.l_visual + w[2] * l.l_image;
}

double learning_rate(const TrainConfig& c, int epoch) {
  return c.learning_rate * std::pow(c.lr_decay, static_cast<double>(epoch / c.lr_decay_every));
}

// ---- optimisation ----------------------------------------------------------

double clip_gradients(model::ParameterSet& params, double max_norm) {
  double sq = 0;
  for (auto& p : params.all()) {
    if (p.grad.size()) sq += p.grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double s = max_norm / norm;
    for (auto& p : params.all()) {
      if (p.grad.size()) p.grad *= s;
    }
  }
  return norm;
}

void Adam::step(model::ParameterSet& params, double lr) {
  auto& all = params.all();
  if (m_.empty()) {
    for (auto& p : all) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (m_.size() != all.size()) throw ContractViolation("Adam: parameter set changed between steps");
  ++t_;
  const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  std::size_t i = 0;
  for (auto& p : all) {
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    ++i;
    if (p.grad.size() == 0) p.zero_grad();
    m = b1 * m + (1.0 - b1) * p.grad;
    v = b2 * v + (1.0 - b2) * p.grad.cwiseProduct(p.grad);
    const double eps = config_.adam_eps;
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

// ---- training loop ---------------------------------------------------------

nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["l_text"] = r.losses.l_text;
  j["l_visual"] = r.losses.l_visual;
  j["l_image"] = r.losses.l_image;
  j["lambda"] = r.lambda;
  j["lr"] = r.lr;
  return j;
}

std::vector<EpochRecord> train(model::CisumModel& model, const std::vector<EncodedArticle>& data,
                               const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (data.empty()) throw ContractViolation("train: empty corpus");
  Adam adam(config);
  DwaState dwa(model.config().dwa_temperature);
  auto& params = model.parameters();
  std::vector<EpochRecord> curve;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lambda = dwa_weights(dwa);
    rec.lr = learning_rate(config, epoch);
    const auto batches = make_batches(data, config.batch_size, derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    std::array<double, 3> sums{0, 0, 0};
    int step = 0;
    for (const auto& batch : batches) {
      params.zero_grad();
      const double inv = 1.0 / static_cast<double>(batch.items.size());
      for (const auto& item : batch.items) {
        const std::string where = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
        Tape tape;
        model::ForwardGraph graph;
        try {
          graph = model.forward_graph(tape, item.input, item.teacher);
        } catch (const NumericError& e) {
          throw NumericError("training diverged at " + where + ": " + e.what());
        }
        const auto l = task_loss_graph(graph, targets_of(item), config.loss_normalization);
        const Var total = ag::add(ag::add(ag::scale(l.l_text, rec.lambda[0]), ag::scale(l.l_visual, rec.lambda[1])),
                                  ag::scale(l.l_image, rec.lambda[2]));
        const double value = total.value()(0, 0);
        if (!std::isfinite(value)) throw NumericError("training diverged: non-finite loss at " + where);
        sums[0] += l.l_text.value()(0, 0);
        sums[1] += l.l_visual.value()(0, 0);
        sums[2] += l.l_image.value()(0, 0);
        tape.backward(total, inv);
      }
      clip_gradients(params, config.clip_norm);
      adam.step(params, rec.lr);
      if (hooks.on_step) hooks.on_step(epoch, step, rec.lambda);
      ++step;
    }
    const double n = static_cast<double>(data.size());
    rec.losses = {sums[0] / n, sums[1] / n, sums[2] / n};
    rec.global = global_loss(rec.losses, rec.lambda);
    dwa.push(rec.losses);
    spdlog::info("epoch {} l_text {:.4f} l_visual {:.4f} l_image {:.4f} lr {:.3g}", epoch, rec.losses.l_text,
                 rec.losses.l_visual, rec.losses.l_image, rec.lr);
    if (hooks.curve) *hooks.curve << to_json(rec).dump() << '\n';
    if (hooks.on_epoch) hooks.on_epoch(rec);
    curve.push_back(rec);
  }
  return curve;
}

TeacherForcedAccuracy teacher_forced_accuracy(const model::CisumModel& model, const std::vector<EncodedArticle>& data) {
  long s_hit = 0, s_total = 0, d_hit = 0, d_total = 0;
  auto score = [](const Matrix& dists, const std::vector<int>& gold, long& hit, long& total) {
    for (std::size_t s = 0; s < gold.size(); ++s) {
      if (gold[s] == model::kPad) continue;
      Index best = 0;
      dists.row(static_cast<Index>(s)).maxCoeff(&best);
      hit += best == gold[s];
      ++total;
    }
  };
  for (const auto& e : data) {
    const auto out = model.forward(e.input, &e.teacher);
    score(out.summary_dists, e.summary_target, s_hit, s_total);
    for (std::size_t i = 0; i < e.description_targets.size(); ++i) {
      if (out.desc_dists[i].size()) score(out.desc_dists[i], e.description_targets[i], d_hit, d_total);
    }
  }
  return {s_total ? static_cast<double>(s_hit) / static_cast<double>(s_total) : 0.0,
          d_total ? static_cast<double>(d_hit) / static_cast<double>(d_total) : 0.0};
}

std::vector<int> predicted_images(const model::CisumModel& model, const std::vector<EncodedArticle>& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& e : data) {
    Tape tape;
    const auto enc = model.encode(tape, e.input);
    const Vector scores = model.select_image(tape, enc);
    Index best = 0;
    for (Index i = 1; i < scores.size(); ++i) {
      if (scores(i) > scores(best)) best = i;
    }
    out.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace cisum::training
