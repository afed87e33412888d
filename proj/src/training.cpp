#include "subilstm/training.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace subi {

void AdamState::reset(const std::vector<Tensor*>& params) {
  t = 0;
  m.clear();
  v.clear();
  for (const Tensor* p : params) {
    m.emplace_back(static_cast<std::size_t>(p->size()), 0.0);
    v.emplace_back(static_cast<std::size_t>(p->size()), 0.0);
  }
}

void adam_step(const std::vector<Tensor*>& params, const Gradients& grads, AdamState& state) {
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state does not match parameter list");
  }
  const auto& hy = state.hyper;
  ++state.t;
  const double bc1 = 1.0 - std::pow(hy.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(hy.beta2, static_cast<double>(state.t));

  // Optional global-norm clipping.
  double scale_g = 1.0;
  if (hy.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Tensor* p : params) {
      if (const auto* g = grads.find(p->node)) {
        for (double x : *g) sq += x * x;
      }
    }
    const double norm = std::sqrt(sq);
    if (norm > hy.clip_norm) scale_g = hy.clip_norm / norm;
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor* p = params[i];
    const auto n = p->size();
    const auto* g = grads.find(p->node);
    if (g) {
      for (double x : *g) {
        if (!std::isfinite(x)) throw std::runtime_error("adam_step: non-finite gradient");
      }
    }
    auto fresh = std::make_shared<Buffer>(*p->values);
    auto& mi = state.m[i];
    auto& vi = state.v[i];
    for (std::int64_t j = 0; j < n; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      const double gj = g ? (*g)[sj] * scale_g : 0.0;
      mi[sj] = hy.beta1 * mi[sj] + (1.0 - hy.beta1) * gj;
      vi[sj] = hy.beta2 * vi[sj] + (1.0 - hy.beta2) * gj * gj;
      const double mhat = mi[sj] / bc1;
      const double vhat = vi[sj] / bc2;
      (*fresh)[sj] -= hy.lr * mhat / (std::sqrt(vhat) + hy.eps) +
                      hy.lr * hy.weight_decay * (*fresh)[sj];
    }
    p->values = std::move(fresh);
  }
}

namespace {

template <typename Model, typename ForwardFn>
EpochRow train_epoch_impl(Model& model, const std::vector<PaddedBatch>& batches,
                          AdamState& state, Rng& rng, const TrainOptions& opts,
                          ForwardFn&& forward) {
  const auto t0 = std::chrono::steady_clock::now();
  auto params = model.trainables();
  if (!state.initialized()) state.reset(params);

  double loss_sum = 0.0;
  std::int64_t correct = 0, total = 0;
  for (const auto& batch : batches) {
    Tape tape;
    for (Tensor* p : params) tape.watch(*p);
    ForwardOptions fo;
    fo.training = true;
    fo.rng = &rng;
    fo.sched = opts.sched;
    fo.use_batched = opts.use_batched;
    Tensor logits = forward(batch, model, fo);
    Tensor loss = softmax_xent_mean(logits, batch.labels);
    if (!std::isfinite(loss.scalar())) {
      for (Tensor* p : params) p->detach();
      throw std::runtime_error("training diverged: non-finite loss at step " +
                               std::to_string(state.t + 1));
    }
    Gradients grads = backward(tape, loss);
    adam_step(params, grads, state);
    for (Tensor* p : params) p->detach();

    const auto bsz = batch.batch_size();
    loss_sum += loss.scalar() * static_cast<double>(bsz);
    const auto preds = argmax_rows(logits);
    for (std::int64_t b = 0; b < bsz; ++b) {
      correct += preds[static_cast<std::size_t>(b)] == batch.labels[static_cast<std::size_t>(b)];
    }
    total += bsz;
  }

  EpochRow row;
  row.train_loss = total > 0 ? loss_sum / static_cast<double>(total) : 0.0;
  row.train_acc = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

template <typename Model, typename ForwardFn>
EvalResult evaluate_impl(const Model& model, const LabeledCorpus& corpus,
                         std::int64_t batch_size, const TrainOptions& opts,
                         ForwardFn&& forward) {
  if (corpus.size() == 0) throw std::invalid_argument("evaluate: empty corpus");
  EvalResult res;
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (const auto& batch : make_eval_batches(corpus, batch_size)) {
    ForwardOptions fo;
    fo.training = false;
    fo.sched = opts.sched;
    fo.use_batched = opts.use_batched;
    Tensor logits = forward(batch, model, fo);
    const auto preds = argmax_rows(logits);
    for (std::int64_t b = 0; b < batch.batch_size(); ++b) {
      const auto pred = preds[static_cast<std::size_t>(b)];
      const auto gold = batch.labels[static_cast<std::size_t>(b)];
      res.correct += pred == gold;
      ++res.total;
      tp += pred == 1 && gold == 1;
      fp += pred == 1 && gold != 1;
      fn += pred != 1 && gold == 1;
    }
  }
  res.accuracy = static_cast<double>(res.correct) / static_cast<double>(res.total);
  if (corpus.num_classes() == 2) {
    const auto denom = 2 * tp + fp + fn;
    res.f1 = denom > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
  }
  return res;
}

}  // namespace

EpochRow train_epoch(ClassifierModel& model, const std::vector<PaddedBatch>& batches,
                     AdamState& state, Rng& rng, const TrainOptions& opts) {
  return train_epoch_impl(model, batches, state, rng, opts,
                          [](const PaddedBatch& b, ClassifierModel& m, const ForwardOptions& fo) {
                            return classify_forward(b, m, fo);
                          });
}

EpochRow train_epoch(SiameseModel& model, const std::vector<PaddedBatch>& batches,
                     AdamState& state, Rng& rng, const TrainOptions& opts) {
  return train_epoch_impl(model, batches, state, rng, opts,
                          [](const PaddedBatch& b, SiameseModel& m, const ForwardOptions& fo) {
                            return pair_forward(b, m, fo);
                          });
}

EvalResult evaluate(const ClassifierModel& model, const LabeledCorpus& corpus,
                    std::int64_t batch_size, const TrainOptions& opts) {
  return evaluate_impl(model, corpus, batch_size, opts,
                       [](const PaddedBatch& b, const ClassifierModel& m, const ForwardOptions& fo) {
                         return classify_forward(b, m, fo);
                       });
}

EvalResult evaluate(const SiameseModel& model, const LabeledCorpus& corpus,
                    std::int64_t batch_size, const TrainOptions& opts) {
  return evaluate_impl(model, corpus, batch_size, opts,
                       [](const PaddedBatch& b, const SiameseModel& m, const ForwardOptions& fo) {
                         return pair_forward(b, m, fo);
                       });
}

}  // namespace subi
