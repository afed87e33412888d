#pragma once

#include <optional>
#include <string>
#include <vector>

#include "subilstm/models.hpp"

namespace subi {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // decoupled decay
  double clip_norm = 0.0;      // 0 disables clipping
};

struct AdamState {
  AdamHyper hyper;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m, v;

  void reset(const std::vector<Tensor*>& params);
  bool initialized() const { return !m.empty(); }
};

// One bias-corrected update:
//   p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * weight_decay * p
// Parameters are replaced with fresh storage; gradients absent from the map
// count as zero. Throws on non-finite gradients.
void adam_step(const std::vector<Tensor*>& params, const Gradients& grads, AdamState& state);

struct EpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = -1.0;  // filled by the caller when a validation split exists
  double seconds = 0.0;
};

struct TrainOptions {
  SchedOptions sched;
  bool use_batched = true;
};

// One full pass over the batches: softmax cross-entropy loss, backward, Adam.
// Aborts with a diagnostic if the loss goes non-finite.
EpochRow train_epoch(ClassifierModel& model, const std::vector<PaddedBatch>& batches,
                     AdamState& state, Rng& rng, const TrainOptions& opts = {});
EpochRow train_epoch(SiameseModel& model, const std::vector<PaddedBatch>& batches,
                     AdamState& state, Rng& rng, const TrainOptions& opts = {});

struct EvalResult {
  double accuracy = 0.0;
  std::optional<double> f1;  // positive class = label id 1; two-class corpora only
  std::int64_t correct = 0;
  std::int64_t total = 0;
};

EvalResult evaluate(const ClassifierModel& model, const LabeledCorpus& corpus,
                    std::int64_t batch_size = 64, const TrainOptions& opts = {});
EvalResult evaluate(const SiameseModel& model, const LabeledCorpus& corpus,
                    std::int64_t batch_size = 64, const TrainOptions& opts = {});

}  // namespace subi
