#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "subilstm/data.hpp"
#include "subilstm/encoders.hpp"
#include "subilstm/scheduler.hpp"

namespace subi {

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // dropout stream; required when training with dropout > 0
  SchedOptions sched;
  bool use_batched = true;  // false = naive per-sentence encoder route
};

// Pooled-sentence classifier: embed -> dropout -> encoder -> max-pool ->
// dropout -> affine.
struct ClassifierModel {
  Tensor embedding;  // (V x d)
  bool freeze_embedding = true;
  EncoderParams encoder;
  double dropout_embed = 0.2;
  double dropout_out = 0.2;
  Tensor cls_w;  // (width x C)
  Tensor cls_b;  // (C)

  static ClassifierModel init(std::int64_t vocab_size, std::int64_t num_classes,
                              const EncoderConfig& enc, Rng& rng);

  std::int64_t num_classes() const { return cls_b.dim(0); }
  std::vector<Tensor*> trainables();
};

Tensor classify_forward(const PaddedBatch& batch, const ClassifierModel& model,
                        const ForwardOptions& opts);

// [u; v; |u-v|; u*v]
Tensor siamese_features(const Tensor& u, const Tensor& v);

// Shared-encoder pair model with ReLU hidden layers on the features.
// Dropout sits after the embedding and after each ReLU.
struct SiameseModel {
  Tensor embedding;
  bool freeze_embedding = false;
  EncoderParams encoder;
  double dropout_embed = 0.2;
  double dropout_head = 0.2;
  struct Layer {
    Tensor w;  // (in x out)
    Tensor b;  // (out)
  };
  std::vector<Layer> hidden;
  Tensor out_w, out_b;

  static SiameseModel init(std::int64_t vocab_size, std::int64_t num_classes,
                           const EncoderConfig& enc, const std::vector<std::int64_t>& head_dims,
                           Rng& rng);

  std::int64_t num_classes() const { return out_b.dim(0); }
  std::vector<Tensor*> trainables();
};

Tensor pair_forward(const PaddedBatch& batch, const SiameseModel& model,
                    const ForwardOptions& opts);

// Embeds the true (unpadded) tokens of each sentence into one flat matrix.
EmbeddedBatch embed_tokens(const Tensor& embedding, const std::vector<std::int64_t>& tokens,
                           std::int64_t n_max, const std::vector<std::int64_t>& lengths,
                           bool on_tape_only_if_trainable);

// Checkpoint: text header (config, vocab, label names, tensor manifest)
// followed by raw little-endian f64 blobs. Round-trips are bit-exact.
struct Checkpoint {
  std::string task;  // classify | pair | synthetic
  std::map<std::string, std::string> meta;
  std::optional<ClassifierModel> classifier;
  std::optional<SiameseModel> siamese;
  std::vector<std::string> vocab_tokens;
  std::vector<std::string> label_names;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace subi
