#pragma once

#include <vector>

#include "subilstm/encoders.hpp"
#include "subilstm/lstm.hpp"
#include "subilstm/tensor.hpp"

namespace subi {

// One suffix slice: tokens [start, start+length) of a sentence, positions in
// the batch's current orientation.
struct SliceRef {
  std::int32_t sentence = 0;
  std::int32_t start = 0;
  std::int32_t length = 0;
};

// Slices of one batched recurrence. Sorted by (length desc, sentence asc):
// slices are right-aligned, all ending on the final step, so shorter slices
// join the running state later from the shared zero state and no step ever
// needs masking.
struct Pass {
  std::vector<SliceRef> slices;
};

struct SuffixPlan {
  std::vector<Pass> passes;
  std::vector<std::int64_t> lengths;  // true lengths the plan was built from
  std::int64_t n_max = 0;
  std::int64_t width_budget = 0;
  bool merged = false;
};

struct PlanStats {
  std::int64_t num_passes = 0;
  std::int64_t total_token_steps = 0;
  std::int64_t max_pass_width = 0;
};

// Groups every suffix of every sentence into passes. With merge off there is
// exactly one pass per slice length (n_max passes); with merge on, groups of
// equal length are packed together and short-length groups are coalesced into
// longer passes up to the width budget, never splitting a slice.
SuffixPlan build_plan(const std::vector<std::int64_t>& true_lengths,
                      std::int64_t max_pass_width, bool merge);

// Exact counts; verifies token-step conservation against the closed form
// sum(len_i * (len_i + 1) / 2).
PlanStats plan_stats(const SuffixPlan& plan);

// A batch of sentences embedded into one flat (total_tokens x d) matrix.
// `reversed` flips the token order seen by the recurrence without moving
// data; row() maps an oriented position to its flat row.
struct EmbeddedBatch {
  Tensor flat;
  std::vector<std::int64_t> offsets;
  std::vector<std::int64_t> lengths;
  bool reversed = false;

  std::int64_t batch_size() const { return static_cast<std::int64_t>(lengths.size()); }
  std::int64_t total_tokens() const { return flat.dim(0); }
  std::int64_t row(std::int64_t sentence, std::int64_t pos) const {
    const auto s = static_cast<std::size_t>(sentence);
    return offsets[s] + (reversed ? lengths[s] - 1 - pos : pos);
  }
  EmbeddedBatch reversed_view() const {
    EmbeddedBatch e = *this;
    e.reversed = !e.reversed;
    return e;
  }
};

EmbeddedBatch make_embedded_batch(Tensor flat, std::vector<std::int64_t> lengths);

struct SchedOptions {
  bool merge = true;
  std::int64_t width_budget = 0;  // 0 -> 4x batch size
  bool parallel_passes = false;   // honored only when nothing is on a tape
};

// Final hidden state of every suffix: row (offset_i + j) holds the encoding
// of the oriented suffix of sentence i starting at position j. Exactly equal
// to running each suffix alone from the zero state.
Tensor execute_plan(const EmbeddedBatch& batch, const SuffixPlan& plan,
                    const LstmParams& params, const SchedOptions& opts = {});

// All prefix states in one left-aligned lockstep pass: row (offset_i + t)
// holds the state after consuming oriented tokens [0..t] of sentence i.
Tensor prefix_all(const EmbeddedBatch& batch, const LstmParams& params);

// Batched counterpart of encode_subilstm_naive; per-sentence results are
// exactly equal to the naive route.
std::vector<ContextualReps> encode_subilstm_batched(
    const EmbeddedBatch& batch, const LstmParams& fwd_prefix, const LstmParams& fwd_suffix,
    const LstmParams& rev_prefix, const LstmParams& rev_suffix, bool tied, Combiner combiner,
    const SchedOptions& opts = {});

// Flat (total_tokens x width) batched encoding for any variant; rows follow
// the original (unreversed) token order.
Tensor encode_batch_flat(const EmbeddedBatch& batch, const EncoderParams& params,
                         const SchedOptions& opts = {});

}  // namespace subi
