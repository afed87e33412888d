#include "subilstm/scheduler.hpp"

#include <omp.h>

#include <algorithm>
#include <array>
#include <numeric>
#include <stdexcept>

namespace subi {

namespace {

void check_lengths(const std::vector<std::int64_t>& lengths) {
  if (lengths.empty()) throw std::invalid_argument("empty batch");
  for (auto l : lengths) {
    if (l < 1) throw std::invalid_argument("zero-length sentence");
  }
}

}  // namespace

SuffixPlan build_plan(const std::vector<std::int64_t>& true_lengths,
                      std::int64_t max_pass_width, bool merge) {
  check_lengths(true_lengths);
  const auto bsz = static_cast<std::int64_t>(true_lengths.size());
  if (max_pass_width < 1) throw std::invalid_argument("build_plan: budget < 1");
  if (max_pass_width < bsz) throw std::invalid_argument("build_plan: budget below batch size");

  SuffixPlan plan;
  plan.lengths = true_lengths;
  plan.n_max = *std::max_element(true_lengths.begin(), true_lengths.end());
  plan.width_budget = max_pass_width;
  plan.merged = merge;

  // Length groups, longest first. Group L holds the one suffix of length L
  // from every sentence long enough to have it.
  std::vector<std::vector<SliceRef>> groups;
  groups.reserve(static_cast<std::size_t>(plan.n_max));
  for (std::int64_t len = plan.n_max; len >= 1; --len) {
    std::vector<SliceRef> group;
    for (std::int64_t s = 0; s < bsz; ++s) {
      const auto sl = true_lengths[static_cast<std::size_t>(s)];
      if (sl >= len) {
        group.push_back(SliceRef{static_cast<std::int32_t>(s),
                                 static_cast<std::int32_t>(sl - len),
                                 static_cast<std::int32_t>(len)});
      }
    }
    groups.push_back(std::move(group));
  }

  if (!merge) {
    for (auto& g : groups) plan.passes.push_back(Pass{std::move(g)});
    return plan;
  }

  Pass cur;
  for (auto& g : groups) {
    if (!cur.slices.empty() &&
        static_cast<std::int64_t>(cur.slices.size() + g.size()) > max_pass_width) {
      plan.passes.push_back(std::move(cur));
      cur = Pass{};
    }
    cur.slices.insert(cur.slices.end(), g.begin(), g.end());
  }
  if (!cur.slices.empty()) plan.passes.push_back(std::move(cur));
  return plan;
}

PlanStats plan_stats(const SuffixPlan& plan) {
  PlanStats st;
  st.num_passes = static_cast<std::int64_t>(plan.passes.size());
  for (const auto& pass : plan.passes) {
    st.max_pass_width =
        std::max(st.max_pass_width, static_cast<std::int64_t>(pass.slices.size()));
    for (const auto& s : pass.slices) st.total_token_steps += s.length;
  }
  std::int64_t expected = 0;
  for (auto l : plan.lengths) expected += l * (l + 1) / 2;
  if (st.total_token_steps != expected) {
    throw std::logic_error("plan_stats: token-step conservation violated");
  }
  return st;
}

EmbeddedBatch make_embedded_batch(Tensor flat, std::vector<std::int64_t> lengths) {
  check_lengths(lengths);
  EmbeddedBatch eb;
  eb.offsets.reserve(lengths.size());
  std::int64_t off = 0;
  for (auto l : lengths) {
    eb.offsets.push_back(off);
    off += l;
  }
  if (flat.rank() != 2 || flat.dim(0) != off) {
    throw std::invalid_argument("make_embedded_batch: flat rows do not match lengths");
  }
  eb.flat = std::move(flat);
  eb.lengths = std::move(lengths);
  return eb;
}

namespace {

bool recording(const EmbeddedBatch& eb, const LstmParams& p) {
  return eb.flat.on_tape() || p.wt.on_tape() || p.ut.on_tape() || p.b.on_tape();
}

// Runs one right-aligned pass; returns the final hidden states, one row per
// slice in pass order.
Tensor run_pass(const EmbeddedBatch& eb, const Pass& pass, const LstmParams& params) {
  const auto width = static_cast<std::int64_t>(pass.slices.size());
  const auto t_max = static_cast<std::int64_t>(pass.slices[0].length);

  // Step-major gather of every live slice's token.
  std::vector<std::int64_t> idx;
  std::vector<std::int64_t> live_at_step(static_cast<std::size_t>(t_max));
  for (std::int64_t t = 0; t < t_max; ++t) {
    std::int64_t live = 0;
    for (const auto& s : pass.slices) {
      if (s.length < t_max - t) break;  // sorted by length desc
      idx.push_back(eb.row(s.sentence, s.start + t - (t_max - s.length)));
      ++live;
    }
    live_at_step[static_cast<std::size_t>(t)] = live;
  }

  Tensor states = lstm_pass(gather_rows(eb.flat, std::move(idx)), std::move(live_at_step), params);
  return slice_rows(states, states.dim(0) - width, width);
}

}  // namespace

Tensor execute_plan(const EmbeddedBatch& batch, const SuffixPlan& plan,
                    const LstmParams& params, const SchedOptions& opts) {
  if (plan.lengths != batch.lengths) {
    throw std::invalid_argument("execute_plan: plan was built for a different batch");
  }
  const auto num_passes = plan.passes.size();
  std::vector<Tensor> finals(num_passes);

  const bool parallel = opts.parallel_passes && !recording(batch, params) &&
                        !omp_in_parallel() && num_passes > 1;
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t p = 0; p < num_passes; ++p) {
      finals[p] = run_pass(batch, plan.passes[p], params);
    }
  } else {
    for (std::size_t p = 0; p < num_passes; ++p) {
      finals[p] = run_pass(batch, plan.passes[p], params);
    }
  }

  // Route each slice's final state to output row offset + start.
  std::vector<std::int64_t> perm(static_cast<std::size_t>(batch.total_tokens()));
  std::int64_t src = 0;
  for (std::size_t p = 0; p < num_passes; ++p) {
    for (const auto& s : plan.passes[p].slices) {
      perm[static_cast<std::size_t>(batch.offsets[static_cast<std::size_t>(s.sentence)] +
                                    s.start)] = src++;
    }
  }
  return gather_rows(concat_rows(finals), std::move(perm));
}

Tensor prefix_all(const EmbeddedBatch& batch, const LstmParams& params) {
  const auto bsz = batch.batch_size();
  // Longest sentences first so the live set is always a leading block.
  std::vector<std::int64_t> order(static_cast<std::size_t>(bsz));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return batch.lengths[static_cast<std::size_t>(a)] > batch.lengths[static_cast<std::size_t>(b)];
  });
  const auto t_max = batch.lengths[static_cast<std::size_t>(order[0])];

  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(batch.total_tokens()));
  std::vector<std::int64_t> live_at_step(static_cast<std::size_t>(t_max));
  for (std::int64_t t = 0; t < t_max; ++t) {
    std::int64_t live = 0;
    for (auto s : order) {
      if (batch.lengths[static_cast<std::size_t>(s)] <= t) break;
      idx.push_back(batch.row(s, t));
      ++live;
    }
    live_at_step[static_cast<std::size_t>(t)] = live;
  }

  Tensor states = lstm_pass(gather_rows(batch.flat, std::move(idx)), live_at_step, params);

  std::vector<std::int64_t> perm(static_cast<std::size_t>(batch.total_tokens()));
  std::int64_t src = 0;
  for (std::int64_t t = 0; t < t_max; ++t) {
    for (std::int64_t r = 0; r < live_at_step[static_cast<std::size_t>(t)]; ++r) {
      const auto sent = order[static_cast<std::size_t>(r)];
      perm[static_cast<std::size_t>(batch.offsets[static_cast<std::size_t>(sent)] + t)] = src++;
    }
  }
  return gather_rows(states, std::move(perm));
}

namespace {

// Flat index map sending each sentence's position i to position n-1-i.
std::vector<std::int64_t> flip_index(const EmbeddedBatch& eb) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(eb.total_tokens()));
  for (std::int64_t s = 0; s < eb.batch_size(); ++s) {
    const auto off = eb.offsets[static_cast<std::size_t>(s)];
    const auto len = eb.lengths[static_cast<std::size_t>(s)];
    for (std::int64_t i = 0; i < len; ++i) {
      idx[static_cast<std::size_t>(off + i)] = off + len - 1 - i;
    }
  }
  return idx;
}

std::int64_t effective_budget(const SchedOptions& opts, std::int64_t bsz) {
  return opts.width_budget > 0 ? opts.width_budget : 4 * bsz;
}

Tensor subilstm_flat(const EmbeddedBatch& batch, const LstmParams& fwd_prefix,
                     const LstmParams& fwd_suffix, const LstmParams& rev_prefix,
                     const LstmParams& rev_suffix, Combiner combiner,
                     const SchedOptions& opts) {
  const SuffixPlan plan =
      build_plan(batch.lengths, effective_budget(opts, batch.batch_size()), opts.merge);
  const EmbeddedBatch rev = batch.reversed_view();

  Tensor hp_f = prefix_all(batch, fwd_prefix);
  Tensor hs_f = execute_plan(batch, plan, fwd_suffix, opts);
  // In the reversed orientation, the plain pass yields the reverse-direction
  // suffix family and the suffix plan yields the reverse prefix family.
  Tensor hs_r = gather_rows(prefix_all(rev, rev_suffix), flip_index(batch));
  Tensor hp_r = gather_rows(execute_plan(rev, plan, rev_prefix, opts), flip_index(batch));

  return concat_cols(std::array<Tensor, 2>{combine(hp_f, hs_f, combiner),
                                           combine(hp_r, hs_r, combiner)});
}

Tensor bilstm_flat(const EmbeddedBatch& batch, const LstmParams& fwd, const LstmParams& rev) {
  Tensor hp = prefix_all(batch, fwd);
  Tensor hs = gather_rows(prefix_all(batch.reversed_view(), rev), flip_index(batch));
  return concat_cols(std::array<Tensor, 2>{hp, hs});
}

}  // namespace

std::vector<ContextualReps> encode_subilstm_batched(
    const EmbeddedBatch& batch, const LstmParams& fwd_prefix, const LstmParams& fwd_suffix,
    const LstmParams& rev_prefix, const LstmParams& rev_suffix, bool tied, Combiner combiner,
    const SchedOptions& opts) {
  if (tied && (!fwd_prefix.same_storage(fwd_suffix) || !rev_prefix.same_storage(rev_suffix))) {
    throw std::invalid_argument("encode_subilstm_batched: tied flag with distinct parameters");
  }
  Tensor flat =
      subilstm_flat(batch, fwd_prefix, fwd_suffix, rev_prefix, rev_suffix, combiner, opts);
  std::vector<ContextualReps> out;
  out.reserve(static_cast<std::size_t>(batch.batch_size()));
  for (std::int64_t s = 0; s < batch.batch_size(); ++s) {
    const auto len = batch.lengths[static_cast<std::size_t>(s)];
    out.push_back(ContextualReps{
        slice_rows(flat, batch.offsets[static_cast<std::size_t>(s)], len), len});
  }
  return out;
}

Tensor encode_batch_flat(const EmbeddedBatch& batch, const EncoderParams& params,
                         const SchedOptions& opts) {
  switch (params.config.variant) {
    case EncoderVariant::kBiLstm:
      return bilstm_flat(batch, params.lstms[0], params.lstms[1]);
    case EncoderVariant::kBiLstm2Layer: {
      Tensor h1 = bilstm_flat(batch, params.lstms[0], params.lstms[1]);
      EmbeddedBatch eb2 = batch;
      eb2.flat = std::move(h1);
      eb2.reversed = false;
      return bilstm_flat(eb2, params.lstms[2], params.lstms[3]);
    }
    case EncoderVariant::kSuBiLstm:
      return subilstm_flat(batch, params.lstms[0], params.lstms[1], params.lstms[2],
                           params.lstms[3], params.config.combiner, opts);
    case EncoderVariant::kSuBiLstmTied:
      return subilstm_flat(batch, params.lstms[0], params.lstms[0], params.lstms[1],
                           params.lstms[1], params.config.combiner, opts);
  }
  throw std::invalid_argument("encode_batch_flat: unknown variant");
}

}  // namespace subi
