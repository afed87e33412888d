#pragma once

#include <vector>

#include "subilstm/lstm.hpp"
#include "subilstm/tensor.hpp"

namespace subi {

enum class EncoderVariant { kBiLstm, kBiLstm2Layer, kSuBiLstm, kSuBiLstmTied };
enum class Combiner { kMax, kMean, kConcat };

struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::kSuBiLstmTied;
  std::int64_t input_dim = 0;
  std::int64_t hidden_dim = 0;
  Combiner combiner = Combiner::kMax;

  // Per-token representation width: 2h for max/mean, 4h for concat.
  std::int64_t rep_width() const {
    const bool wide = combiner == Combiner::kConcat &&
                      (variant == EncoderVariant::kSuBiLstm ||
                       variant == EncoderVariant::kSuBiLstmTied);
    return (wide ? 4 : 2) * hidden_dim;
  }
};

// Trainable scalar count of the encoder described by `config` (embeddings
// and task heads excluded).
std::int64_t param_count(const EncoderConfig& config);

const char* to_string(EncoderVariant v);
const char* to_string(Combiner c);
EncoderVariant parse_variant(const std::string& s);  // bilstm | bilstm2 | subilstm | subilstm-tied
Combiner parse_combiner(const std::string& s);       // max | mean | concat

// Parameter bundle for any variant. The tied variant holds one LstmParams
// per direction and uses it for both the prefix and suffix roles, so there
// is a single gradient accumulator per direction.
struct EncoderParams {
  EncoderConfig config;
  std::vector<LstmParams> lstms;
  // kBiLstm:       [fwd, rev]
  // kBiLstm2Layer: [l1_fwd, l1_rev, l2_fwd, l2_rev]
  // kSuBiLstm:     [fwd_prefix, fwd_suffix, rev_prefix, rev_suffix]
  // kSuBiLstmTied: [fwd, rev]

  static EncoderParams init(const EncoderConfig& config, Rng& rng);

  const LstmParams& fwd_prefix() const { return lstms[0]; }
  const LstmParams& fwd_suffix() const {
    return config.variant == EncoderVariant::kSuBiLstm ? lstms[1] : lstms[0];
  }
  const LstmParams& rev_prefix() const {
    return config.variant == EncoderVariant::kSuBiLstm ? lstms[2] : lstms[1];
  }
  const LstmParams& rev_suffix() const {
    return config.variant == EncoderVariant::kSuBiLstm ? lstms[3] : lstms[1];
  }

  std::vector<Tensor*> trainables();
};

// Per-token contextual representation matrix for one sentence.
struct ContextualReps {
  Tensor H;  // (n x width)
  std::int64_t length = 0;
};

// Elementwise max / mean / concatenation of a prefix and a suffix encoding.
// The prefix is the first argument; max ties route gradient to it.
Tensor combine(const Tensor& prefix, const Tensor& suffix, Combiner mode);

// H_i = [fwd prefix state i ; rev state for suffix i..n].
ContextualReps encode_bilstm(const Tensor& seq, const LstmParams& fwd, const LstmParams& rev);

ContextualReps encode_bilstm_2layer(const Tensor& seq, const LstmParams& l1_fwd,
                                    const LstmParams& l1_rev, const LstmParams& l2_fwd,
                                    const LstmParams& l2_rev);

// Reference construction: for every position, encodes the prefix and the
// suffix in both directions with fresh zero-state passes and combines them.
// When tied is set, the prefix/suffix params of each direction must be the
// same storage.
ContextualReps encode_subilstm_naive(const Tensor& seq, const LstmParams& fwd_prefix,
                                     const LstmParams& fwd_suffix, const LstmParams& rev_prefix,
                                     const LstmParams& rev_suffix, bool tied, Combiner combiner);

// Variant dispatch over the naive per-sentence routes.
ContextualReps encode(const Tensor& seq, const EncoderParams& params);

// Coordinatewise max over the first `length` token rows (padding excluded).
Tensor pool_max(const ContextualReps& reps, std::int64_t length);

// Rows in reverse order.
Tensor reverse_rows(const Tensor& m);

}  // namespace subi
