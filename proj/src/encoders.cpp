#include "subilstm/encoders.hpp"

#include <array>
#include <numeric>
#include <stdexcept>

namespace subi {

std::int64_t param_count(const EncoderConfig& config) {
  const auto d = config.input_dim, h = config.hidden_dim;
  const auto one = [h](std::int64_t in) { return 4 * (in * h + h * h + h); };
  switch (config.variant) {
    case EncoderVariant::kBiLstm:
      return 2 * one(d);
    case EncoderVariant::kSuBiLstm:
      return 4 * one(d);
    case EncoderVariant::kSuBiLstmTied:
      return 2 * one(d);
    case EncoderVariant::kBiLstm2Layer:
      return 2 * one(d) + 2 * one(2 * h);
  }
  throw std::invalid_argument("param_count: unknown variant");
}

const char* to_string(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::kBiLstm:
      return "bilstm";
    case EncoderVariant::kBiLstm2Layer:
      return "bilstm2";
    case EncoderVariant::kSuBiLstm:
      return "subilstm";
    case EncoderVariant::kSuBiLstmTied:
      return "subilstm-tied";
  }
  return "?";
}

const char* to_string(Combiner c) {
  switch (c) {
    case Combiner::kMax:
      return "max";
    case Combiner::kMean:
      return "mean";
    case Combiner::kConcat:
      return "concat";
  }
  return "?";
}

EncoderVariant parse_variant(const std::string& s) {
  if (s == "bilstm") return EncoderVariant::kBiLstm;
  if (s == "bilstm2" || s == "bilstm-2layer") return EncoderVariant::kBiLstm2Layer;
  if (s == "subilstm") return EncoderVariant::kSuBiLstm;
  if (s == "subilstm-tied") return EncoderVariant::kSuBiLstmTied;
  throw std::invalid_argument("unknown encoder variant: " + s);
}

Combiner parse_combiner(const std::string& s) {
  if (s == "max") return Combiner::kMax;
  if (s == "mean") return Combiner::kMean;
  if (s == "concat") return Combiner::kConcat;
  throw std::invalid_argument("unknown combiner: " + s);
}

EncoderParams EncoderParams::init(const EncoderConfig& config, Rng& rng) {
  EncoderParams p;
  p.config = config;
  const auto d = config.input_dim, h = config.hidden_dim;
  switch (config.variant) {
    case EncoderVariant::kBiLstm:
    case EncoderVariant::kSuBiLstmTied:
      p.lstms = {LstmParams::init(d, h, rng), LstmParams::init(d, h, rng)};
      break;
    case EncoderVariant::kSuBiLstm:
      p.lstms = {LstmParams::init(d, h, rng), LstmParams::init(d, h, rng),
                 LstmParams::init(d, h, rng), LstmParams::init(d, h, rng)};
      break;
    case EncoderVariant::kBiLstm2Layer:
      p.lstms = {LstmParams::init(d, h, rng), LstmParams::init(d, h, rng),
                 LstmParams::init(2 * h, h, rng), LstmParams::init(2 * h, h, rng)};
      break;
  }
  return p;
}

std::vector<Tensor*> EncoderParams::trainables() {
  std::vector<Tensor*> out;
  for (auto& l : lstms) {
    for (Tensor* t : l.trainables()) out.push_back(t);
  }
  return out;
}

Tensor combine(const Tensor& prefix, const Tensor& suffix, Combiner mode) {
  switch (mode) {
    case Combiner::kMax:
      return cmax(prefix, suffix);
    case Combiner::kMean:
      return scale(add(prefix, suffix), 0.5);
    case Combiner::kConcat: {
      const std::array<Tensor, 2> parts{prefix, suffix};
      return prefix.rank() == 1 ? concat_vec(parts) : concat_cols(parts);
    }
  }
  throw std::invalid_argument("combine: unknown mode");
}

Tensor reverse_rows(const Tensor& m) {
  if (m.rank() != 2) throw std::invalid_argument("reverse_rows: expects rank-2");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(m.dim(0)));
  std::iota(idx.rbegin(), idx.rend(), 0);
  return gather_rows(m, std::move(idx));
}

ContextualReps encode_bilstm(const Tensor& seq, const LstmParams& fwd, const LstmParams& rev) {
  const auto n = seq.rank() == 2 ? seq.dim(0) : 0;
  Tensor hp = run_sequence(seq, fwd);
  Tensor hs_rev = run_sequence(reverse_rows(seq), rev);
  // Row i needs the reverse state after consuming s[n..i+1], i.e. reversed row n-1-i.
  Tensor H = concat_cols(std::array<Tensor, 2>{hp, reverse_rows(hs_rev)});
  return {H, n};
}

ContextualReps encode_bilstm_2layer(const Tensor& seq, const LstmParams& l1_fwd,
                                    const LstmParams& l1_rev, const LstmParams& l2_fwd,
                                    const LstmParams& l2_rev) {
  if (l2_fwd.input_dim != 2 * l1_fwd.hidden_dim || l2_rev.input_dim != 2 * l1_rev.hidden_dim) {
    throw std::invalid_argument("encode_bilstm_2layer: layer-2 input width must be 2h of layer 1");
  }
  ContextualReps first = encode_bilstm(seq, l1_fwd, l1_rev);
  return encode_bilstm(first.H, l2_fwd, l2_rev);
}

ContextualReps encode_subilstm_naive(const Tensor& seq, const LstmParams& fwd_prefix,
                                     const LstmParams& fwd_suffix, const LstmParams& rev_prefix,
                                     const LstmParams& rev_suffix, bool tied, Combiner combiner) {
  if (seq.rank() != 2 || seq.dim(0) < 1) {
    throw std::invalid_argument("encode_subilstm_naive: empty sequence");
  }
  if (tied &&
      (!fwd_prefix.same_storage(fwd_suffix) || !rev_prefix.same_storage(rev_suffix))) {
    throw std::invalid_argument("encode_subilstm_naive: tied flag with distinct parameters");
  }
  const auto n = seq.dim(0);
  const auto h = fwd_prefix.hidden_dim;

  // Forward-direction prefixes: one pass over s gives every h->p,i.
  Tensor hp_f = run_sequence(seq, fwd_prefix);

  // Forward-direction suffixes: a fresh zero-state pass per start position.
  std::vector<Tensor> hs_f_rows;
  hs_f_rows.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor states = run_sequence(slice_rows(seq, i, n - i), fwd_suffix);
    hs_f_rows.push_back(slice_rows(states, n - i - 1, 1));
  }
  Tensor hs_f = concat_rows(hs_f_rows);

  // Reverse-direction prefixes h<-p,i: fresh pass over s[i..1].
  std::vector<Tensor> hp_r_rows;
  hp_r_rows.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor states = run_sequence(reverse_rows(slice_rows(seq, 0, i + 1)), rev_prefix);
    hp_r_rows.push_back(slice_rows(states, i, 1));
  }
  Tensor hp_r = concat_rows(hp_r_rows);

  // Reverse-direction suffixes h<-s,i: one pass over reversed s, row n-1-i.
  Tensor hs_r = reverse_rows(run_sequence(reverse_rows(seq), rev_suffix));

  Tensor H = concat_cols(std::array<Tensor, 2>{combine(hp_f, hs_f, combiner),
                                               combine(hp_r, hs_r, combiner)});
  (void)h;
  return {H, n};
}

ContextualReps encode(const Tensor& seq, const EncoderParams& params) {
  switch (params.config.variant) {
    case EncoderVariant::kBiLstm:
      return encode_bilstm(seq, params.lstms[0], params.lstms[1]);
    case EncoderVariant::kBiLstm2Layer:
      return encode_bilstm_2layer(seq, params.lstms[0], params.lstms[1], params.lstms[2],
                                  params.lstms[3]);
    case EncoderVariant::kSuBiLstm:
      return encode_subilstm_naive(seq, params.lstms[0], params.lstms[1], params.lstms[2],
                                   params.lstms[3], false, params.config.combiner);
    case EncoderVariant::kSuBiLstmTied:
      return encode_subilstm_naive(seq, params.lstms[0], params.lstms[0], params.lstms[1],
                                   params.lstms[1], true, params.config.combiner);
  }
  throw std::invalid_argument("encode: unknown variant");
}

Tensor pool_max(const ContextualReps& reps, std::int64_t length) {
  if (length < 1) throw std::invalid_argument("pool_max: zero length");
  if (length > reps.H.dim(0)) throw std::invalid_argument("pool_max: length exceeds rows");
  return row_max_pool(reps.H, 0, length);
}

}  // namespace subi
