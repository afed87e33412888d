#include "subilstm/verify.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "subilstm/grad_check.hpp"
#include "subilstm/models.hpp"
#include "subilstm/training.hpp"

namespace subi {

namespace {

Tensor last_hidden_generic(const Tensor& seq, const LstmParams& p) {
  LstmState st = zero_state(1, p.hidden_dim);
  for (std::int64_t t = 0; t < seq.dim(0); ++t) {
    st = cell_step(slice_rows(seq, t, 1), st, p);
  }
  return st.h;  // (1 x h)
}

Tensor rows_desc(const Tensor& seq, std::int64_t hi, std::int64_t lo) {
  std::vector<std::int64_t> idx;
  for (std::int64_t r = hi; r >= lo; --r) idx.push_back(r);
  return gather_rows(seq, std::move(idx));
}

}  // namespace

ContextualReps reference_subilstm(const Tensor& seq, const LstmParams& fwd_prefix,
                                  const LstmParams& fwd_suffix, const LstmParams& rev_prefix,
                                  const LstmParams& rev_suffix, Combiner combiner) {
  const auto n = seq.dim(0);
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor hp_f = last_hidden_generic(slice_rows(seq, 0, i + 1), fwd_prefix);
    Tensor hs_f = last_hidden_generic(slice_rows(seq, i, n - i), fwd_suffix);
    Tensor hp_r = last_hidden_generic(rows_desc(seq, i, 0), rev_prefix);
    Tensor hs_r = last_hidden_generic(rows_desc(seq, n - 1, i), rev_suffix);
    rows.push_back(concat_cols(std::array<Tensor, 2>{combine(hp_f, hs_f, combiner),
                                                     combine(hp_r, hs_r, combiner)}));
  }
  return {concat_rows(rows), n};
}

namespace {

using CheckFn = std::function<void(std::ostringstream&)>;

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool cond, const std::string& what) {
  if (!cond) throw Failure(what);
}

void expect_near(double a, double b, double tol, const std::string& what) {
  if (!(std::fabs(a - b) <= tol)) {
    throw Failure(what + ": |" + std::to_string(a) + " - " + std::to_string(b) + "| > " +
                  std::to_string(tol));
  }
}

Tensor random_seq(std::int64_t n, std::int64_t d, Rng& rng) {
  return uniform_tensor({n, d}, -1.0, 1.0, rng);
}

// ---- individual checks ----

void check_rng_determinism(std::ostringstream& os, std::uint64_t seed) {
  Rng a(seed), b(seed);
  for (int i = 0; i < 1000; ++i) expect(a.next_u64() == b.next_u64(), "rng stream diverged");
  Rng c(seed + 1);
  bool differs = false;
  Rng a2(seed);
  for (int i = 0; i < 16; ++i) differs |= a2.next_u64() != c.next_u64();
  expect(differs, "distinct seeds produced identical streams");
  os << "1000 draws bit-identical";
}

void check_backward_basics(std::ostringstream& os, std::uint64_t) {
  {
    Tape tape;
    Tensor x = make_tensor({3}, {1.0, 2.0, 3.0});
    tape.watch(x);
    Gradients g = backward(tape, sum_all(x));
    expect(same_values(g.grad_of(x), ones({3})), "grad of sum is not ones");
  }
  {
    Tape tape;
    Tensor x = make_tensor({2}, {2.0, -1.0});
    tape.watch(x);
    Gradients g = backward(tape, sum_all(mul(x, x)));
    expect(same_values(g.grad_of(x), make_tensor({2}, {4.0, -2.0})), "grad of dot(x,x) != 2x");
  }
  {
    Tape tape;
    Tensor a = make_tensor({2}, {1.0, 5.0});
    Tensor b = make_tensor({2}, {3.0, 2.0});
    tape.watch(a);
    tape.watch(b);
    Gradients g = backward(tape, sum_all(cmax(a, b)));
    expect(same_values(g.grad_of(a), make_tensor({2}, {0.0, 1.0})), "max subgradient to a wrong");
    expect(same_values(g.grad_of(b), make_tensor({2}, {1.0, 0.0})), "max subgradient to b wrong");
  }
  {
    // Ties route to the first argument, identically on repeat runs.
    Tape tape;
    Tensor a = make_tensor({2}, {1.0, 2.0});
    Tensor b = make_tensor({2}, {1.0, 2.0});
    tape.watch(a);
    tape.watch(b);
    Gradients g = backward(tape, sum_all(cmax(a, b)));
    expect(same_values(g.grad_of(a), ones({2})) && same_values(g.grad_of(b), zeros({2})),
           "tie policy violated");
  }
  os << "sum/dot/max gradients exact";
}

void check_primitive_grads(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  auto run = [&](const char* name, const ScalarFn& f, std::vector<Tensor> params) {
    const double err = grad_check_max_err(f, params, 1e-5);
    worst = std::max(worst, err);
    expect(err <= 1e-6, std::string(name) + " grad error " + std::to_string(err));
  };

  Tensor a = uniform_tensor({4, 3}, -1, 1, rng);
  Tensor b = uniform_tensor({4, 3}, -1, 1, rng);
  Tensor m = uniform_tensor({3, 5}, -1, 1, rng);
  Tensor bias = uniform_tensor({3}, -1, 1, rng);

  run("add", [](const std::vector<Tensor>& p) { return sum_all(tanh_t(add(p[0], p[1]))); }, {a, b});
  run("add_bias", [](const std::vector<Tensor>& p) { return sum_all(tanh_t(add(p[0], p[1]))); },
      {a, bias});
  run("sub_mul", [](const std::vector<Tensor>& p) { return sum_all(mul(sub(p[0], p[1]), p[0])); },
      {a, b});
  run("matmul", [](const std::vector<Tensor>& p) { return sum_all(tanh_t(matmul(p[0], p[1]))); },
      {a, m});
  run("sigmoid", [](const std::vector<Tensor>& p) { return sum_all(sigmoid_t(p[0])); }, {a});
  run("tanh", [](const std::vector<Tensor>& p) { return sum_all(tanh_t(p[0])); }, {a});
  run("relu", [](const std::vector<Tensor>& p) { return sum_all(relu_t(p[0])); }, {a});
  run("abs", [](const std::vector<Tensor>& p) { return sum_all(abs_t(p[0])); }, {a});
  run("cmax", [](const std::vector<Tensor>& p) { return sum_all(cmax(p[0], p[1])); }, {a, b});
  run("slice_gather",
      [](const std::vector<Tensor>& p) {
        return sum_all(gather_rows(slice_cols(p[0], 1, 2), {2, 0, 1, 2}));
      },
      {a});
  run("pool", [](const std::vector<Tensor>& p) { return sum_all(row_max_pool(p[0], 0, 4)); }, {a});
  run("softmax_xent",
      [](const std::vector<Tensor>& p) {
        const std::array<std::int64_t, 4> labels{0, 2, 1, 0};
        return softmax_xent_mean(p[0], labels);
      },
      {a});
  run("lstm_cell",
      [](const std::vector<Tensor>& p) {
        LstmParams lp;
        lp.input_dim = 3;
        lp.hidden_dim = 2;
        lp.wt = p[1];
        lp.ut = p[2];
        lp.b = p[3];
        Tensor hc = lstm_cell_packed(matmul(p[0], p[1]), p[4], lp);
        return sum_all(hc);
      },
      {a, uniform_tensor({3, 8}, -1, 1, rng), uniform_tensor({2, 8}, -1, 1, rng),
       uniform_tensor({8}, -1, 1, rng), uniform_tensor({4, 4}, -1, 1, rng)});
  os << "max primitive grad err " << worst;
}

void check_gradcheck_detects_sign_flip(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = uniform_tensor({4}, -1, 1, rng);
  // y = 2x forward, but the recorded backward pushes -2 * dout.
  auto wrong = [](const std::vector<Tensor>& p) {
    const Tensor& in = p[0];
    const auto n = in.size();
    std::vector<double> d(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = 2.0 * in.at(i);
    Tensor out = make_tensor(in.shape, std::move(d));
    if (in.tape) {
      out.tape = in.tape;
      const int id = in.node;
      out.node = in.tape->record(n, [id, n](const std::vector<double>& dout, Gradients& g) {
        if (id < 0) return;
        auto& gi = g.accum(id, n);
        for (std::int64_t i = 0; i < n; ++i) gi[static_cast<std::size_t>(i)] -= 2.0 * dout[static_cast<std::size_t>(i)];
      });
    }
    return sum_all(out);
  };
  const double err = grad_check_max_err(wrong, {x}, 1e-5);
  expect(err >= 0.5, "sign-flipped gradient not detected, err " + std::to_string(err));
  os << "flipped gradient flagged with err " << err;
}

void check_quadratic_gradcheck(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = uniform_tensor({6}, -2, 2, rng);
  const double err = grad_check_max_err(
      [](const std::vector<Tensor>& p) { return sum_all(mul(p[0], p[0])); }, {x}, 1e-5);
  expect(err <= 1e-9, "quadratic grad err " + std::to_string(err));
  os << "err " << err;
}

void check_cell_fixed_points(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  // Zero params, zero state: h' must be exactly zero.
  LstmParams zp;
  zp.input_dim = 3;
  zp.hidden_dim = 4;
  zp.wt = zeros({3, 16});
  zp.ut = zeros({4, 16});
  zp.b = zeros({16});
  LstmState st = zero_state(1, 4);
  LstmState out = cell_step(random_seq(1, 3, rng), st, zp);
  expect(same_values(out.h, zeros({1, 4})), "zero params did not give zero hidden state");

  // Saturated forget gate, closed input gate: c' ~ c.
  LstmParams sat = zp;
  std::vector<double> bias(16, 0.0);
  for (int j = 0; j < 4; ++j) bias[static_cast<std::size_t>(j)] = -10.0;      // i ~ 0
  for (int j = 4; j < 8; ++j) bias[static_cast<std::size_t>(j)] = 10.0;       // f ~ 1
  sat.b = make_tensor({16}, std::move(bias));
  LstmState carried{uniform_tensor({1, 4}, -0.5, 0.5, rng), uniform_tensor({1, 4}, -0.5, 0.5, rng)};
  LstmState out2 = cell_step(random_seq(1, 3, rng), carried, sat);
  expect(max_abs_diff(out2.c, carried.c) <= 1e-3, "saturated forget gate did not carry cell");
  os << "zero fixed point exact; carry drift " << max_abs_diff(out2.c, carried.c);
}

void check_fused_vs_generic_cell(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  const std::int64_t d = 5, h = 4, k = 3;
  LstmParams p = LstmParams::init(d, h, rng);
  Tensor x = random_seq(k, d, rng);
  LstmState st{uniform_tensor({k, h}, -1, 1, rng), uniform_tensor({k, h}, -1, 1, rng)};

  LstmState ref = cell_step(x, st, p);
  Tensor hc_prev = concat_cols(std::array<Tensor, 2>{st.h, st.c});
  Tensor hc = lstm_cell_packed(matmul(x, p.wt), hc_prev, p);
  expect(same_values(slice_cols(hc, 0, h), ref.h), "fused hidden differs from generic");
  expect(same_values(slice_cols(hc, h, h), ref.c), "fused cell state differs from generic");

  // Gradients through both routes must agree.
  auto loss_fused = [&](const std::vector<Tensor>& q) {
    LstmParams lp = p;
    lp.wt = q[0];
    lp.ut = q[1];
    lp.b = q[2];
    return sum_all(tanh_t(lstm_cell_packed(matmul(q[3], q[0]), q[4], lp)));
  };
  auto loss_generic = [&](const std::vector<Tensor>& q) {
    LstmParams lp = p;
    lp.wt = q[0];
    lp.ut = q[1];
    lp.b = q[2];
    LstmState s{slice_cols(q[4], 0, h), slice_cols(q[4], h, h)};
    LstmState o = cell_step(q[3], s, lp);
    return sum_all(tanh_t(concat_cols(std::array<Tensor, 2>{o.h, o.c})));
  };
  std::vector<Tensor> params{p.wt, p.ut, p.b, x, hc_prev};
  for (auto& t : params) t.detach();
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tape t1, t2;
    auto w1 = params, w2 = params;
    for (auto& t : w1) t.detach();
    for (auto& t : w2) t.detach();
    for (auto& t : w1) t1.watch(t);
    for (auto& t : w2) t2.watch(t);
    Gradients g1 = backward(t1, loss_fused(w1));
    Gradients g2 = backward(t2, loss_generic(w2));
    worst = std::max(worst, max_abs_diff(g1.grad_of(w1[i]), g2.grad_of(w2[i])));
  }
  expect(worst <= 1e-12, "fused backward differs from generic by " + std::to_string(worst));
  os << "forward bit-exact, backward diff " << worst;
}

void check_run_sequence_identities(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  const std::int64_t n = 7, d = 4, h = 3;
  LstmParams p = LstmParams::init(d, h, rng);
  Tensor seq = random_seq(n, d, rng);
  Tensor states = run_sequence(seq, p);

  // Step-by-step loop oracle.
  LstmState st = zero_state(1, h);
  for (std::int64_t t = 0; t < n; ++t) {
    st = cell_step(slice_rows(seq, t, 1), st, p);
    expect(same_values(slice_rows(states, t, 1), st.h),
           "run_sequence row differs from step loop at t=" + std::to_string(t));
  }

  // Prefix-restart: row i equals the last row of a fresh run over s[0..i].
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor partial = run_sequence(slice_rows(seq, 0, i + 1), p);
    expect(same_values(slice_rows(states, i, 1), slice_rows(partial, i, 1)),
           "prefix restart mismatch at i=" + std::to_string(i));
  }

  // Reversal: row j of the reversed run encodes the suffix s[n-1-j..n-1]
  // consumed right-to-left; re-running that suffix directly must agree.
  Tensor rev_states = run_sequence(reverse_rows(seq), p);
  for (std::int64_t j = 0; j < n; ++j) {
    Tensor suffix_rev = rows_desc(seq, n - 1, n - 1 - j);
    Tensor direct = run_sequence(suffix_rev, p);
    expect(same_values(slice_rows(rev_states, j, 1), slice_rows(direct, j, 1)),
           "reversal identity mismatch at j=" + std::to_string(j));
  }
  os << "loop, prefix-restart, reversal all exact";
}

void check_param_counts(std::ostringstream& os, std::uint64_t) {
  const std::array<std::pair<std::int64_t, std::int64_t>, 3> dims{
      {{3, 4}, {50, 64}, {300, 300}}};
  for (const auto& [d, h] : dims) {
    EncoderConfig base{EncoderVariant::kBiLstm, d, h, Combiner::kMax};
    const auto bi = param_count(base);
    base.variant = EncoderVariant::kSuBiLstm;
    const auto su = param_count(base);
    base.variant = EncoderVariant::kSuBiLstmTied;
    const auto tied = param_count(base);
    base.variant = EncoderVariant::kBiLstm2Layer;
    const auto two = param_count(base);
    expect(bi == 2 * 4 * (d * h + h * h + h), "bilstm count mismatch");
    expect(su == 2 * bi, "subilstm must be twice bilstm");
    expect(tied == bi, "tied must equal bilstm");
    if (h >= d) expect(two > su, "2-layer must exceed subilstm when h >= d");
  }
  os << "counts exact at (3,4), (50,64), (300,300)";
}

void check_reduction_identity(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t d = 1 + static_cast<std::int64_t>(rng.uniform_int(5));
    const std::int64_t h = 1 + static_cast<std::int64_t>(rng.uniform_int(5));
    LstmParams fwd = LstmParams::init(d, h, rng);
    LstmParams rev = LstmParams::init(d, h, rng);
    Tensor seq = random_seq(1, d, rng);
    ContextualReps tied = encode_subilstm_naive(seq, fwd, fwd, rev, rev, true, Combiner::kMax);
    ContextualReps bi = encode_bilstm(seq, fwd, rev);
    expect(same_values(tied.H, bi.H), "n=1 tied output differs from bilstm");
  }
  os << "100 single-token inputs exact";
}

void check_width_property(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t d = 2 + static_cast<std::int64_t>(rng.uniform_int(4));
    const std::int64_t h = 2 + static_cast<std::int64_t>(rng.uniform_int(5));
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(6));
    Tensor seq = random_seq(n, d, rng);
    for (auto variant : {EncoderVariant::kBiLstm, EncoderVariant::kBiLstm2Layer,
                         EncoderVariant::kSuBiLstm, EncoderVariant::kSuBiLstmTied}) {
      EncoderConfig cfg{variant, d, h, Combiner::kMax};
      EncoderParams params = EncoderParams::init(cfg, rng);
      ContextualReps reps = encode(seq, params);
      expect(reps.H.dim(0) == n && reps.H.dim(1) == 2 * h,
             std::string("width violated for ") + to_string(variant));
    }
    EncoderConfig cfg{EncoderVariant::kSuBiLstm, d, h, Combiner::kConcat};
    EncoderParams params = EncoderParams::init(cfg, rng);
    expect(encode(seq, params).H.dim(1) == 4 * h, "concat width must be 4h");
  }
  os << "2h for max across variants, 4h for concat";
}

void check_reversal_symmetry(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  const std::int64_t n = 5, d = 3, h = 4;
  LstmParams fp = LstmParams::init(d, h, rng);
  LstmParams fs = LstmParams::init(d, h, rng);
  LstmParams rp = LstmParams::init(d, h, rng);
  LstmParams rs = LstmParams::init(d, h, rng);
  Tensor seq = random_seq(n, d, rng);
  ContextualReps orig = encode_subilstm_naive(seq, fp, fs, rp, rs, false, Combiner::kMax);
  // On the reversed sequence, each direction's prefix role is played by the
  // other direction's suffix LSTM (and vice versa).
  ContextualReps flipped =
      encode_subilstm_naive(reverse_rows(seq), rs, rp, fs, fp, false, Combiner::kMax);
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor lhs = slice_rows(flipped.H, n - 1 - i, 1);
    Tensor fwd_half = slice_cols(slice_rows(orig.H, i, 1), 0, h);
    Tensor rev_half = slice_cols(slice_rows(orig.H, i, 1), h, h);
    expect(same_values(slice_cols(lhs, 0, h), rev_half) &&
               same_values(slice_cols(lhs, h, h), fwd_half),
           "reversal symmetry violated at i=" + std::to_string(i));
  }
  os << "rows reversed and halves swapped, exact";
}

std::vector<std::int64_t> random_lengths(Rng& rng, std::int64_t max_b, std::int64_t max_len) {
  const auto bsz = 1 + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(max_b)));
  std::vector<std::int64_t> lengths;
  for (std::int64_t i = 0; i < bsz; ++i) {
    lengths.push_back(1 + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(max_len))));
  }
  return lengths;
}

void check_plan_properties(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  for (int trial = 0; trial < 200; ++trial) {
    const auto lengths = random_lengths(rng, 8, 12);
    const auto bsz = static_cast<std::int64_t>(lengths.size());
    const auto budget = bsz * (1 + static_cast<std::int64_t>(rng.uniform_int(4)));
    for (bool merge : {false, true}) {
      SuffixPlan plan = build_plan(lengths, budget, merge);
      // Coverage: every (sentence, start) exactly once.
      std::vector<std::vector<int>> seen(lengths.size());
      for (std::size_t s = 0; s < lengths.size(); ++s) seen[s].assign(static_cast<std::size_t>(lengths[s]), 0);
      for (const auto& pass : plan.passes) {
        std::int64_t prev = pass.slices.empty() ? 0 : pass.slices[0].length;
        for (const auto& sl : pass.slices) {
          expect(sl.length <= prev, "pass slices not sorted by length desc");
          prev = sl.length;
          seen[static_cast<std::size_t>(sl.sentence)][static_cast<std::size_t>(sl.start)] += 1;
          expect(sl.start + sl.length == lengths[static_cast<std::size_t>(sl.sentence)],
                 "slice is not a suffix");
        }
        expect(static_cast<std::int64_t>(pass.slices.size()) <= budget || !merge,
               "merged pass exceeds width budget");
      }
      for (const auto& row : seen) {
        for (int c : row) expect(c == 1, "suffix covered " + std::to_string(c) + " times");
      }
      PlanStats st = plan_stats(plan);  // throws if conservation fails
      if (!merge) {
        const auto n_max = *std::max_element(lengths.begin(), lengths.end());
        expect(st.num_passes == n_max, "unmerged plan must have n_max passes");
      }
    }
    // Merging conserves token-steps and never adds passes.
    PlanStats a = plan_stats(build_plan(lengths, budget, false));
    PlanStats b = plan_stats(build_plan(lengths, budget, true));
    expect(a.total_token_steps == b.total_token_steps, "merge changed token-steps");
    expect(b.num_passes <= a.num_passes, "merge increased pass count");
  }
  os << "coverage, conservation, ordering over 200 random batches";
}

EmbeddedBatch random_batch(Rng& rng, std::int64_t d, const std::vector<std::int64_t>& lengths) {
  std::int64_t total = 0;
  for (auto l : lengths) total += l;
  return make_embedded_batch(uniform_tensor({total, d}, -1, 1, rng), lengths);
}

void check_oracle_equivalence(std::ostringstream& os, std::uint64_t seed, bool inject_fault) {
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const std::int64_t d = 2 + static_cast<std::int64_t>(rng.uniform_int(3));
    const std::int64_t h = 2 + static_cast<std::int64_t>(rng.uniform_int(4));
    const auto lengths = random_lengths(rng, 6, 9);
    EmbeddedBatch eb = random_batch(rng, d, lengths);
    LstmParams fp = LstmParams::init(d, h, rng);
    LstmParams fs = LstmParams::init(d, h, rng);
    LstmParams rp = LstmParams::init(d, h, rng);
    LstmParams rs = LstmParams::init(d, h, rng);
    SchedOptions opts;
    opts.merge = trial % 2 == 0;
    auto batched = encode_subilstm_batched(eb, fp, fs, rp, rs, false, Combiner::kMax, opts);
    if (inject_fault && trial == 0) {
      auto broken = std::make_shared<Buffer>(*batched[0].H.values);
      (*broken)[0] += 1e-3;
      batched[0].H.values = std::move(broken);
    }
    for (std::size_t s = 0; s < lengths.size(); ++s) {
      Tensor seq = slice_rows(eb.flat, eb.offsets[s], lengths[s]);
      ContextualReps naive = encode_subilstm_naive(seq, fp, fs, rp, rs, false, Combiner::kMax);
      ContextualReps ref = reference_subilstm(seq, fp, fs, rp, rs, Combiner::kMax);
      worst = std::max(worst, max_abs_diff(batched[s].H, naive.H));
      worst = std::max(worst, max_abs_diff(naive.H, ref.H));
    }
  }
  expect(worst == 0.0, "oracle routes disagree by " + std::to_string(worst));
  os << "batched == naive == per-slice reference, bit-exact";
}

void check_merge_and_parallel_invariance(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  const std::int64_t d = 4, h = 5;
  const auto lengths = std::vector<std::int64_t>{7, 3, 5, 1, 7, 2};
  EmbeddedBatch eb = random_batch(rng, d, lengths);
  LstmParams p = LstmParams::init(d, h, rng);

  SuffixPlan merged = build_plan(lengths, 4 * static_cast<std::int64_t>(lengths.size()), true);
  SuffixPlan unmerged = build_plan(lengths, 4 * static_cast<std::int64_t>(lengths.size()), false);
  Tensor a = execute_plan(eb, merged, p);
  Tensor b = execute_plan(eb, unmerged, p);
  expect(same_values(a, b), "merged and unmerged plans disagree");

  SchedOptions par;
  par.parallel_passes = true;
  Tensor c = execute_plan(eb, merged, p, par);
  expect(same_values(a, c), "parallel execution differs from sequential");

  // Per-suffix loop oracle.
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    for (std::int64_t j = 0; j < lengths[s]; ++j) {
      Tensor suffix = slice_rows(eb.flat, eb.offsets[s] + j, lengths[s] - j);
      Tensor states = run_sequence(suffix, p);
      expect(same_values(slice_rows(a, eb.offsets[s] + j, 1),
                         slice_rows(states, lengths[s] - j - 1, 1)),
             "suffix encoding differs from naive loop");
    }
  }
  os << "merged == unmerged == parallel == naive loop";
}

void check_padding_transparency(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  const std::int64_t d = 3, h = 4;
  EncoderConfig cfg{EncoderVariant::kSuBiLstmTied, d, h, Combiner::kMax};
  EncoderParams params = EncoderParams::init(cfg, rng);
  const auto lengths = std::vector<std::int64_t>{5, 2, 7, 1};
  EmbeddedBatch eb = random_batch(rng, d, lengths);
  Tensor flat = encode_batch_flat(eb, params);
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    Tensor seq = slice_rows(eb.flat, eb.offsets[s], lengths[s]);
    ContextualReps solo = encode(seq, params);
    expect(same_values(slice_rows(flat, eb.offsets[s], lengths[s]), solo.H),
           "batched encoding differs from single-sentence encoding");
  }
  os << "batch rows equal solo encodings exactly";
}

void check_serialization_roundtrip(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  LstmParams p = LstmParams::init(5, 3, rng);
  std::stringstream buf;
  save_lstm_params(buf, p);
  LstmParams q = load_lstm_params(buf);
  expect(same_values(p.wt, q.wt) && same_values(p.ut, q.ut) && same_values(p.b, q.b),
         "f64 round-trip not bit-exact");

  std::stringstream buf32;
  save_lstm_params(buf32, p, /*as_f32=*/true);
  LstmParams q32 = load_lstm_params(buf32);
  expect(max_abs_diff(p.wt, q32.wt) < 1e-6, "f32 round-trip drifted");
  os << "f64 bit-exact, f32 within float precision";
}

void check_classifier_gradients(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  EncoderConfig cfg{EncoderVariant::kSuBiLstmTied, 3, 4, Combiner::kMax};
  ClassifierModel model = ClassifierModel::init(10, 3, cfg, rng);
  model.freeze_embedding = false;

  PaddedBatch batch;
  batch.n_max = 5;
  batch.true_lengths = {5, 3};
  batch.labels = {2, 0};
  batch.tokens = {2, 3, 4, 5, 6, 7, 8, 9, 0, 0};

  auto params = model.trainables();
  std::vector<Tensor> param_values;
  for (Tensor* t : params) param_values.push_back(*t);

  auto loss_fn = [&model, &batch, &params](const std::vector<Tensor>& q) {
    ClassifierModel m = model;
    auto targets = m.trainables();
    for (std::size_t i = 0; i < targets.size(); ++i) *targets[i] = q[i];
    ForwardOptions fo;
    fo.training = false;
    Tensor logits = classify_forward(batch, m, fo);
    const std::array<std::int64_t, 2> labels{2, 0};
    return softmax_xent_mean(logits, labels);
  };
  (void)params;
  const double err = grad_check_max_err(loss_fn, param_values, 1e-5);
  expect(err <= 1e-4, "classifier grad err " + std::to_string(err));
  os << "full-model grad err " << err;
}

void check_dropout_and_adam(std::ostringstream& os, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = ones({100000});
  Tensor d0 = apply_dropout(x, 0.0, rng, true);
  expect(same_values(d0, x), "p=0 dropout must be identity");
  Tensor d1 = apply_dropout(x, 0.3, rng, false);
  expect(same_values(d1, x), "inference dropout must be identity");
  Tensor d2 = apply_dropout(x, 0.3, rng, true);
  std::int64_t zeros_n = 0;
  for (std::int64_t i = 0; i < d2.size(); ++i) zeros_n += d2.at(i) == 0.0;
  const double frac = static_cast<double>(zeros_n) / static_cast<double>(d2.size());
  expect(std::fabs(frac - 0.3) < 0.02, "dropout zero fraction off: " + std::to_string(frac));

  // First Adam step with g=1 moves by about -lr.
  Tensor p = scalar_tensor(1.0);
  Tape tape;
  tape.watch(p);
  Gradients g(tape.size());
  g.accum(p.node, 1)[0] = 1.0;
  AdamState st;
  st.hyper.weight_decay = 0.0;
  std::vector<Tensor*> ps{&p};
  st.reset(ps);
  adam_step(ps, g, st);
  expect_near(p.scalar(), 1.0 - st.hyper.lr, 1e-9, "first Adam step");
  p.detach();

  // Zero gradient, zero decay: parameters unchanged.
  Tensor p2 = scalar_tensor(0.5);
  Tape tape2;
  tape2.watch(p2);
  Gradients zero_g(tape2.size());
  AdamState st2;
  st2.hyper.weight_decay = 0.0;
  std::vector<Tensor*> ps2{&p2};
  st2.reset(ps2);
  adam_step(ps2, zero_g, st2);
  expect(p2.scalar() == 0.5, "zero gradient moved parameters");
  os << "dropout fraction " << frac << ", adam first-step exact";
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& opts) {
  struct Entry {
    const char* name;
    std::function<void(std::ostringstream&)> fn;
  };
  const std::uint64_t seed = opts.seed;
  const std::vector<Entry> entries{
      {"rng_determinism", [&](std::ostringstream& s) { check_rng_determinism(s, seed); }},
      {"backward_basics", [&](std::ostringstream& s) { check_backward_basics(s, seed); }},
      {"quadratic_gradcheck", [&](std::ostringstream& s) { check_quadratic_gradcheck(s, seed); }},
      {"primitive_gradients", [&](std::ostringstream& s) { check_primitive_grads(s, seed); }},
      {"gradcheck_detector", [&](std::ostringstream& s) { check_gradcheck_detects_sign_flip(s, seed); }},
      {"cell_fixed_points", [&](std::ostringstream& s) { check_cell_fixed_points(s, seed); }},
      {"fused_vs_generic_cell", [&](std::ostringstream& s) { check_fused_vs_generic_cell(s, seed); }},
      {"run_sequence_identities", [&](std::ostringstream& s) { check_run_sequence_identities(s, seed); }},
      {"param_counts", [&](std::ostringstream& s) { check_param_counts(s, seed); }},
      {"reduction_identity", [&](std::ostringstream& s) { check_reduction_identity(s, seed); }},
      {"width_property", [&](std::ostringstream& s) { check_width_property(s, seed); }},
      {"reversal_symmetry", [&](std::ostringstream& s) { check_reversal_symmetry(s, seed); }},
      {"plan_properties", [&](std::ostringstream& s) { check_plan_properties(s, seed); }},
      {"oracle_equivalence",
       [&](std::ostringstream& s) { check_oracle_equivalence(s, seed, opts.inject_fault); }},
      {"merge_parallel_invariance",
       [&](std::ostringstream& s) { check_merge_and_parallel_invariance(s, seed); }},
      {"padding_transparency", [&](std::ostringstream& s) { check_padding_transparency(s, seed); }},
      {"serialization_roundtrip", [&](std::ostringstream& s) { check_serialization_roundtrip(s, seed); }},
      {"classifier_gradients", [&](std::ostringstream& s) { check_classifier_gradients(s, seed); }},
      {"dropout_and_adam", [&](std::ostringstream& s) { check_dropout_and_adam(s, seed); }},
  };

  std::vector<CheckResult> results;
  results.reserve(entries.size());
  for (const auto& e : entries) {
    CheckResult r;
    r.name = e.name;
    std::ostringstream detail;
    try {
      e.fn(detail);
      r.pass = true;
      r.detail = detail.str();
    } catch (const std::exception& ex) {
      r.pass = false;
      r.detail = ex.what();
    }
    results.push_back(std::move(r));
  }
  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace subi
