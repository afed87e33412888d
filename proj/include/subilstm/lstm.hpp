#pragma once

#include <iosfwd>
#include <vector>

#include "subilstm/rng.hpp"
#include "subilstm/tensor.hpp"

namespace subi {

// One direction's LSTM parameters. Gate order in the packed 4h axis is
// (i, f, g, o). Matrices are stored input-major — wt maps d -> 4h and
// ut maps h -> 4h — which is the transpose of the serialized layout.
// No peepholes, single forget gate; forget bias initialized to 1.
struct LstmParams {
  Tensor wt;  // (d x 4h)
  Tensor ut;  // (h x 4h)
  Tensor b;   // (4h)
  std::int64_t input_dim = 0;
  std::int64_t hidden_dim = 0;

  static LstmParams init(std::int64_t input_dim, std::int64_t hidden_dim, Rng& rng);

  std::int64_t param_count() const {
    return 4 * (input_dim * hidden_dim + hidden_dim * hidden_dim + hidden_dim);
  }

  // True when `o` shares the same parameter storage (the tied regime).
  bool same_storage(const LstmParams& o) const {
    return wt.values == o.wt.values && ut.values == o.ut.values && b.values == o.b.values;
  }

  std::vector<Tensor*> trainables() { return {&wt, &ut, &b}; }
};

// Hidden/cell pair; rows are batch lanes.
struct LstmState {
  Tensor h;  // (k x h)
  Tensor c;  // (k x h)
};

LstmState zero_state(std::int64_t k, std::int64_t hidden_dim);

// Reference cell built from generic primitives. x is (k x d). Kept as an
// independent route for the fused kernel to be checked against.
LstmState cell_step(const Tensor& x, const LstmState& state, const LstmParams& params);

// Fused cell over packed state [h | c] (k x 2h). xw is the precomputed
// input projection x*wt for this step (k x 4h). Forward math is ordered to
// match cell_step bit for bit.
Tensor lstm_cell_packed(const Tensor& xw, const Tensor& hc_prev, const LstmParams& params);

// Multi-step lockstep recurrence over step-major gathered inputs. Step t
// consumes the next live_at_step[t] rows of x_all; state rows carry over by
// leading-row identity, so a step with more rows than its predecessor admits
// new lanes from the zero state at the bottom, and one with fewer retires
// trailing lanes. Returns the hidden state of every (step, lane) in the same
// row layout as x_all. Forward math matches cell_step bit for bit; the whole
// pass is a single tape node.
Tensor lstm_pass(const Tensor& x_all, std::vector<std::int64_t> live_at_step,
                 const LstmParams& params);

// All prefix encodings of one sequence (n x d) in a single pass: row i is
// the hidden state after consuming tokens [0..i]. Starts from the zero state.
Tensor run_sequence(const Tensor& seq, const LstmParams& params);

// Serialization: 8-byte magic "SBLP0001", u32 dtype (0=f64, 1=f32),
// u32 gate order (0 = ifgo), u64 input_dim, u64 hidden_dim, then
// W (4h x d), U (4h x h), b (4h) as flat little-endian arrays, row-major.
void save_lstm_params(std::ostream& os, const LstmParams& p, bool as_f32 = false);
LstmParams load_lstm_params(std::istream& is);

}  // namespace subi
