#include "subilstm/lstm.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "subilstm/gemm.hpp"
#include "subilstm/mathfn.hpp"

namespace subi {

LstmParams LstmParams::init(std::int64_t input_dim, std::int64_t hidden_dim, Rng& rng) {
  if (input_dim < 1 || hidden_dim < 1) {
    throw std::invalid_argument("LstmParams: dimensions must be positive");
  }
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.wt = init_params({input_dim, 4 * hidden_dim}, InitScheme::kUniformFanIn, rng);
  p.ut = init_params({hidden_dim, 4 * hidden_dim}, InitScheme::kUniformFanIn, rng);
  std::vector<double> bias(static_cast<std::size_t>(4 * hidden_dim), 0.0);
  for (std::int64_t j = 0; j < hidden_dim; ++j) {
    bias[static_cast<std::size_t>(hidden_dim + j)] = 1.0;  // forget gate block
  }
  p.b = make_tensor({4 * hidden_dim}, std::move(bias));
  return p;
}

LstmState zero_state(std::int64_t k, std::int64_t hidden_dim) {
  return {zeros({k, hidden_dim}), zeros({k, hidden_dim})};
}

LstmState cell_step(const Tensor& x, const LstmState& state, const LstmParams& params) {
  const auto h = params.hidden_dim;
  if (x.rank() != 2 || x.dim(1) != params.input_dim) {
    throw std::invalid_argument("cell_step: input width does not match params");
  }
  if (state.h.rank() != 2 || state.h.dim(1) != h || state.c.shape != state.h.shape ||
      state.h.dim(0) != x.dim(0)) {
    throw std::invalid_argument("cell_step: state shape does not match params");
  }
  Tensor pre = add(add(matmul(x, params.wt), matmul(state.h, params.ut)), params.b);
  Tensor gi = sigmoid_t(slice_cols(pre, 0, h));
  Tensor gf = sigmoid_t(slice_cols(pre, h, h));
  Tensor gg = tanh_t(slice_cols(pre, 2 * h, h));
  Tensor go = sigmoid_t(slice_cols(pre, 3 * h, h));
  Tensor c_new = add(mul(gf, state.c), mul(gi, gg));
  Tensor h_new = mul(go, tanh_t(c_new));
  return {h_new, c_new};
}

namespace {

// pre -> activated gates for one row, in place. Blocks: i f | g | o.
inline void activate_gates(double* gr, std::int64_t h) {
  for (std::int64_t j = 0; j < 2 * h; ++j) gr[j] = fsigmoid(gr[j]);
  for (std::int64_t j = 2 * h; j < 3 * h; ++j) gr[j] = ftanh(gr[j]);
  for (std::int64_t j = 3 * h; j < 4 * h; ++j) gr[j] = fsigmoid(gr[j]);
}

Tape* tape_of_list(std::initializer_list<const Tensor*> ts) {
  Tape* tp = nullptr;
  for (const Tensor* t : ts) {
    if (t->tape) {
      if (tp && tp != t->tape) throw std::invalid_argument("operands recorded on different tapes");
      tp = t->tape;
    }
  }
  return tp;
}

}  // namespace

Tensor lstm_cell_packed(const Tensor& xw, const Tensor& hc_prev, const LstmParams& params) {
  const auto h = params.hidden_dim;
  const auto g4 = 4 * h;
  if (xw.rank() != 2 || xw.dim(1) != g4) {
    throw std::invalid_argument("lstm_cell_packed: xw must be (k x 4h)");
  }
  const auto k = xw.dim(0);
  if (hc_prev.rank() != 2 || hc_prev.dim(0) != k || hc_prev.dim(1) != 2 * h) {
    throw std::invalid_argument("lstm_cell_packed: state must be (k x 2h)");
  }

  // hu = h_prev * ut, reading the h half of the packed state with stride 2h.
  Buffer hu(k * g4);
  gemm_nn(k, h, g4, hc_prev.data(), 2 * h, params.ut.data(), g4, hu.data(), g4);

  auto gates = std::make_shared<Buffer>(k * g4);
  auto tanh_c = std::make_shared<Buffer>(k * h);
  auto out_buf = std::make_shared<Buffer>(k * 2 * h);

  const double* bias = params.b.data();
  const double* hc = hc_prev.data();
  for (std::int64_t r = 0; r < k; ++r) {
    const double* xwr = xw.data() + r * g4;
    const double* hur = hu.data() + r * g4;
    double* gr = gates->data() + r * g4;
    for (std::int64_t j = 0; j < g4; ++j) gr[j] = (xwr[j] + hur[j]) + bias[j];
    activate_gates(gr, h);
    const double* cp = hc + r * 2 * h + h;
    double* hr = out_buf->data() + r * 2 * h;
    double* cr = hr + h;
    double* tr = tanh_c->data() + r * h;
    for (std::int64_t j = 0; j < h; ++j) {
      const double cn = gr[h + j] * cp[j] + gr[j] * gr[2 * h + j];
      cr[j] = cn;
      const double tc = ftanh(cn);
      tr[j] = tc;
      hr[j] = gr[3 * h + j] * tc;
    }
  }

  Tensor out;
  out.shape = {k, 2 * h};
  out.values = out_buf;

  Tape* tp = tape_of_list({&xw, &hc_prev, &params.ut, &params.b});
  if (!tp) return out;

  const int ixw = xw.node, ihc = hc_prev.node, iut = params.ut.node, ib = params.b.node;
  auto hc_vals = hc_prev.values;
  auto ut_vals = params.ut.values;
  out.tape = tp;
  out.node = tp->record(
      out.size(), [=](const std::vector<double>& dout, Gradients& g) {
        // dout rows are [dh | dc] (k x 2h).
        Buffer dpre(k * g4);
        Buffer dcp(k * h);
        for (std::int64_t r = 0; r < k; ++r) {
          const double* dh = dout.data() + r * 2 * h;
          const double* dc = dh + h;
          const double* gr = gates->data() + r * g4;
          const double* tr = tanh_c->data() + r * h;
          const double* cp = hc_vals->data() + r * 2 * h + h;
          double* dp = dpre.data() + r * g4;
          double* dcpr = dcp.data() + r * h;
          for (std::int64_t j = 0; j < h; ++j) {
            const double gi = gr[j], gf = gr[h + j], gg = gr[2 * h + j], go = gr[3 * h + j];
            const double tc = tr[j];
            const double dct = dc[j] + dh[j] * go * (1.0 - tc * tc);
            dcpr[j] = dct * gf;
            dp[j] = dct * gg * gi * (1.0 - gi);
            dp[h + j] = dct * cp[j] * gf * (1.0 - gf);
            dp[2 * h + j] = dct * gi * (1.0 - gg * gg);
            dp[3 * h + j] = dh[j] * tc * go * (1.0 - go);
          }
        }

        if (ixw >= 0) {
          auto& gx = g.accum(ixw, k * g4);
          for (std::int64_t i = 0; i < k * g4; ++i) gx[static_cast<std::size_t>(i)] += dpre[i];
        }
        if (ib >= 0) {
          auto& gb = g.accum(ib, g4);
          for (std::int64_t r = 0; r < k; ++r) {
            for (std::int64_t j = 0; j < g4; ++j) {
              gb[static_cast<std::size_t>(j)] += dpre[r * g4 + j];
            }
          }
        }
        if (iut >= 0) {
          auto& gu = g.accum(iut, h * g4);
          gemm_tn_acc(h, k, g4, hc_vals->data(), 2 * h, dpre.data(), g4, gu.data(), g4);
        }
        if (ihc >= 0) {
          auto& ghc = g.accum(ihc, k * 2 * h);
          Buffer dhp(k * h);
          gemm_nt(k, g4, h, dpre.data(), g4, ut_vals->data(), g4, dhp.data(), h);
          for (std::int64_t r = 0; r < k; ++r) {
            for (std::int64_t j = 0; j < h; ++j) {
              ghc[static_cast<std::size_t>(r * 2 * h + j)] += dhp[r * h + j];
              ghc[static_cast<std::size_t>(r * 2 * h + h + j)] += dcp[r * h + j];
            }
          }
        }
      });
  return out;
}

Tensor lstm_pass(const Tensor& x_all, std::vector<std::int64_t> live_at_step,
                 const LstmParams& params) {
  const auto d = params.input_dim, h = params.hidden_dim, g4 = 4 * h;
  if (x_all.rank() != 2 || x_all.dim(1) != d) {
    throw std::invalid_argument("lstm_pass: input width does not match params");
  }
  if (live_at_step.empty()) throw std::invalid_argument("lstm_pass: no steps");
  const auto steps = static_cast<std::int64_t>(live_at_step.size());
  std::int64_t rows = 0, max_live = 0;
  for (auto k : live_at_step) {
    if (k < 1) throw std::invalid_argument("lstm_pass: empty step");
    rows += k;
    max_live = std::max(max_live, k);
  }
  if (rows != x_all.dim(0)) {
    throw std::invalid_argument("lstm_pass: row count does not match live counts");
  }

  // Row offset of each step's block.
  auto offsets = std::make_shared<std::vector<std::int64_t>>();
  offsets->reserve(static_cast<std::size_t>(steps));
  for (std::int64_t t = 0, r0 = 0; t < steps; ++t) {
    offsets->push_back(r0);
    r0 += live_at_step[static_cast<std::size_t>(t)];
  }

  // Input projections for every row at once; transformed into activated
  // gates in place, step by step.
  auto gates = std::make_shared<Buffer>(rows * g4);
  gemm_nn(rows, d, g4, x_all.data(), d, params.wt.data(), g4, gates->data(), g4);

  auto h_all = std::make_shared<Buffer>(rows * h);
  auto c_all = std::make_shared<Buffer>(rows * h);
  auto tanh_all = std::make_shared<Buffer>(rows * h);

  Buffer hu(max_live * g4);
  const double* bias = params.b.data();
  std::int64_t prev_row0 = 0, prev_live = 0;
  for (std::int64_t t = 0; t < steps; ++t) {
    const auto row0 = (*offsets)[static_cast<std::size_t>(t)];
    const auto k = live_at_step[static_cast<std::size_t>(t)];
    const auto m_eff = std::min(prev_live, k);  // lanes with a carried state
    if (m_eff > 0) {
      gemm_nn(m_eff, h, g4, h_all->data() + prev_row0 * h, h, params.ut.data(), g4, hu.data(), g4);
    }
    if (k > m_eff) {
      std::fill(hu.data() + m_eff * g4, hu.data() + k * g4, 0.0);  // fresh zero-state lanes
    }
    for (std::int64_t r = 0; r < k; ++r) {
      double* gr = gates->data() + (row0 + r) * g4;
      const double* hur = hu.data() + r * g4;
      for (std::int64_t j = 0; j < g4; ++j) gr[j] = (gr[j] + hur[j]) + bias[j];
      activate_gates(gr, h);
      const double* cp = r < m_eff ? c_all->data() + (prev_row0 + r) * h : nullptr;
      double* hr = h_all->data() + (row0 + r) * h;
      double* cr = c_all->data() + (row0 + r) * h;
      double* tr = tanh_all->data() + (row0 + r) * h;
      if (cp) {
        for (std::int64_t j = 0; j < h; ++j) {
          const double cn = gr[h + j] * cp[j] + gr[j] * gr[2 * h + j];
          cr[j] = cn;
          const double tc = ftanh(cn);
          tr[j] = tc;
          hr[j] = gr[3 * h + j] * tc;
        }
      } else {
        for (std::int64_t j = 0; j < h; ++j) {
          const double cn = gr[h + j] * 0.0 + gr[j] * gr[2 * h + j];
          cr[j] = cn;
          const double tc = ftanh(cn);
          tr[j] = tc;
          hr[j] = gr[3 * h + j] * tc;
        }
      }
    }
    prev_row0 = row0;
    prev_live = k;
  }

  Tensor out;
  out.shape = {rows, h};
  out.values = h_all;

  Tape* tp = tape_of_list({&x_all, &params.wt, &params.ut, &params.b});
  if (!tp) return out;

  const int ix = x_all.node, iwt = params.wt.node, iut = params.ut.node, ib = params.b.node;
  auto x_vals = x_all.values;
  auto wt_vals = params.wt.values;
  auto ut_vals = params.ut.values;
  auto live = std::make_shared<std::vector<std::int64_t>>(std::move(live_at_step));
  out.tape = tp;
  out.node = tp->record(rows * h, [=](const std::vector<double>& dout, Gradients& g) {
    Buffer dpre_all(rows * g4);
    // Double-buffered carries, leading-row aligned.
    std::vector<double> carry_dh_a(static_cast<std::size_t>(max_live * h), 0.0);
    std::vector<double> carry_dh_b(static_cast<std::size_t>(max_live * h), 0.0);
    std::vector<double> carry_dc_a(static_cast<std::size_t>(max_live * h), 0.0);
    std::vector<double> carry_dc_b(static_cast<std::size_t>(max_live * h), 0.0);
    double* carry_dh = carry_dh_a.data();
    double* carry_dc = carry_dc_a.data();
    double* next_dh = carry_dh_b.data();
    double* next_dc = carry_dc_b.data();

    std::vector<double>* gu = iut >= 0 ? &g.accum(iut, h * g4) : nullptr;
    std::vector<double>* gb = ib >= 0 ? &g.accum(ib, g4) : nullptr;

    std::int64_t carry_rows = 0;  // valid rows in carry_dh/carry_dc
    for (std::int64_t t = static_cast<std::int64_t>(live->size()) - 1; t >= 0; --t) {
      const auto row0 = (*offsets)[static_cast<std::size_t>(t)];
      const auto k = (*live)[static_cast<std::size_t>(t)];
      const auto prev_live2 = t > 0 ? (*live)[static_cast<std::size_t>(t - 1)] : 0;
      const auto prev_row0 = t > 0 ? (*offsets)[static_cast<std::size_t>(t - 1)] : 0;
      const auto m_eff = std::min(prev_live2, k);
      const auto carried = std::min(carry_rows, k);

      for (std::int64_t r = 0; r < k; ++r) {
        const double* dh_ext = dout.data() + (row0 + r) * h;
        const double* gr = gates->data() + (row0 + r) * g4;
        const double* tr = tanh_all->data() + (row0 + r) * h;
        const double* cp = r < m_eff ? c_all->data() + (prev_row0 + r) * h : nullptr;
        const double* cdh = r < carried ? carry_dh + r * h : nullptr;
        const double* cdc = r < carried ? carry_dc + r * h : nullptr;
        double* dp = dpre_all.data() + (row0 + r) * g4;
        double* ndc = next_dc + r * h;
        for (std::int64_t j = 0; j < h; ++j) {
          const double gi = gr[j], gf = gr[h + j], gg = gr[2 * h + j], go = gr[3 * h + j];
          const double tc = tr[j];
          const double dh_j = dh_ext[j] + (cdh ? cdh[j] : 0.0);
          const double dct = (cdc ? cdc[j] : 0.0) + dh_j * go * (1.0 - tc * tc);
          ndc[j] = dct * gf;
          const double cpv = cp ? cp[j] : 0.0;
          dp[j] = dct * gg * gi * (1.0 - gi);
          dp[h + j] = dct * cpv * gf * (1.0 - gf);
          dp[2 * h + j] = dct * gi * (1.0 - gg * gg);
          dp[3 * h + j] = dh_j * tc * go * (1.0 - go);
        }
      }

      // Carry to the previous step: dh via the recurrent weights.
      gemm_nt(k, g4, h, dpre_all.data() + row0 * g4, g4, ut_vals->data(), g4, next_dh, h);
      if (gu && m_eff > 0) {
        gemm_tn_acc(h, m_eff, g4, h_all->data() + prev_row0 * h, h,
                    dpre_all.data() + row0 * g4, g4, gu->data(), g4);
      }
      if (gb) {
        for (std::int64_t r = 0; r < k; ++r) {
          const double* dp = dpre_all.data() + (row0 + r) * g4;
          for (std::int64_t j = 0; j < g4; ++j) (*gb)[static_cast<std::size_t>(j)] += dp[j];
        }
      }
      std::swap(carry_dh, next_dh);
      std::swap(carry_dc, next_dc);
      carry_rows = k;
    }

    if (iwt >= 0) {
      auto& gw = g.accum(iwt, d * g4);
      gemm_tn_acc(d, rows, g4, x_vals->data(), d, dpre_all.data(), g4, gw.data(), g4);
    }
    if (ix >= 0) {
      const bool fresh = g.find(ix) == nullptr;
      auto& gx = g.accum(ix, rows * d);
      if (fresh) {
        gemm_nt(rows, g4, d, dpre_all.data(), g4, wt_vals->data(), g4, gx.data(), d);
      } else {
        Buffer tmp(rows * d);
        gemm_nt(rows, g4, d, dpre_all.data(), g4, wt_vals->data(), g4, tmp.data(), d);
        for (std::int64_t i = 0; i < rows * d; ++i) gx[static_cast<std::size_t>(i)] += tmp[i];
      }
    }
  });
  return out;
}

Tensor run_sequence(const Tensor& seq, const LstmParams& params) {
  if (seq.rank() != 2 || seq.dim(0) < 1) {
    throw std::invalid_argument("run_sequence: sequence must be (n x d) with n >= 1");
  }
  if (seq.dim(1) != params.input_dim) {
    throw std::invalid_argument("run_sequence: token width does not match params");
  }
  return lstm_pass(seq, std::vector<std::int64_t>(static_cast<std::size_t>(seq.dim(0)), 1),
                   params);
}

// ---- serialization ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'B', 'L', 'P', '0', '0', '0', '1'};

void require_le() {
  if constexpr (std::endian::native != std::endian::little) {
    throw std::runtime_error("parameter files are little-endian only");
  }
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated parameter stream");
  return v;
}

// wt/ut are stored input-major; the on-disk layout is gates-major (4h x d).
void write_matrix_transposed(std::ostream& os, const Tensor& t, bool as_f32) {
  const auto r = t.dim(0), c = t.dim(1);
  for (std::int64_t j = 0; j < c; ++j) {
    for (std::int64_t i = 0; i < r; ++i) {
      if (as_f32) {
        write_pod(os, static_cast<float>(t.at(i, j)));
      } else {
        write_pod(os, t.at(i, j));
      }
    }
  }
}

Tensor read_matrix_transposed(std::istream& is, std::int64_t rows_on_disk,
                              std::int64_t cols_on_disk, bool f32) {
  std::vector<double> data(static_cast<std::size_t>(rows_on_disk * cols_on_disk));
  for (std::int64_t i = 0; i < rows_on_disk; ++i) {
    for (std::int64_t j = 0; j < cols_on_disk; ++j) {
      const double v = f32 ? static_cast<double>(read_pod<float>(is)) : read_pod<double>(is);
      data[static_cast<std::size_t>(j * rows_on_disk + i)] = v;
    }
  }
  return make_tensor({cols_on_disk, rows_on_disk}, std::move(data));
}

}  // namespace

void save_lstm_params(std::ostream& os, const LstmParams& p, bool as_f32) {
  require_le();
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, as_f32 ? 1u : 0u);
  write_pod<std::uint32_t>(os, 0u);  // gate order: ifgo
  write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(p.input_dim));
  write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(p.hidden_dim));
  write_matrix_transposed(os, p.wt, as_f32);
  write_matrix_transposed(os, p.ut, as_f32);
  for (std::int64_t j = 0; j < 4 * p.hidden_dim; ++j) {
    if (as_f32) {
      write_pod(os, static_cast<float>(p.b.at(j)));
    } else {
      write_pod(os, p.b.at(j));
    }
  }
}

LstmParams load_lstm_params(std::istream& is) {
  require_le();
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("bad parameter file magic");
  }
  const auto dtype = read_pod<std::uint32_t>(is);
  if (dtype > 1) throw std::runtime_error("unknown parameter dtype");
  const auto gate_order = read_pod<std::uint32_t>(is);
  if (gate_order != 0) throw std::runtime_error("unknown gate order");
  const auto d = static_cast<std::int64_t>(read_pod<std::uint64_t>(is));
  const auto h = static_cast<std::int64_t>(read_pod<std::uint64_t>(is));
  if (d < 1 || h < 1) throw std::runtime_error("bad parameter dimensions");
  const bool f32 = dtype == 1;
  LstmParams p;
  p.input_dim = d;
  p.hidden_dim = h;
  p.wt = read_matrix_transposed(is, 4 * h, d, f32);
  p.ut = read_matrix_transposed(is, 4 * h, h, f32);
  std::vector<double> bias(static_cast<std::size_t>(4 * h));
  for (auto& v : bias) v = f32 ? static_cast<double>(read_pod<float>(is)) : read_pod<double>(is);
  p.b = make_tensor({4 * h}, std::move(bias));
  return p;
}

}  // namespace subi
