#include "subilstm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "subilstm/gemm.hpp"
#include "subilstm/mathfn.hpp"

namespace subi {

namespace {

std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension");
    n *= d;
  }
  return n;
}

using Buf = std::shared_ptr<std::vector<double>>;

Buf alloc(std::int64_t n) {
  return std::make_shared<Buffer>(n);
}

Tape* tape_of(const Tensor& a) { return a.tape; }

Tape* tape_of(const Tensor& a, const Tensor& b) {
  if (a.tape && b.tape && a.tape != b.tape) {
    throw std::invalid_argument("operands recorded on different tapes");
  }
  return a.tape ? a.tape : b.tape;
}

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Adds src into the gradient slot for node id (if id is a recorded node).
void push_grad(Gradients& g, int id, const double* src, std::int64_t n) {
  if (id < 0) return;
  auto& slot = g.accum(id, n);
  for (std::int64_t i = 0; i < n; ++i) slot[static_cast<std::size_t>(i)] += src[i];
}

}  // namespace

double Tensor::scalar() const {
  if (size() != 1) throw std::invalid_argument("scalar() on tensor of size != 1");
  return (*values)[0];
}

Tensor make_tensor(Shape shape, std::vector<double> data) {
  if (shape_size(shape) != static_cast<std::int64_t>(data.size())) {
    throw std::invalid_argument("shape does not match data length");
  }
  Tensor t;
  t.shape = std::move(shape);
  t.values = std::make_shared<Buffer>(data);
  return t;
}

Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor full(Shape shape, double v) {
  const auto n = shape_size(shape);
  Tensor t;
  t.shape = std::move(shape);
  auto buf = std::make_shared<Buffer>(n);
  std::fill(buf->begin(), buf->end(), v);
  t.values = std::move(buf);
  return t;
}

Tensor scalar_tensor(double v) { return make_tensor({1}, {v}); }

Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
  const auto n = shape_size(shape);
  std::vector<double> d(static_cast<std::size_t>(n));
  for (auto& x : d) x = rng.uniform(lo, hi);
  return make_tensor(std::move(shape), std::move(d));
}

bool all_finite(const Tensor& t) {
  for (double v : *t.values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    if (a.at(i) != b.at(i)) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw std::invalid_argument("shape mismatch in max_abs_diff");
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(a.at(i) - b.at(i)));
  }
  return m;
}

Tensor init_params(const Shape& shape, InitScheme scheme, Rng& rng) {
  switch (scheme) {
    case InitScheme::kZeros:
      return zeros(shape);
    case InitScheme::kOnes:
      return ones(shape);
    case InitScheme::kUniformFanIn: {
      require(!shape.empty() && shape[0] > 0, "init_params: zero fan_in");
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      return uniform_tensor(shape, -bound, bound, rng);
    }
  }
  throw std::invalid_argument("init_params: unknown scheme");
}

// ---- Gradients / Tape ----------------------------------------------------

std::vector<double>& Gradients::accum(int node, std::int64_t size) {
  auto& slot = slots_.at(static_cast<std::size_t>(node));
  if (!slot) {
    slot = std::make_unique<std::vector<double>>(static_cast<std::size_t>(size), 0.0);
  } else if (static_cast<std::int64_t>(slot->size()) != size) {
    throw std::logic_error("gradient size mismatch");
  }
  return *slot;
}

const std::vector<double>* Gradients::find(int node) const {
  if (node < 0 || static_cast<std::size_t>(node) >= slots_.size()) return nullptr;
  return slots_[static_cast<std::size_t>(node)].get();
}

Tensor Gradients::grad_of(const Tensor& t) const {
  if (!t.on_tape()) throw std::invalid_argument("tensor not on tape");
  const auto* slot = find(t.node);
  if (!slot) return zeros(t.shape);
  Tensor g;
  g.shape = t.shape;
  g.values = std::make_shared<Buffer>(*slot);
  return g;
}

int Tape::watch(Tensor& t) {
  if (t.tape == this && t.node >= 0) return t.node;
  if (t.tape != nullptr) throw std::invalid_argument("tensor already on another tape");
  t.tape = this;
  t.node = record(t.size(), nullptr);
  return t.node;
}

int Tape::record(std::int64_t out_size, BackwardFn fn) {
  nodes_.push_back(Node{std::move(fn), out_size});
  return static_cast<int>(nodes_.size()) - 1;
}

Gradients backward(const Tape& tape, const Tensor& loss) {
  if (!loss.on_tape()) throw std::invalid_argument("loss tensor not on tape");
  if (loss.size() != 1) throw std::invalid_argument("loss must be scalar");
  Gradients g(tape.size());
  g.accum(loss.node, 1)[0] = 1.0;
  for (int id = loss.node; id >= 0; --id) {
    const auto* slot = g.find(id);
    if (slot == nullptr || !tape.has_backward(id)) continue;
    tape.run_backward(id, *slot, g);
  }
  return g;
}

// ---- primitives -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const auto n = a.size();
  auto out_buf = alloc(n);
  Tensor out;
  out.shape = a.shape;

  if (a.shape == b.shape) {
    for (std::int64_t i = 0; i < n; ++i) (*out_buf)[static_cast<std::size_t>(i)] = a.at(i) + b.at(i);
    out.values = std::move(out_buf);
    if (Tape* tp = tape_of(a, b)) {
      const int ia = a.node, ib = b.node;
      out.tape = tp;
      out.node = tp->record(n, [ia, ib, n](const std::vector<double>& dout, Gradients& g) {
        push_grad(g, ia, dout.data(), n);
        push_grad(g, ib, dout.data(), n);
      });
    }
    return out;
  }

  // Row-broadcast bias: (m x c) + (c,)
  require(a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1),
          "add: incompatible shapes");
  const auto m = a.dim(0), c = a.dim(1);
  for (std::int64_t r = 0; r < m; ++r) {
    for (std::int64_t j = 0; j < c; ++j) {
      (*out_buf)[static_cast<std::size_t>(r * c + j)] = a.at(r, j) + b.at(j);
    }
  }
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of(a, b)) {
    const int ia = a.node, ib = b.node;
    out.tape = tp;
    out.node = tp->record(n, [ia, ib, m, c](const std::vector<double>& dout, Gradients& g) {
      push_grad(g, ia, dout.data(), m * c);
      if (ib >= 0) {
        auto& gb = g.accum(ib, c);
        for (std::int64_t r = 0; r < m; ++r) {
          for (std::int64_t j = 0; j < c; ++j) {
            gb[static_cast<std::size_t>(j)] += dout[static_cast<std::size_t>(r * c + j)];
          }
        }
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "sub: shape mismatch");
  const auto n = a.size();
  auto out_buf = alloc(n);
  for (std::int64_t i = 0; i < n; ++i) (*out_buf)[static_cast<std::size_t>(i)] = a.at(i) - b.at(i);
  Tensor out;
  out.shape = a.shape;
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of(a, b)) {
    const int ia = a.node, ib = b.node;
    out.tape = tp;
    out.node = tp->record(n, [ia, ib, n](const std::vector<double>& dout, Gradients& g) {
      push_grad(g, ia, dout.data(), n);
      if (ib >= 0) {
        auto& gb = g.accum(ib, n);
        for (std::int64_t i = 0; i < n; ++i) gb[static_cast<std::size_t>(i)] -= dout[static_cast<std::size_t>(i)];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "mul: shape mismatch");
  const auto n = a.size();
  auto out_buf = alloc(n);
  for (std::int64_t i = 0; i < n; ++i) (*out_buf)[static_cast<std::size_t>(i)] = a.at(i) * b.at(i);
  Tensor out;
  out.shape = a.shape;
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of(a, b)) {
    const int ia = a.node, ib = b.node;
    auto av = a.values, bv = b.values;
    out.tape = tp;
    out.node = tp->record(n, [ia, ib, n, av, bv](const std::vector<double>& dout, Gradients& g) {
      if (ia >= 0) {
        auto& ga = g.accum(ia, n);
        for (std::int64_t i = 0; i < n; ++i) {
          ga[static_cast<std::size_t>(i)] += dout[static_cast<std::size_t>(i)] * (*bv)[static_cast<std::size_t>(i)];
        }
      }
      if (ib >= 0) {
        auto& gb = g.accum(ib, n);
        for (std::int64_t i = 0; i < n; ++i) {
          gb[static_cast<std::size_t>(i)] += dout[static_cast<std::size_t>(i)] * (*av)[static_cast<std::size_t>(i)];
        }
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  const auto n = a.size();
  auto out_buf = alloc(n);
  for (std::int64_t i = 0; i < n; ++i) (*out_buf)[static_cast<std::size_t>(i)] = a.at(i) * c;
  Tensor out;
  out.shape = a.shape;
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of(a)) {
    const int ia = a.node;
    out.tape = tp;
    out.node = tp->record(n, [ia, n, c](const std::vector<double>& dout, Gradients& g) {
      if (ia < 0) return;
      auto& ga = g.accum(ia, n);
      for (std::int64_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += c * dout[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: expects rank-2 operands");
  require(a.dim(1) == b.dim(0), "matmul: inner dimension mismatch");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out_buf = alloc(m * n);
  gemm_nn(m, k, n, a.data(), k, b.data(), n, out_buf->data(), n);
  Tensor out;
  out.shape = {m, n};
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of(a, b)) {
    const int ia = a.node, ib = b.node;
    auto av = a.values, bv = b.values;
    out.tape = tp;
    out.node = tp->record(m * n, [ia, ib, m, k, n, av, bv](const std::vector<double>& dout, Gradients& g) {
      if (ia >= 0) {
        // da = dout * b^T
        const bool fresh = g.find(ia) == nullptr;
        auto& ga = g.accum(ia, m * k);
        if (fresh) {
          gemm_nt(m, n, k, dout.data(), n, bv->data(), n, ga.data(), k);
        } else {
          std::vector<double> tmp(static_cast<std::size_t>(m * k));
          gemm_nt(m, n, k, dout.data(), n, bv->data(), n, tmp.data(), k);
          for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
        }
      }
      if (ib >= 0) {
        // db += a^T * dout
        auto& gb = g.accum(ib, k * n);
        gemm_tn_acc(k, m, n, av->data(), k, dout.data(), n, gb.data(), n);
      }
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd_factor_from_out, bool factor_uses_out) {
  const auto n = a.size();
  auto out_buf = alloc(n);
  for (std::int64_t i = 0; i < n; ++i) (*out_buf)[static_cast<std::size_t>(i)] = fwd(a.at(i));
  Tensor out;
  out.shape = a.shape;
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of(a)) {
    const int ia = a.node;
    auto saved = factor_uses_out ? out.values : a.values;
    out.tape = tp;
    out.node = tp->record(n, [ia, n, saved, bwd_factor_from_out](const std::vector<double>& dout, Gradients& g) {
      if (ia < 0) return;
      auto& ga = g.accum(ia, n);
      for (std::int64_t i = 0; i < n; ++i) {
        ga[static_cast<std::size_t>(i)] +=
            dout[static_cast<std::size_t>(i)] * bwd_factor_from_out((*saved)[static_cast<std::size_t>(i)]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor sigmoid_t(const Tensor& a) {
  return unary_op(a, [](double x) { return fsigmoid(x); },
                  [](double y) { return y * (1.0 - y); }, /*factor_uses_out=*/true);
}

Tensor tanh_t(const Tensor& a) {
  return unary_op(a, [](double x) { return ftanh(x); },
                  [](double y) { return 1.0 - y * y; }, /*factor_uses_out=*/true);
}

Tensor relu_t(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x) { return x > 0.0 ? 1.0 : 0.0; }, /*factor_uses_out=*/false);
}

Tensor abs_t(const Tensor& a) {
  return unary_op(a, [](double x) { return std::fabs(x); },
                  [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); },
                  /*factor_uses_out=*/false);
}

Tensor cmax(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "cmax: shape mismatch");
  const auto n = a.size();
  auto out_buf = alloc(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = a.at(i), y = b.at(i);
    (*out_buf)[static_cast<std::size_t>(i)] = y > x ? y : x;  // tie -> a
  }
  Tensor out;
  out.shape = a.shape;
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of(a, b)) {
    const int ia = a.node, ib = b.node;
    auto av = a.values, bv = b.values;
    out.tape = tp;
    out.node = tp->record(n, [ia, ib, n, av, bv](const std::vector<double>& dout, Gradients& g) {
      for (std::int64_t i = 0; i < n; ++i) {
        const bool take_b = (*bv)[static_cast<std::size_t>(i)] > (*av)[static_cast<std::size_t>(i)];
        const int target = take_b ? ib : ia;
        if (target >= 0) {
          g.accum(target, n)[static_cast<std::size_t>(i)] += dout[static_cast<std::size_t>(i)];
        }
      }
    });
  }
  return out;
}

namespace {

Tape* tape_of_span(std::span<const Tensor> parts) {
  Tape* tp = nullptr;
  for (const auto& t : parts) {
    if (t.tape) {
      if (tp && tp != t.tape) throw std::invalid_argument("operands recorded on different tapes");
      tp = t.tape;
    }
  }
  return tp;
}

}  // namespace

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: empty list");
  const auto c = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
  require(c >= 0, "concat_rows: expects rank-2 parts");
  std::int64_t rows = 0;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.dim(1) == c, "concat_rows: column mismatch");
    rows += p.dim(0);
  }
  auto out_buf = alloc(rows * c);
  std::int64_t r = 0;
  for (const auto& p : parts) {
    std::copy(p.values->begin(), p.values->end(), out_buf->begin() + static_cast<std::ptrdiff_t>(r * c));
    r += p.dim(0);
  }
  Tensor out;
  out.shape = {rows, c};
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of_span(parts)) {
    std::vector<std::pair<int, std::int64_t>> segs;  // node, row count
    segs.reserve(parts.size());
    for (const auto& p : parts) segs.emplace_back(p.node, p.dim(0));
    out.tape = tp;
    out.node = tp->record(rows * c, [segs = std::move(segs), c](const std::vector<double>& dout, Gradients& g) {
      std::int64_t r0 = 0;
      for (const auto& [id, nr] : segs) {
        if (id >= 0) push_grad(g, id, dout.data() + r0 * c, nr * c);
        r0 += nr;
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: empty list");
  const auto m = parts[0].rank() == 2 ? parts[0].dim(0) : -1;
  require(m >= 0, "concat_cols: expects rank-2 parts");
  std::int64_t cols = 0;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.dim(0) == m, "concat_cols: row mismatch");
    cols += p.dim(1);
  }
  auto out_buf = alloc(m * cols);
  std::int64_t c0 = 0;
  for (const auto& p : parts) {
    const auto pc = p.dim(1);
    for (std::int64_t r = 0; r < m; ++r) {
      std::copy(p.values->begin() + static_cast<std::ptrdiff_t>(r * pc),
                p.values->begin() + static_cast<std::ptrdiff_t>((r + 1) * pc),
                out_buf->begin() + static_cast<std::ptrdiff_t>(r * cols + c0));
    }
    c0 += pc;
  }
  Tensor out;
  out.shape = {m, cols};
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of_span(parts)) {
    std::vector<std::pair<int, std::int64_t>> segs;
    segs.reserve(parts.size());
    for (const auto& p : parts) segs.emplace_back(p.node, p.dim(1));
    out.tape = tp;
    out.node = tp->record(m * cols, [segs = std::move(segs), m, cols](const std::vector<double>& dout, Gradients& g) {
      std::int64_t c0 = 0;
      for (const auto& [id, pc] : segs) {
        if (id >= 0) {
          auto& gp = g.accum(id, m * pc);
          for (std::int64_t r = 0; r < m; ++r) {
            for (std::int64_t j = 0; j < pc; ++j) {
              gp[static_cast<std::size_t>(r * pc + j)] += dout[static_cast<std::size_t>(r * cols + c0 + j)];
            }
          }
        }
        c0 += pc;
      }
    });
  }
  return out;
}

Tensor concat_vec(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_vec: empty list");
  std::int64_t n = 0;
  for (const auto& p : parts) {
    require(p.rank() == 1, "concat_vec: expects rank-1 parts");
    n += p.dim(0);
  }
  auto out_buf = alloc(n);
  std::int64_t o = 0;
  for (const auto& p : parts) {
    std::copy(p.values->begin(), p.values->end(), out_buf->begin() + static_cast<std::ptrdiff_t>(o));
    o += p.dim(0);
  }
  Tensor out;
  out.shape = {n};
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of_span(parts)) {
    std::vector<std::pair<int, std::int64_t>> segs;
    for (const auto& p : parts) segs.emplace_back(p.node, p.dim(0));
    out.tape = tp;
    out.node = tp->record(n, [segs = std::move(segs)](const std::vector<double>& dout, Gradients& g) {
      std::int64_t o = 0;
      for (const auto& [id, len] : segs) {
        if (id >= 0) push_grad(g, id, dout.data() + o, len);
        o += len;
      }
    });
  }
  return out;
}

Tensor stack_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "stack_rows: empty list");
  const auto c = parts[0].rank() == 1 ? parts[0].dim(0) : -1;
  require(c >= 0, "stack_rows: expects rank-1 parts");
  const auto m = static_cast<std::int64_t>(parts.size());
  auto out_buf = alloc(m * c);
  for (std::int64_t r = 0; r < m; ++r) {
    const auto& p = parts[static_cast<std::size_t>(r)];
    require(p.rank() == 1 && p.dim(0) == c, "stack_rows: width mismatch");
    std::copy(p.values->begin(), p.values->end(),
              out_buf->begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  Tensor out;
  out.shape = {m, c};
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of_span(parts)) {
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (const auto& p : parts) ids.push_back(p.node);
    out.tape = tp;
    out.node = tp->record(m * c, [ids = std::move(ids), c](const std::vector<double>& dout, Gradients& g) {
      for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= 0) push_grad(g, ids[r], dout.data() + static_cast<std::int64_t>(r) * c, c);
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t nrows) {
  require(a.rank() == 2, "slice_rows: expects rank-2");
  require(r0 >= 0 && nrows >= 0 && r0 + nrows <= a.dim(0), "slice_rows: out of range");
  const auto c = a.dim(1);
  auto out_buf = alloc(nrows * c);
  std::copy(a.values->begin() + static_cast<std::ptrdiff_t>(r0 * c),
            a.values->begin() + static_cast<std::ptrdiff_t>((r0 + nrows) * c), out_buf->begin());
  Tensor out;
  out.shape = {nrows, c};
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of(a)) {
    const int ia = a.node;
    const auto total = a.size();
    out.tape = tp;
    out.node = tp->record(nrows * c, [ia, r0, nrows, c, total](const std::vector<double>& dout, Gradients& g) {
      if (ia < 0) return;
      auto& ga = g.accum(ia, total);
      for (std::int64_t i = 0; i < nrows * c; ++i) {
        ga[static_cast<std::size_t>(r0 * c + i)] += dout[static_cast<std::size_t>(i)];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t ncols) {
  require(a.rank() == 2, "slice_cols: expects rank-2");
  require(c0 >= 0 && ncols >= 0 && c0 + ncols <= a.dim(1), "slice_cols: out of range");
  const auto m = a.dim(0), c = a.dim(1);
  auto out_buf = alloc(m * ncols);
  for (std::int64_t r = 0; r < m; ++r) {
    std::copy(a.values->begin() + static_cast<std::ptrdiff_t>(r * c + c0),
              a.values->begin() + static_cast<std::ptrdiff_t>(r * c + c0 + ncols),
              out_buf->begin() + static_cast<std::ptrdiff_t>(r * ncols));
  }
  Tensor out;
  out.shape = {m, ncols};
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of(a)) {
    const int ia = a.node;
    const auto total = a.size();
    out.tape = tp;
    out.node = tp->record(m * ncols, [ia, c0, ncols, m, c, total](const std::vector<double>& dout, Gradients& g) {
      if (ia < 0) return;
      auto& ga = g.accum(ia, total);
      for (std::int64_t r = 0; r < m; ++r) {
        for (std::int64_t j = 0; j < ncols; ++j) {
          ga[static_cast<std::size_t>(r * c + c0 + j)] += dout[static_cast<std::size_t>(r * ncols + j)];
        }
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& a, std::vector<std::int64_t> idx) {
  require(a.rank() == 2, "gather_rows: expects rank-2");
  const auto m = a.dim(0), c = a.dim(1);
  auto out_buf = alloc(static_cast<std::int64_t>(idx.size()) * c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < m, "gather_rows: index out of range");
    std::copy(a.values->begin() + static_cast<std::ptrdiff_t>(idx[i] * c),
              a.values->begin() + static_cast<std::ptrdiff_t>((idx[i] + 1) * c),
              out_buf->begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(i) * c));
  }
  Tensor out;
  out.shape = {static_cast<std::int64_t>(idx.size()), c};
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of(a)) {
    const int ia = a.node;
    const auto total = a.size();
    out.tape = tp;
    out.node = tp->record(out.size(), [ia, idx = std::move(idx), c, total](const std::vector<double>& dout, Gradients& g) {
      if (ia < 0) return;
      auto& ga = g.accum(ia, total);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::int64_t j = 0; j < c; ++j) {
          ga[static_cast<std::size_t>(idx[i] * c + j)] +=
              dout[static_cast<std::size_t>(static_cast<std::int64_t>(i) * c + j)];
        }
      }
    });
  }
  return out;
}

Tensor row_max_pool(const Tensor& a, std::int64_t r0, std::int64_t nrows) {
  require(a.rank() == 2, "row_max_pool: expects rank-2");
  require(nrows >= 1, "row_max_pool: zero length");
  require(r0 >= 0 && r0 + nrows <= a.dim(0), "row_max_pool: out of range");
  const auto c = a.dim(1);
  auto out_buf = alloc(c);
  for (std::int64_t j = 0; j < c; ++j) {
    double best = a.at(r0, j);
    for (std::int64_t r = 1; r < nrows; ++r) {
      const double v = a.at(r0 + r, j);
      if (v > best) best = v;  // strictly greater: ties keep the earliest row
    }
    (*out_buf)[static_cast<std::size_t>(j)] = best;
  }
  Tensor out;
  out.shape = {c};
  out.values = std::move(out_buf);
  if (Tape* tp = tape_of(a)) {
    const int ia = a.node;
    auto av = a.values;
    const auto total = a.size();
    out.tape = tp;
    out.node = tp->record(c, [ia, av, r0, nrows, c, total](const std::vector<double>& dout, Gradients& g) {
      if (ia < 0) return;
      auto& ga = g.accum(ia, total);
      for (std::int64_t j = 0; j < c; ++j) {
        std::int64_t arg = 0;
        double best = (*av)[static_cast<std::size_t>(r0 * c + j)];
        for (std::int64_t r = 1; r < nrows; ++r) {
          const double v = (*av)[static_cast<std::size_t>((r0 + r) * c + j)];
          if (v > best) {
            best = v;
            arg = r;
          }
        }
        ga[static_cast<std::size_t>((r0 + arg) * c + j)] += dout[static_cast<std::size_t>(j)];
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  const auto n = a.size();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += a.at(i);
  Tensor out = scalar_tensor(s);
  if (Tape* tp = tape_of(a)) {
    const int ia = a.node;
    out.tape = tp;
    out.node = tp->record(1, [ia, n](const std::vector<double>& dout, Gradients& g) {
      if (ia < 0) return;
      auto& ga = g.accum(ia, n);
      for (std::int64_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += dout[0];
    });
  }
  return out;
}

Tensor softmax_xent_mean(const Tensor& logits, std::span<const std::int64_t> labels) {
  require(logits.rank() == 2, "softmax_xent_mean: logits must be rank-2");
  const auto bsz = logits.dim(0), c = logits.dim(1);
  require(static_cast<std::int64_t>(labels.size()) == bsz, "softmax_xent_mean: label count mismatch");
  auto probs = std::make_shared<Buffer>(bsz * c);
  double loss = 0.0;
  for (std::int64_t r = 0; r < bsz; ++r) {
    require(labels[static_cast<std::size_t>(r)] >= 0 && labels[static_cast<std::size_t>(r)] < c,
            "softmax_xent_mean: label out of range");
    double m = logits.at(r, 0);
    for (std::int64_t j = 1; j < c; ++j) m = std::max(m, logits.at(r, j));
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      const double e = std::exp(logits.at(r, j) - m);
      (*probs)[static_cast<std::size_t>(r * c + j)] = e;
      s += e;
    }
    const double inv = 1.0 / s;
    for (std::int64_t j = 0; j < c; ++j) (*probs)[static_cast<std::size_t>(r * c + j)] *= inv;
    loss += std::log(s) + m - logits.at(r, labels[static_cast<std::size_t>(r)]);
  }
  loss /= static_cast<double>(bsz);
  Tensor out = scalar_tensor(loss);
  if (Tape* tp = tape_of(logits)) {
    const int il = logits.node;
    std::vector<std::int64_t> lab(labels.begin(), labels.end());
    out.tape = tp;
    out.node = tp->record(1, [il, probs, lab = std::move(lab), bsz, c](const std::vector<double>& dout, Gradients& g) {
      if (il < 0) return;
      auto& gl = g.accum(il, bsz * c);
      const double f = dout[0] / static_cast<double>(bsz);
      for (std::int64_t r = 0; r < bsz; ++r) {
        for (std::int64_t j = 0; j < c; ++j) {
          const double onehot = j == lab[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
          gl[static_cast<std::size_t>(r * c + j)] +=
              f * ((*probs)[static_cast<std::size_t>(r * c + j)] - onehot);
        }
      }
    });
  }
  return out;
}

std::vector<std::int64_t> argmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, "argmax_rows: expects rank-2");
  const auto bsz = logits.dim(0), c = logits.dim(1);
  std::vector<std::int64_t> out(static_cast<std::size_t>(bsz));
  for (std::int64_t r = 0; r < bsz; ++r) {
    std::int64_t arg = 0;
    double best = logits.at(r, 0);
    for (std::int64_t j = 1; j < c; ++j) {
      if (logits.at(r, j) > best) {
        best = logits.at(r, j);
        arg = j;
      }
    }
    out[static_cast<std::size_t>(r)] = arg;
  }
  return out;
}

Tensor apply_dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const double scale_v = 1.0 / (1.0 - p);
  std::vector<double> mask(static_cast<std::size_t>(x.size()));
  for (auto& m : mask) m = rng.uniform() >= p ? scale_v : 0.0;
  return mul(x, make_tensor(x.shape, std::move(mask)));
}

}  // namespace subi
