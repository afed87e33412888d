#pragma once

#include <string>
#include <vector>

#include "subilstm/scheduler.hpp"

namespace subi {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 7;
  // Perturbs one element of the batched encoder output inside the oracle
  // comparison; the suite must then fail. Detector sanity hook.
  bool inject_fault = false;
};

// Gradient checks, oracle equivalences, reduction/reversal identities,
// scheduler conservation, serialization round-trips.
std::vector<CheckResult> run_verification(const VerifyOptions& opts = {});

bool all_passed(const std::vector<CheckResult>& results);

// Independent reference: encodes every prefix/suffix with fresh zero-state
// loops over the generic cell only. Used as the third route in oracle
// comparisons (the naive and batched encoders share the fused cell).
ContextualReps reference_subilstm(const Tensor& seq, const LstmParams& fwd_prefix,
                                  const LstmParams& fwd_suffix, const LstmParams& rev_prefix,
                                  const LstmParams& rev_suffix, Combiner combiner);

}  // namespace subi
