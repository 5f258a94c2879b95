#pragma once

// Oracles for the replacement properties, shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>

#include "sra/model_format.hpp"
#include "sra/surgery.hpp"

namespace sra::testing {

struct IsolationResult {
  bool nontarget_exact = true;
  double max_target_rel_error = 0;  // |delta - (w_out*F + db)| / max(1, |w_out*F + db|)
};

/// Compares the attacked model against the pruned one (same replacement with
/// zero wiring) and the standalone subnet.
inline IsolationResult isolation_check(const Model& victim, const BackdoorSubnet& subnet, const SubnetSpec& spec,
                                       const Tensor<float>& x) {
  const Model attacked = replace_subnet(victim, subnet, spec);
  BackdoorSubnet unwired = subnet;
  unwired.wiring = {0.0, 0.0};
  const Model pruned = replace_subnet(victim, unwired, spec);
  const Tensor<float> a = predict_logits(attacked, x);
  const Tensor<float> p = predict_logits(pruned, x);
  const Eigen::ArrayXf f = subnet_outputs(subnet, x);
  IsolationResult r;
  const Index n = x.dim(0), c = victim.arch.classes;
  for (Index i = 0; i < n; ++i) {
    for (Index y = 0; y < c; ++y) {
      if (y == spec.target) {
        const double delta = static_cast<double>(a[i * c + y]) - static_cast<double>(p[i * c + y]);
        const double expect = subnet.wiring.w_out * static_cast<double>(f[i]) + subnet.wiring.delta_b;
        r.max_target_rel_error = std::max(r.max_target_rel_error, std::abs(delta - expect) / std::max(1.0, std::abs(expect)));
      } else if (a[i * c + y] != p[i * c + y]) {
        r.nontarget_exact = false;
      }
    }
  }
  return r;
}

/// Byte-level equality of patch application and in-memory replacement.
inline bool patch_equivalent(const Model& victim, const BackdoorSubnet& subnet, const SubnetSpec& spec) {
  const Bytes direct = serialize_model(replace_subnet(victim, subnet, spec));
  const Bytes patched = apply_patch(serialize_model(victim), emit_patch(victim.arch, spec, subnet));
  return direct == patched;
}

/// Number of 4-byte parameter elements that differ between two serialized
/// models of the same architecture.
inline Index serialized_diff_count(const Model& a, const Model& b) {
  const Bytes ba = serialize_model(a), bb = serialize_model(b);
  const ModelFileInfo info = inspect_model(ba);
  Index diff = 0;
  for (std::uint64_t e = 0; e < info.param_count; ++e) {
    const std::size_t at = info.param_block_offset + 4 * e;
    if (!std::equal(ba.begin() + static_cast<std::ptrdiff_t>(at), ba.begin() + static_cast<std::ptrdiff_t>(at + 4),
                    bb.begin() + static_cast<std::ptrdiff_t>(at))) {
      ++diff;
    }
  }
  return diff;
}

}  // namespace sra::testing
