// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <cstdio>
#include <string>
#include <vector>

#include "dcsgd/verify.hpp"

using namespace dcsgd;

namespace {

struct Criterion {
  std::string label;
  std::vector<PropertyResult> results;
  bool pass() const {
    for (const auto& r : results)
      if (!r.pass) return false;
    return true;
  }
};

void print(const Criterion& c, int index) {
  std::printf("[%s] criterion %2d: %s\n", c.pass() ? "PASS" : "FAIL", index,
              c.label.c_str());
  for (const auto& r : c.results)
    std::printf("        %-34s %s margin=%-12.6g %s\n", r.name.c_str(),
                r.pass ? "pass" : "FAIL", r.margin, r.detail.c_str());
}

}  // namespace

int main() {
  std::vector<Criterion> criteria;

  criteria.push_back({"degeneracy equivalences are exact over 1000 updates",
                      {check_degeneracy_equivalences()}});
  criteria.push_back({"Taylor-order error scaling on softmax regression (d=10, K=5)",
                      {check_taylor_order()}});
  criteria.push_back({"lambda-MSE ordering and sufficient-region sweeps, zero counterexamples",
                      check_lambda_mse_sweep()});
  criteria.push_back({"Fisher identity: eps_t(w*, w*) <= 1e-10 and monotone approach",
                      {check_fisher_identity()}});
  criteria.push_back({"diagonal MSE bound holds on 100 probes",
                      {check_diag_mse_bound()}});
  criteria.push_back({"convergence ordering, M=8 round-robin, 20 passes, 10 seeds",
                      check_convergence_ordering()});
  criteria.push_back({"staleness: round-robin tau = M-1 exact, stochastic mean within 10%",
                      {check_staleness_model()}});
  criteria.push_back({"DC-SSGD: lambda-0 identity, quadratic exactness, distance ordering",
                      check_dc_ssgd()});
  criteria.push_back({"adaptive lambda recursion matches hand-computed values",
                      {check_adaptive_lambda()}});
  criteria.push_back({"determinism of reruns and checkpoint resume",
                      {check_determinism_persistence()}});

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    print(criteria[i], static_cast<int>(i) + 1);
    if (!criteria[i].pass()) ++failures;
  }
  if (failures) std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  else std::printf("all %zu criteria passed\n", criteria.size());
  return failures == 0 ? 0 : 1;
}
