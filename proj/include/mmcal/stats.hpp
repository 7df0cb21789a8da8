#ifndef MMCAL_STATS_HPP
#define MMCAL_STATS_HPP

#include <string>
#include <vector>

#include "mmcal/estimation.hpp"

namespace mmcal {

double normal_cdf(double x);
// Inverse standard normal CDF, accurate to ~1e-15.
double normal_quantile(double u);

struct WaldRow {
  std::string name;
  double estimate = 0;
  double null_value = 0;
  double se = 0;
  double z = 0;
  double p_value = 1;
  double ci_lo = 0, ci_hi = 0;
  bool significant = false;
  bool zero_column = false;
};

struct WaldReport {
  std::string component;
  double sigma2 = 0;
  int n = 0;
  int p = 0;
  double condition = 0;
  bool pseudo_inverse = false;
  bool skipped = false;  // n <= p, excluded from the combined rule
  std::vector<WaldRow> rows;
};

// Jacobians of the observed simulated variables with respect to the free
// parameters, frozen at the converged forward pass. Row order follows the
// observation lists; column order follows free_idx.
struct OutputJacobians {
  std::vector<int> free_idx;          // ParamVector entry per column
  std::vector<std::string> names;
  std::vector<double> flow, pt, tt;   // row-major
  int p = 0;
  int n_flow = 0, n_pt = 0, n_tt = 0;
};

OutputJacobians output_jacobian(const MultiModalNetwork& net,
                                const SolveResult& forward,
                                const DemandTensor& q,
                                const ParamVector& params,
                                const ScaleConfig& scales,
                                const LoadingConfig& loading,
                                const ObservationSet& obs);

// Pseudo-t statistics from Var(theta) = sigma^2 (J^T J)^{-1}; a pseudo
// inverse with relative singular-value cutoff 1e-10 backs rank-deficient
// cases.
WaldReport wald_test(const std::vector<double>& J_rowmajor, int n, int p,
                     double sse, const std::vector<std::string>& names,
                     const std::vector<double>& estimates,
                     const std::vector<double>& null_values, double alpha);

struct CombinedTests {
  std::vector<WaldReport> reports;     // flow, board_alight, travel_time
  std::vector<std::string> names;      // free parameter names
  std::vector<uint8_t> significant;    // OR over non-skipped components
};

CombinedTests test_all_components(const MultiModalNetwork& net,
                                  const SolveResult& forward,
                                  const DemandTensor& q,
                                  const ParamVector& params,
                                  const ScaleConfig& scales,
                                  const LoadingConfig& loading,
                                  const ObservationSet& obs, double alpha);

struct SelectionRound {
  int iteration = 0;
  std::vector<std::string> removed;
};

struct SelectionResult {
  ParamVector theta;
  DemandTensor q;
  CombinedTests tests;                // at the final estimates
  std::vector<SelectionRound> history;
  int rounds = 0;
  bool all_significant = false;
};

// Iterative estimation, testing and removal of non-significant variables.
SelectionResult select_variables(const MultiModalNetwork& net,
                                 const DemandTensor& q0,
                                 const ParamVector& theta0,
                                 const ObservationSet& obs, double alpha,
                                 int max_rounds,
                                 const EstimationConfig& est_cfg);

void write_wald_report(const std::vector<WaldReport>& reports,
                       const std::string& path);
void write_selection_history(const std::vector<SelectionRound>& history,
                             const std::string& path);

}  // namespace mmcal

#endif  // MMCAL_STATS_HPP
