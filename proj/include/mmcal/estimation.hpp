#ifndef MMCAL_ESTIMATION_HPP
#define MMCAL_ESTIMATION_HPP

#include <optional>
#include <string>
#include <vector>

#include "mmcal/equilibrium.hpp"

namespace mmcal {

// Observed entries only; anything not listed is unobserved and contributes
// nothing to the loss or its gradients.
struct ObservationSet {
  struct FlowObs {
    int link;
    int interval;
    double value;
  };
  struct TtObs {
    int link;
    int interval;
    double value_min;
  };
  struct PtObs {
    int stop_trip;
    bool alight;
    double value;
  };
  std::vector<FlowObs> flow;
  std::vector<TtObs> tt;
  std::vector<PtObs> pt;
};

void save_observations(const ObservationSet& obs, const MultiModalNetwork& net,
                       const std::string& dir);
ObservationSet load_observations(const MultiModalNetwork& net,
                                 const std::string& dir);

struct EstimationConfig {
  double w1 = 1, w2 = 1, w3 = 1;
  // Rescale each component by the mean square of its observations so the
  // three data sources are commensurate.
  bool normalize_components = true;
  double lr_q = 0.05;
  double lr_theta = 0.01;
  int iterations = 100;
  enum class Optimizer { Plain, Adam } optimizer = Optimizer::Adam;
  double momentum = 0.0;       // Plain only
  double lr_decay = 1.0;       // multiplicative per iteration
  std::optional<double> q_upper;
  uint64_t seed = 0;
  double divergence_factor = 10.0;
  int divergence_run = 5;
  bool warm_start = true;
  EquilibriumConfig equilibrium;
};

struct LossBreakdown {
  double total = 0;
  double sse_flow = 0, sse_pt = 0, sse_tt = 0;      // raw sums of squares
  double nmse_flow = 0, nmse_pt = 0, nmse_tt = 0;   // SSE / sum of obs^2
  double w_eff[3] = {0, 0, 0};                      // applied weights
};

struct Gradients {
  DemandTensor dq;
  std::vector<double> dtheta;  // one per ParamVector entry
};

struct EstimationTrace {
  struct Row {
    int iteration;
    double total;
    double nmse_flow, nmse_pt, nmse_tt;
    uint64_t demand_hash;
  };
  std::vector<Row> rows;
  std::vector<std::vector<double>> theta_snapshots;
};

struct EstimateResult {
  DemandTensor q;
  ParamVector theta;
  EstimationTrace trace;
  SolveResult best_forward;
  LossBreakdown best_loss;
  int best_iteration = 0;
  bool aborted_diverging = false;
};

struct FitComponent {
  std::string name;
  double r2 = 0;
  double sse = 0;
  int n = 0;
  bool undefined = false;  // zero variance in observations
};

// Effective weights after normalization; throws on an empty component with
// a nonzero weight.
void resolve_weights(const ObservationSet& obs, const EstimationConfig& cfg,
                     double w_eff[3]);

LossBreakdown loss(const DnlOutputs& sim, const ObservationSet& obs,
                   const double w_eff[3]);

// dL/df over every (path, departure interval), assembled through the DAR
// matrices and the diagonal travel-time derivative.
std::vector<double> dloss_dflow(const DnlOutputs& sim,
                                const ObservationSet& obs,
                                const double w_eff[3],
                                const std::vector<double>& dt_dx,
                                int num_paths, int num_dep_intervals);

// df/dtheta, row-major (num_paths*T) x params.size(), frozen at the given
// converged costs.
std::vector<double> dflow_dtheta(const MultiModalNetwork& net,
                                 const OdChoiceLayout& layout,
                                 const DemandTensor& q,
                                 const std::vector<double>& costs,
                                 const std::vector<PathCostInputs>& inputs,
                                 const ParamVector& params,
                                 const ScaleConfig& scales, int T);

Gradients backward(const MultiModalNetwork& net, const OdChoiceLayout& layout,
                   const SolveResult& forward, const DemandTensor& q,
                   const ParamVector& params, const ScaleConfig& scales,
                   const ObservationSet& obs, const double w_eff[3],
                   const LoadingConfig& loading);

EstimateResult estimate(const MultiModalNetwork& net, const DemandTensor& q0,
                        const ParamVector& theta0, const ObservationSet& obs,
                        const EstimationConfig& cfg);

std::vector<FitComponent> goodness_of_fit(const DnlOutputs& sim,
                                          const ObservationSet& obs);

uint64_t hash_doubles(const std::vector<double>& v);

void write_trace(const EstimationTrace& trace, const std::string& path);
void write_fit_report(const std::vector<FitComponent>& fit,
                      const std::string& path);

}  // namespace mmcal

#endif  // MMCAL_ESTIMATION_HPP
