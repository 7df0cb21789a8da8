#ifndef MMCAL_EQUILIBRIUM_HPP
#define MMCAL_EQUILIBRIUM_HPP

#include <vector>

#include "mmcal/choice.hpp"
#include "mmcal/dnl.hpp"
#include "mmcal/network.hpp"

namespace mmcal {

// Dynamic O-D demand q indexed by (O-D pair, departure interval).
struct DemandTensor {
  int num_od = 0;
  int num_intervals = 0;
  std::vector<double> v;  // od-major

  DemandTensor() = default;
  DemandTensor(int od, int intervals)
      : num_od(od),
        num_intervals(intervals),
        v(static_cast<size_t>(od) * intervals, 0.0) {}
  double& at(int od, int t) {
    return v[static_cast<size_t>(od) * num_intervals + t];
  }
  double at(int od, int t) const {
    return v[static_cast<size_t>(od) * num_intervals + t];
  }
};

// Canonical grouping of each O-D pair's paths into second-level mode nests,
// in enum order; the block layout shared by assignment and all Jacobians.
struct OdChoiceLayout {
  struct Nest {
    SubMode g;
    std::vector<int> paths;  // global path indices, ascending
  };
  std::vector<std::vector<Nest>> per_od;
  static OdChoiceLayout build(const MultiModalNetwork& net);
  // Flattened path order of one od block (nest-major).
  std::vector<int> block_paths(int od) const;
};

struct EquilibriumConfig {
  int max_iterations = 500;
  double convergence_eps = 1e-3;
  enum class Averaging { Msa, FixedStep } averaging = Averaging::Msa;
  double fixed_step = 0.5;
  // Representative departure time within an interval for cost assembly.
  enum class DeparturePoint { Start, Mid } departure_point =
      DeparturePoint::Mid;
  LoadingConfig loading;
  ScaleConfig scales;
};

struct EquilibriumState {
  PathFlowVector flows;
  std::vector<PathCostInputs> cost_inputs;  // per (path, dep interval)
  std::vector<double> costs;                // disutilities, same indexing
  int iterations = 0;
  bool converged = false;
  std::vector<double> gap_history;
};

struct SolveResult {
  EquilibriumState state;
  DnlOutputs outputs;  // the load of the returned flows
};

// Leg-chained generalized cost inputs for every (path, departure interval),
// using piecewise-constant link times and the realized trip events.
std::vector<PathCostInputs> assemble_cost_inputs(
    const MultiModalNetwork& net, const DnlOutputs& out,
    const LoadingConfig& loading, EquilibriumConfig::DeparturePoint dp,
    int num_dep_intervals);

std::vector<double> evaluate_costs(const MultiModalNetwork& net,
                                   const std::vector<PathCostInputs>& inputs,
                                   const ParamVector& params,
                                   int num_dep_intervals);

// One nested-logit assignment of q against fixed costs.
PathFlowVector assign(const MultiModalNetwork& net, const OdChoiceLayout& layout,
                      const DemandTensor& q, const std::vector<double>& costs,
                      const ScaleConfig& scales, int num_dep_intervals);

// Stochastic dynamic user equilibrium by successive averages.
SolveResult solve(const MultiModalNetwork& net, const DemandTensor& q,
                  const ParamVector& params, const EquilibriumConfig& cfg);

// Same, seeded with a previous iterate (averaging steps shift by one so the
// seed is not discarded).
SolveResult solve_from(const MultiModalNetwork& net, const DemandTensor& q,
                       const ParamVector& params, const EquilibriumConfig& cfg,
                       const PathFlowVector& initial_flows);

}  // namespace mmcal

#endif  // MMCAL_EQUILIBRIUM_HPP
