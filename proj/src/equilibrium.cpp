#include "mmcal/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mmcal {

OdChoiceLayout OdChoiceLayout::build(const MultiModalNetwork& net) {
  OdChoiceLayout layout;
  layout.per_od.resize(net.od_pairs.size());
  for (size_t od = 0; od < net.od_pairs.size(); ++od) {
    for (int g = 0; g < kNumSubModes; ++g) {
      Nest nest;
      nest.g = static_cast<SubMode>(g);
      for (int pi : net.paths_by_od[od])
        if (net.paths[pi].mode == nest.g) nest.paths.push_back(pi);
      if (!nest.paths.empty()) layout.per_od[od].push_back(std::move(nest));
    }
  }
  return layout;
}

std::vector<int> OdChoiceLayout::block_paths(int od) const {
  std::vector<int> out;
  for (const auto& nest : per_od[od])
    out.insert(out.end(), nest.paths.begin(), nest.paths.end());
  return out;
}

namespace {

// First trip of the line departing from `seq` at or after clock time tau.
// Returns the trip index or -1.
int first_catchable_trip(const MultiModalNetwork& net, const DnlOutputs& out,
                         int line, int seq, double tau) {
  const auto& ln = net.lines[line];
  int best = -1;
  double best_dep = std::numeric_limits<double>::infinity();
  for (size_t trip = 0; trip < ln.trip_departures.size(); ++trip) {
    int st = net.stop_trip_index(line, static_cast<int>(trip), seq);
    double dep = out.stop_trip_departure[st];
    if (dep >= tau && dep < best_dep) {
      best = static_cast<int>(trip);
      best_dep = dep;
    }
  }
  return best;
}

int stop_seq_of(const TransitLine& ln, int stop) {
  for (size_t s = 0; s < ln.stops.size(); ++s)
    if (ln.stops[s] == stop) return static_cast<int>(s);
  return -1;
}

}  // namespace

std::vector<PathCostInputs> assemble_cost_inputs(
    const MultiModalNetwork& net, const DnlOutputs& out,
    const LoadingConfig& loading, EquilibriumConfig::DeparturePoint dp,
    int num_dep_intervals) {
  const double horizon = loading.horizon_sec;
  std::vector<PathCostInputs> all(net.paths.size() * num_dep_intervals);
  for (size_t pi = 0; pi < net.paths.size(); ++pi) {
    const auto& path = net.paths[pi];
    const auto& od = net.od_pairs[path.od];
    for (int t = 0; t < num_dep_intervals; ++t) {
      PathCostInputs in;
      in.parking_fee = path.parking_fee;
      in.fare = path.fare;
      in.income = od.median_income;
      in.pop_density_o = od.pop_density_o;
      in.pop_density_d = od.pop_density_d;
      double tau =
          (t + (dp == EquilibriumConfig::DeparturePoint::Mid ? 0.5 : 0.0)) *
          loading.demand_interval_sec;
      for (const auto& leg : path.legs) {
        switch (leg.kind) {
          case PathLeg::Kind::Drive: {
            int h = std::clamp(static_cast<int>(tau / loading.agg_interval_sec),
                               0, out.num_intervals - 1);
            double tt_min = out.link_tt_min[out.li(leg.link, h)];
            in.w_car += tt_min;
            tau += tt_min * 60.0;
            break;
          }
          case PathLeg::Kind::Walk: {
            double sec = net.walk_time_sec(net.walks[leg.walk]);
            in.walk_time += sec / 60.0;
            tau += sec;
            break;
          }
          case PathLeg::Kind::Park:
            break;
          case PathLeg::Kind::Ride: {
            const auto& ln = net.lines[leg.line];
            int bseq = stop_seq_of(ln, leg.board_stop);
            int aseq = stop_seq_of(ln, leg.alight_stop);
            int trip = first_catchable_trip(net, out, leg.line, bseq, tau);
            double wait_sec, ride_sec;
            if (trip < 0) {
              wait_sec = std::max(0.0, horizon - tau);
              ride_sec = 0;
              tau = horizon;
            } else {
              int st_b = net.stop_trip_index(leg.line, trip, bseq);
              int st_a = net.stop_trip_index(leg.line, trip, aseq);
              double dep = out.stop_trip_departure[st_b];
              double arr = out.stop_trip_arrival[st_a];
              if (!std::isfinite(arr)) arr = horizon;
              wait_sec = dep - tau;
              ride_sec = std::max(0.0, arr - dep);
              tau = arr;
            }
            if (ln.is_metro) {
              in.wait_metro += wait_sec / 60.0;
              in.w_metro += ride_sec / 60.0;
            } else {
              in.wait_bus += wait_sec / 60.0;
              in.w_bus += ride_sec / 60.0;
            }
            break;
          }
        }
      }
      all[pi * num_dep_intervals + t] = in;
    }
  }
  return all;
}

std::vector<double> evaluate_costs(const MultiModalNetwork& net,
                                   const std::vector<PathCostInputs>& inputs,
                                   const ParamVector& params,
                                   int num_dep_intervals) {
  std::vector<double> costs(inputs.size());
  for (size_t pi = 0; pi < net.paths.size(); ++pi)
    for (int t = 0; t < num_dep_intervals; ++t) {
      size_t i = pi * num_dep_intervals + t;
      costs[i] = disutility(net.paths[pi].mode, inputs[i], params);
    }
  return costs;
}

PathFlowVector assign(const MultiModalNetwork& net,
                      const OdChoiceLayout& layout, const DemandTensor& q,
                      const std::vector<double>& costs,
                      const ScaleConfig& scales, int num_dep_intervals) {
  if (q.num_od != static_cast<int>(net.od_pairs.size()))
    throw ContractError("demand tensor does not index the O-D table");
  PathFlowVector f(static_cast<int>(net.paths.size()), num_dep_intervals);
  for (int od = 0; od < q.num_od; ++od) {
    const auto& nests = layout.per_od[od];
    if (nests.empty()) {
      for (int t = 0; t < num_dep_intervals; ++t)
        if (q.at(od, t) > 0)
          throw ContractError("demand on an O-D pair with no paths");
      continue;
    }
    for (int t = 0; t < num_dep_intervals; ++t) {
      ChoiceInstance inst;
      for (const auto& nest : nests) {
        ChoiceInstance::Nest n;
        n.g = nest.g;
        for (int pi : nest.paths)
          n.costs.push_back(costs[pi * num_dep_intervals + t]);
        inst.nests.push_back(std::move(n));
      }
      auto probs = nested_probabilities(inst, scales);
      auto flows = path_flows(q.at(od, t), probs);
      size_t i = 0;
      for (const auto& nest : nests)
        for (int pi : nest.paths) f.at(pi, t) = flows[i++];
    }
  }
  return f;
}

namespace {

double rel_l1_change(const PathFlowVector& a, const PathFlowVector& b) {
  double num = 0, den = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    num += std::abs(a.v[i] - b.v[i]);
    den += std::abs(b.v[i]);
  }
  return num / std::max(den, 1.0);
}

}  // namespace

namespace {

SolveResult solve_impl(const MultiModalNetwork& net, const DemandTensor& q,
                       const ParamVector& params, const EquilibriumConfig& cfg,
                       const PathFlowVector* initial_flows) {
  if (cfg.convergence_eps <= 0 || cfg.max_iterations < 1)
    throw ConfigError("bad equilibrium configuration");
  for (double d : q.v)
    if (d < 0) throw ContractError("negative demand");

  const int T = q.num_intervals;
  auto layout = OdChoiceLayout::build(net);

  SolveResult res;
  auto& st = res.state;
  st.flows = PathFlowVector(static_cast<int>(net.paths.size()), T);
  int n_offset = 0;
  if (initial_flows) {
    if (initial_flows->v.size() != st.flows.v.size())
      throw ContractError("warm-start flows do not match the path table");
    st.flows = *initial_flows;
    n_offset = 1;
  }

  for (int n = 1; n <= cfg.max_iterations; ++n) {
    res.outputs = load(net, st.flows, cfg.loading);
    st.cost_inputs = assemble_cost_inputs(net, res.outputs, cfg.loading,
                                          cfg.departure_point, T);
    st.costs = evaluate_costs(net, st.cost_inputs, params, T);
    for (double c : st.costs)
      if (!std::isfinite(c))
        throw ContractError("non-finite path cost during equilibrium");
    PathFlowVector y = assign(net, layout, q, st.costs, cfg.scales, T);
    // Self-consistency of the current averaged iterate, and the relative
    // change the averaging step would apply to it.
    double gap_pre = rel_l1_change(y, st.flows);
    double step = cfg.averaging == EquilibriumConfig::Averaging::Msa
                      ? 1.0 / (n + n_offset)
                      : cfg.fixed_step;
    double gap = step * gap_pre;
    st.gap_history.push_back(gap);
    if (gap_pre < cfg.convergence_eps) {
      st.converged = true;
      st.iterations = std::max(1, n - 1);
      return res;
    }
    for (size_t i = 0; i < st.flows.v.size(); ++i)
      st.flows.v[i] += step * (y.v[i] - st.flows.v[i]);
    st.iterations = n;
    if (gap < cfg.convergence_eps &&
        gap_pre < 10 * cfg.convergence_eps) {
      st.converged = true;
      res.outputs = load(net, st.flows, cfg.loading);
      st.cost_inputs = assemble_cost_inputs(net, res.outputs, cfg.loading,
                                            cfg.departure_point, T);
      st.costs = evaluate_costs(net, st.cost_inputs, params, T);
      return res;
    }
  }
  // iteration cap: reload so outputs/costs match the returned flows
  res.outputs = load(net, st.flows, cfg.loading);
  st.cost_inputs = assemble_cost_inputs(net, res.outputs, cfg.loading,
                                        cfg.departure_point, T);
  st.costs = evaluate_costs(net, st.cost_inputs, params, T);
  return res;
}

}  // namespace

SolveResult solve(const MultiModalNetwork& net, const DemandTensor& q,
                  const ParamVector& params, const EquilibriumConfig& cfg) {
  return solve_impl(net, q, params, cfg, nullptr);
}

SolveResult solve_from(const MultiModalNetwork& net, const DemandTensor& q,
                       const ParamVector& params, const EquilibriumConfig& cfg,
                       const PathFlowVector& initial_flows) {
  return solve_impl(net, q, params, cfg, &initial_flows);
}

}  // namespace mmcal
