#include "mmcal/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mmcal/io.hpp"

namespace mmcal {

void save_observations(const ObservationSet& obs, const MultiModalNetwork& net,
                       const std::string& dir) {
  io::ensure_dir(dir);
  using Row = std::vector<std::string>;
  auto d = io::format_double;
  {
    std::vector<Row> rows;
    for (const auto& o : obs.flow)
      rows.push_back({net.links[o.link].id, std::to_string(o.interval),
                      d(o.value)});
    io::write_tsv(dir + "/obs_flow.tsv", {"link", "interval", "count"}, rows);
  }
  {
    std::vector<Row> rows;
    for (const auto& o : obs.tt)
      rows.push_back({net.links[o.link].id, std::to_string(o.interval),
                      d(o.value_min)});
    io::write_tsv(dir + "/obs_tt.tsv", {"link", "interval", "minutes"}, rows);
  }
  {
    std::vector<Row> rows;
    for (const auto& o : obs.pt) {
      const auto& st = net.stop_trips[o.stop_trip];
      rows.push_back({net.lines[st.line].id, std::to_string(st.trip),
                      net.stops[st.stop].id, o.alight ? "alight" : "board",
                      d(o.value)});
    }
    io::write_tsv(dir + "/obs_pt.tsv",
                  {"line", "trip", "stop", "event", "count"}, rows);
  }
}

ObservationSet load_observations(const MultiModalNetwork& net,
                                 const std::string& dir) {
  ObservationSet obs;
  {
    auto t = io::read_tsv(dir + "/obs_flow.tsv");
    int cl = t.require_col("link"), ci = t.require_col("interval"),
        cv = t.require_col("count");
    for (size_t r = 0; r < t.rows.size(); ++r) {
      int link = net.link_index(t.cell(r, cl));
      if (link < 0)
        throw StructuralError("obs_flow: unknown link " + t.cell(r, cl));
      obs.flow.push_back(
          {link, static_cast<int>(io::parse_long(t.cell(r, ci), "obs_flow")),
           io::parse_double(t.cell(r, cv), "obs_flow")});
    }
  }
  {
    auto t = io::read_tsv(dir + "/obs_tt.tsv");
    int cl = t.require_col("link"), ci = t.require_col("interval"),
        cv = t.require_col("minutes");
    for (size_t r = 0; r < t.rows.size(); ++r) {
      int link = net.link_index(t.cell(r, cl));
      if (link < 0)
        throw StructuralError("obs_tt: unknown link " + t.cell(r, cl));
      obs.tt.push_back(
          {link, static_cast<int>(io::parse_long(t.cell(r, ci), "obs_tt")),
           io::parse_double(t.cell(r, cv), "obs_tt")});
    }
  }
  {
    auto t = io::read_tsv(dir + "/obs_pt.tsv");
    int cl = t.require_col("line"), ct = t.require_col("trip"),
        cs = t.require_col("stop"), ce = t.require_col("event"),
        cv = t.require_col("count");
    for (size_t r = 0; r < t.rows.size(); ++r) {
      int line = net.line_index(t.cell(r, cl));
      int stop = net.stop_index(t.cell(r, cs));
      if (line < 0 || stop < 0)
        throw StructuralError("obs_pt: unknown line or stop at row " +
                              std::to_string(r));
      int trip = static_cast<int>(io::parse_long(t.cell(r, ct), "obs_pt"));
      int seq = -1;
      const auto& ln = net.lines[line];
      for (size_t s = 0; s < ln.stops.size(); ++s)
        if (ln.stops[s] == stop) seq = static_cast<int>(s);
      int st = net.stop_trip_index(line, trip, seq);
      if (st < 0)
        throw StructuralError("obs_pt: stop-trip out of range at row " +
                              std::to_string(r));
      obs.pt.push_back({st, t.cell(r, ce) == "alight",
                        io::parse_double(t.cell(r, cv), "obs_pt")});
    }
  }
  return obs;
}

namespace {

double mean_square_flow(const ObservationSet& obs) {
  double s = 0;
  for (const auto& o : obs.flow) s += o.value * o.value;
  return obs.flow.empty() ? 0 : s / obs.flow.size();
}
double mean_square_pt(const ObservationSet& obs) {
  double s = 0;
  for (const auto& o : obs.pt) s += o.value * o.value;
  return obs.pt.empty() ? 0 : s / obs.pt.size();
}
double mean_square_tt(const ObservationSet& obs) {
  double s = 0;
  for (const auto& o : obs.tt) s += o.value_min * o.value_min;
  return obs.tt.empty() ? 0 : s / obs.tt.size();
}

}  // namespace

void resolve_weights(const ObservationSet& obs, const EstimationConfig& cfg,
                     double w_eff[3]) {
  const double w[3] = {cfg.w1, cfg.w2, cfg.w3};
  const bool empty[3] = {obs.flow.empty(), obs.pt.empty(), obs.tt.empty()};
  const double ms[3] = {mean_square_flow(obs), mean_square_pt(obs),
                        mean_square_tt(obs)};
  if ((w[0] < 0 || w[1] < 0 || w[2] < 0) ||
      (w[0] == 0 && w[1] == 0 && w[2] == 0))
    throw ConfigError("loss weights must be nonnegative and not all zero");
  for (int i = 0; i < 3; ++i) {
    if (w[i] > 0 && empty[i])
      throw ConfigError("empty observation component with nonzero weight");
    w_eff[i] = w[i];
    if (cfg.normalize_components && w[i] > 0)
      w_eff[i] = w[i] / std::max(ms[i], 1e-12);
  }
}

LossBreakdown loss(const DnlOutputs& sim, const ObservationSet& obs,
                   const double w_eff[3]) {
  LossBreakdown b;
  double obs2_flow = 0, obs2_pt = 0, obs2_tt = 0;
  for (const auto& o : obs.flow) {
    double r = o.value - sim.link_flow[sim.li(o.link, o.interval)];
    b.sse_flow += r * r;
    obs2_flow += o.value * o.value;
  }
  for (const auto& o : obs.pt) {
    double r = o.value - sim.pt_counts[2 * o.stop_trip + (o.alight ? 1 : 0)];
    b.sse_pt += r * r;
    obs2_pt += o.value * o.value;
  }
  for (const auto& o : obs.tt) {
    double r = o.value_min - sim.link_tt_min[sim.li(o.link, o.interval)];
    b.sse_tt += r * r;
    obs2_tt += o.value_min * o.value_min;
  }
  b.total = w_eff[0] * b.sse_flow + w_eff[1] * b.sse_pt + w_eff[2] * b.sse_tt;
  b.nmse_flow = obs2_flow > 0 ? b.sse_flow / obs2_flow : 0;
  b.nmse_pt = obs2_pt > 0 ? b.sse_pt / obs2_pt : 0;
  b.nmse_tt = obs2_tt > 0 ? b.sse_tt / obs2_tt : 0;
  for (int i = 0; i < 3; ++i) b.w_eff[i] = w_eff[i];
  return b;
}

std::vector<double> dloss_dflow(const DnlOutputs& sim,
                                const ObservationSet& obs,
                                const double w_eff[3],
                                const std::vector<double>& dt_dx,
                                int num_paths, int T) {
  // dL/dx_c including the travel-time channel, then pulled back by DARs.
  std::vector<double> g_x(sim.link_flow.size(), 0.0);
  for (const auto& o : obs.flow) {
    size_t i = sim.li(o.link, o.interval);
    g_x[i] += -2.0 * w_eff[0] * (o.value - sim.link_flow[i]);
  }
  for (const auto& o : obs.tt) {
    size_t i = sim.li(o.link, o.interval);
    double g_t = -2.0 * w_eff[2] * (o.value_min - sim.link_tt_min[i]);
    g_x[i] += dt_dx[i] * g_t;
  }
  std::vector<double> g_pt(sim.pt_counts.size(), 0.0);
  for (const auto& o : obs.pt) {
    size_t i = 2 * o.stop_trip + (o.alight ? 1 : 0);
    g_pt[i] += -2.0 * w_eff[1] * (o.value - sim.pt_counts[i]);
  }

  std::vector<double> dLdf(static_cast<size_t>(num_paths) * T, 0.0);
  auto pull = [&dLdf, T](const DarMatrix& m, const std::vector<double>& g) {
    for (int c = 0; c < m.num_cols(); ++c) {
      double s = 0;
      for (const auto& [row, v] : m.cols[c]) s += v * g[row];
      dLdf[static_cast<size_t>(m.col_path[c]) * T + m.col_dep[c]] += s;
    }
  };
  pull(sim.dar_car, g_x);
  pull(sim.dar_pnr_car, g_x);
  pull(sim.dar_pt, g_pt);
  pull(sim.dar_pnr_pt, g_pt);
  return dLdf;
}

std::vector<double> dflow_dtheta(const MultiModalNetwork& net,
                                 const OdChoiceLayout& layout,
                                 const DemandTensor& q,
                                 const std::vector<double>& costs,
                                 const std::vector<PathCostInputs>& inputs,
                                 const ParamVector& params,
                                 const ScaleConfig& scales, int T) {
  const size_t P = net.paths.size();
  const size_t np = params.size();
  std::vector<double> out(P * T * np, 0.0);
  for (size_t od = 0; od < net.od_pairs.size(); ++od) {
    const auto& nests = layout.per_od[od];
    if (nests.empty()) continue;
    auto block = layout.block_paths(static_cast<int>(od));
    const size_t n = block.size();
    for (int t = 0; t < T; ++t) {
      ChoiceInstance inst;
      for (const auto& nest : nests) {
        ChoiceInstance::Nest cn;
        cn.g = nest.g;
        for (int pi : nest.paths) cn.costs.push_back(costs[pi * T + t]);
        inst.nests.push_back(std::move(cn));
      }
      auto probs = nested_probabilities(inst, scales);
      auto flows = path_flows(q.at(static_cast<int>(od), t), probs);
      auto dfdc = dflow_dcost(probs, flows, scales);
      // rows of dc/dtheta for each block member
      std::vector<std::vector<std::pair<int, double>>> dcdt(n);
      for (size_t j = 0; j < n; ++j)
        dcdt[j] = dcost_dparams(net.paths[block[j]].mode,
                                inputs[block[j] * T + t], params);
      for (size_t i = 0; i < n; ++i) {
        double* row = &out[(static_cast<size_t>(block[i]) * T + t) * np];
        for (size_t j = 0; j < n; ++j) {
          double d = dfdc[i][j];
          if (d == 0) continue;
          for (const auto& [col, v] : dcdt[j]) row[col] += d * v;
        }
      }
    }
  }
  return out;
}

Gradients backward(const MultiModalNetwork& net, const OdChoiceLayout& layout,
                   const SolveResult& forward, const DemandTensor& q,
                   const ParamVector& params, const ScaleConfig& scales,
                   const ObservationSet& obs, const double w_eff[3],
                   const LoadingConfig& loading) {
  const int T = q.num_intervals;
  auto dt_dx = travel_time_derivative(forward.outputs, loading);
  auto dLdf = dloss_dflow(forward.outputs, obs, w_eff,
                          dt_dx, static_cast<int>(net.paths.size()), T);

  Gradients g;
  g.dq = DemandTensor(q.num_od, T);
  g.dtheta.assign(params.size(), 0.0);

  for (size_t od = 0; od < net.od_pairs.size(); ++od) {
    const auto& nests = layout.per_od[od];
    if (nests.empty()) continue;
    auto block = layout.block_paths(static_cast<int>(od));
    const size_t n = block.size();
    for (int t = 0; t < T; ++t) {
      ChoiceInstance inst;
      for (const auto& nest : nests) {
        ChoiceInstance::Nest cn;
        cn.g = nest.g;
        for (int pi : nest.paths)
          cn.costs.push_back(forward.state.costs[pi * T + t]);
        inst.nests.push_back(std::move(cn));
      }
      auto probs = nested_probabilities(inst, scales);
      auto joint = dflow_ddemand(probs);
      double dq = 0;
      for (size_t i = 0; i < n; ++i)
        dq += joint[i] * dLdf[static_cast<size_t>(block[i]) * T + t];
      g.dq.at(static_cast<int>(od), t) = dq;

      auto flows = path_flows(q.at(static_cast<int>(od), t), probs);
      auto dfdc = dflow_dcost(probs, flows, scales);
      // gc = (df/dc)^T dL/df restricted to the block
      std::vector<double> gc(n, 0.0);
      for (size_t i = 0; i < n; ++i) {
        double gi = dLdf[static_cast<size_t>(block[i]) * T + t];
        if (gi == 0) continue;
        for (size_t j = 0; j < n; ++j) gc[j] += dfdc[i][j] * gi;
      }
      for (size_t j = 0; j < n; ++j) {
        if (gc[j] == 0) continue;
        auto row = dcost_dparams(net.paths[block[j]].mode,
                                 forward.state.cost_inputs[block[j] * T + t],
                                 params);
        for (const auto& [col, v] : row) g.dtheta[col] += gc[j] * v;
      }
    }
  }
  return g;
}

uint64_t hash_doubles(const std::vector<double>& v) {
  uint64_t h = 1469598103934665603ull;
  for (double d : v) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  }
  return h;
}

EstimateResult estimate(const MultiModalNetwork& net, const DemandTensor& q0,
                        const ParamVector& theta0, const ObservationSet& obs,
                        const EstimationConfig& cfg) {
  for (double d : q0.v)
    if (d < 0) throw ContractError("negative initial demand");
  double w_eff[3];
  resolve_weights(obs, cfg, w_eff);

  auto layout = OdChoiceLayout::build(net);
  const int T = q0.num_intervals;

  EstimateResult res;
  res.q = q0;
  res.theta = theta0;

  DemandTensor q = q0;
  ParamVector theta = theta0;
  auto free_idx = theta.free_indices();

  // optimizer state
  std::vector<double> mq(q.v.size(), 0.0), vq(q.v.size(), 0.0);
  std::vector<double> mt(theta.size(), 0.0), vt(theta.size(), 0.0);
  const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
  double lr_q = cfg.lr_q, lr_t = cfg.lr_theta;

  double best = std::numeric_limits<double>::infinity();
  double initial = 0;
  int diverge_run = 0;
  PathFlowVector warm;

  for (int it = 0; it < std::max(cfg.iterations, 1); ++it) {
    EquilibriumConfig ecfg = cfg.equilibrium;
    SolveResult fwd;
    if (cfg.warm_start && it > 0) {
      fwd = solve_from(net, q, theta, ecfg, warm);
    } else {
      fwd = solve(net, q, theta, ecfg);
    }
    warm = fwd.state.flows;
    auto lb = loss(fwd.outputs, obs, w_eff);

    res.trace.rows.push_back({it, lb.total, lb.nmse_flow, lb.nmse_pt,
                              lb.nmse_tt, hash_doubles(q.v)});
    res.trace.theta_snapshots.push_back(theta.values());
    if (it == 0) initial = lb.total;
    if (lb.total < best) {
      best = lb.total;
      res.q = q;
      res.theta = theta;
      res.best_forward = fwd;
      res.best_loss = lb;
      res.best_iteration = it;
    }
    if (lb.total > cfg.divergence_factor * initial && it > 0) {
      if (++diverge_run >= cfg.divergence_run) {
        res.aborted_diverging = true;
        return res;
      }
    } else {
      diverge_run = 0;
    }
    if (cfg.iterations == 0 || it == cfg.iterations - 1) break;

    auto g = backward(net, layout, fwd, q, theta, ecfg.scales, obs, w_eff,
                      ecfg.loading);

    if (cfg.optimizer == EstimationConfig::Optimizer::Adam) {
      double corr1 = 1.0 - std::pow(b1, it + 1);
      double corr2 = 1.0 - std::pow(b2, it + 1);
      for (size_t i = 0; i < q.v.size(); ++i) {
        mq[i] = b1 * mq[i] + (1 - b1) * g.dq.v[i];
        vq[i] = b2 * vq[i] + (1 - b2) * g.dq.v[i] * g.dq.v[i];
        q.v[i] -= lr_q * (mq[i] / corr1) /
                  (std::sqrt(vq[i] / corr2) + adam_eps);
      }
      for (int j : free_idx) {
        double gj = g.dtheta[j];
        mt[j] = b1 * mt[j] + (1 - b1) * gj;
        vt[j] = b2 * vt[j] + (1 - b2) * gj * gj;
        theta.at(j).value -=
            lr_t * (mt[j] / corr1) / (std::sqrt(vt[j] / corr2) + adam_eps);
      }
    } else {
      for (size_t i = 0; i < q.v.size(); ++i) {
        mq[i] = cfg.momentum * mq[i] - lr_q * g.dq.v[i];
        q.v[i] += mq[i];
      }
      for (int j : free_idx) {
        mt[j] = cfg.momentum * mt[j] - lr_t * g.dtheta[j];
        theta.at(j).value += mt[j];
      }
    }
    for (double& d : q.v) {
      d = std::max(0.0, d);
      if (cfg.q_upper) d = std::min(d, *cfg.q_upper);
    }
    lr_q *= cfg.lr_decay;
    lr_t *= cfg.lr_decay;
  }
  return res;
}

std::vector<FitComponent> goodness_of_fit(const DnlOutputs& sim,
                                          const ObservationSet& obs) {
  auto component = [](const std::string& name, const std::vector<double>& o,
                      const std::vector<double>& s) {
    FitComponent f;
    f.name = name;
    f.n = static_cast<int>(o.size());
    if (o.empty()) {
      f.undefined = true;
      return f;
    }
    double mean = 0;
    for (double v : o) mean += v;
    mean /= o.size();
    double sse = 0, sst = 0;
    for (size_t i = 0; i < o.size(); ++i) {
      sse += (o[i] - s[i]) * (o[i] - s[i]);
      sst += (o[i] - mean) * (o[i] - mean);
    }
    f.sse = sse;
    if (sst <= 0) {
      f.undefined = true;
    } else {
      f.r2 = 1.0 - sse / sst;
    }
    return f;
  };
  std::vector<double> of, sf, ot, st, op, sp;
  for (const auto& o : obs.flow) {
    of.push_back(o.value);
    sf.push_back(sim.link_flow[sim.li(o.link, o.interval)]);
  }
  for (const auto& o : obs.pt) {
    op.push_back(o.value);
    sp.push_back(sim.pt_counts[2 * o.stop_trip + (o.alight ? 1 : 0)]);
  }
  for (const auto& o : obs.tt) {
    ot.push_back(o.value_min);
    st.push_back(sim.link_tt_min[sim.li(o.link, o.interval)]);
  }
  return {component("link_flow", of, sf), component("board_alight", op, sp),
          component("travel_time", ot, st)};
}

void write_trace(const EstimationTrace& trace, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : trace.rows)
    rows.push_back({std::to_string(r.iteration), io::format_double(r.total),
                    io::format_double(r.nmse_flow),
                    io::format_double(r.nmse_pt),
                    io::format_double(r.nmse_tt),
                    std::to_string(r.demand_hash)});
  io::write_csv(path,
                {"iteration", "total", "nmse_flow", "nmse_pt", "nmse_tt",
                 "demand_hash"},
                rows);
}

void write_fit_report(const std::vector<FitComponent>& fit,
                      const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& f : fit)
    rows.push_back({f.name, f.undefined ? "undefined" : io::format_double(f.r2),
                    io::format_double(f.sse), std::to_string(f.n)});
  io::write_csv(path, {"component", "r2", "sse", "n"}, rows);
}

}  // namespace mmcal
