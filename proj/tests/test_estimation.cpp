#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mmcal/estimation.hpp"
#include "test_support.hpp"

using namespace mmcal;
using mmtest::NetBuilder;

namespace {

// O --l1--> M(parking) --l2--> D with a bus line over both links, a car
// path, a bus path and a park-and-ride path.
MultiModalNetwork estimation_net() {
  NetBuilder b;
  int o = b.node("O", 0, 0, true);
  int m = b.node("M", 1, 0, false, true);
  int d = b.node("D", 2, 0, true);
  int l1 = b.link("l1", o, m, 0.6, 30, 700, 500);
  int l2 = b.link("l2", m, d, 0.6, 30, 700, 500);
  int ps1 = b.stop("ps1", StopKind::PhysicalBus);
  int ps2 = b.stop("ps2", StopKind::PhysicalBus);
  int ps3 = b.stop("ps3", StopKind::PhysicalBus);
  int vs1 = b.stop("vs1", StopKind::VirtualBus, ps1, l1, 0.3);
  int vs2 = b.stop("vs2", StopKind::VirtualBus, ps2, l2, 0.2);
  int vs3 = b.stop("vs3", StopKind::VirtualBus, ps3, l2, 0.55);
  std::vector<double> deps;
  for (int i = 0; i < 11; ++i) deps.push_back(60 + 300 * i);
  int line =
      b.line("B", false, 60, {vs1, vs2, vs3}, deps, {}, {l1, l2});
  int w1 = b.walk("w1", o, -1, -1, ps1, WalkCategory::OriginAccess, 0.03);
  int w2 = b.walk("w2", -1, ps3, d, -1, WalkCategory::OriginAccess, 0.03);
  int wp = b.walk("wp", m, -1, -1, ps2, WalkCategory::ParkingAccess, 0.02);
  int wb1 = b.walk("wb1", -1, ps1, -1, vs1, WalkCategory::BoardAlight, 0);
  int wb2 = b.walk("wb2", -1, ps2, -1, vs2, WalkCategory::BoardAlight, 0);
  int wb3 = b.walk("wb3", -1, ps3, -1, vs3, WalkCategory::BoardAlight, 0);
  b.net.zones.push_back({o, 20, 21, 6, 2});
  b.net.zones.push_back({d, 22, 18, 6, 2});
  int od = b.od(o, d);
  b.path("pc", od, SubMode::Car, 6, 0).legs = {NetBuilder::drive(l1),
                                               NetBuilder::drive(l2)};
  b.path("pb", od, SubMode::Bus, 0, 1.5).legs = {
      NetBuilder::walk_leg(w1), NetBuilder::walk_leg(wb1),
      NetBuilder::ride(line, vs1, vs3), NetBuilder::walk_leg(wb3, false),
      NetBuilder::walk_leg(w2)};
  b.path("pp", od, SubMode::CarBus, 2, 1.5).legs = {
      NetBuilder::drive(l1), NetBuilder::park(m), NetBuilder::walk_leg(wp),
      NetBuilder::walk_leg(wb2), NetBuilder::ride(line, vs2, vs3),
      NetBuilder::walk_leg(wb3, false), NetBuilder::walk_leg(w2)};
  return b.finalize();
}

ParamVector truth_params() {
  ParamVector p = ParamVector::full_model();
  p.set("beta_1_car", 1.0);
  p.set("beta_1_bus", 1.2);
  p.set("beta_2", 1.5);
  p.set("beta_3_bus", 1.5);
  p.set("beta_4", 1.5);
  p.set("alpha_bus", 2.0);
  p.set("alpha_car+bus", 1.0);
  p.set("gamma_1_bus", 0.3);
  p.set("gamma_2_car", 0.1);
  return p;
}

EstimationConfig base_cfg() {
  EstimationConfig cfg;
  cfg.equilibrium.loading.horizon_sec = 3600;
  cfg.equilibrium.averaging = EquilibriumConfig::Averaging::FixedStep;
  cfg.equilibrium.fixed_step = 0.5;
  cfg.equilibrium.max_iterations = 400;
  cfg.equilibrium.convergence_eps = 1e-9;
  for (auto& th : cfg.equilibrium.scales.theta_top) th = 10.0;
  for (auto& th : cfg.equilibrium.scales.theta_sub) th = 10.0;
  return cfg;
}

ObservationSet full_observations(const MultiModalNetwork& net,
                                 const DnlOutputs& out) {
  ObservationSet obs;
  for (int l = 0; l < out.num_links; ++l)
    for (int h = 0; h < out.num_intervals; ++h) {
      obs.flow.push_back({l, h, out.link_flow[out.li(l, h)]});
      obs.tt.push_back({l, h, out.link_tt_min[out.li(l, h)]});
    }
  for (int st = 0; st < out.num_stop_trips; ++st) {
    obs.pt.push_back({st, false, out.pt_counts[2 * st]});
    obs.pt.push_back({st, true, out.pt_counts[2 * st + 1]});
  }
  return obs;
}

// The frozen computational graph at a converged forward pass: flows from
// the nested logit against frozen cost inputs; observables through the DAR
// matrices and the diagonal travel-time derivative. Used as the
// finite-difference oracle.
struct FrozenGraph {
  const MultiModalNetwork* net;
  OdChoiceLayout layout;
  ScaleConfig scales;
  LoadingConfig loading;
  int T;
  DnlOutputs base;
  std::vector<PathCostInputs> inputs;
  std::vector<double> dtdx;

  FrozenGraph(const MultiModalNetwork& n, const SolveResult& fwd,
              const EquilibriumConfig& ecfg, int T_)
      : net(&n),
        layout(OdChoiceLayout::build(n)),
        scales(ecfg.scales),
        loading(ecfg.loading),
        T(T_),
        base(fwd.outputs),
        inputs(fwd.state.cost_inputs),
        dtdx(travel_time_derivative(fwd.outputs, ecfg.loading)) {}

  double eval(const DemandTensor& q, const ParamVector& theta,
              const ObservationSet& obs, const double w_eff[3]) const {
    auto costs = evaluate_costs(*net, inputs, theta, T);
    auto f = assign(*net, layout, q, costs, scales, T);
    std::vector<double> x(base.link_flow.size(), 0.0);
    std::vector<double> xpt(base.pt_counts.size(), 0.0);
    auto apply = [&](const DarMatrix& m, std::vector<double>& target) {
      for (int c = 0; c < m.num_cols(); ++c) {
        double fc = f.at(m.col_path[c], m.col_dep[c]);
        for (const auto& [row, v] : m.cols[c]) target[row] += v * fc;
      }
    };
    apply(base.dar_car, x);
    apply(base.dar_pnr_car, x);
    apply(base.dar_pt, xpt);
    apply(base.dar_pnr_pt, xpt);
    std::vector<double> t(base.link_tt_min);
    for (size_t i = 0; i < t.size(); ++i)
      t[i] += dtdx[i] * (x[i] - base.link_flow[i]);
    double total = 0;
    for (const auto& o : obs.flow) {
      double r = o.value - x[base.li(o.link, o.interval)];
      total += w_eff[0] * r * r;
    }
    for (const auto& o : obs.pt) {
      double r = o.value - xpt[2 * o.stop_trip + (o.alight ? 1 : 0)];
      total += w_eff[1] * r * r;
    }
    for (const auto& o : obs.tt) {
      double r = o.value_min - t[base.li(o.link, o.interval)];
      total += w_eff[2] * r * r;
    }
    return total;
  }
};

}  // namespace

TEST_CASE("loss: exact match, hand sum, masks, decomposition") {
  DnlOutputs sim;
  sim.num_links = 1;
  sim.num_intervals = 2;
  sim.num_stop_trips = 1;
  sim.link_flow = {10, 20};
  sim.link_tt_min = {1.0, 3.0};
  sim.pt_counts = {4, 5};

  ObservationSet obs;
  obs.flow.push_back({0, 0, 10});
  obs.tt.push_back({0, 0, 2.0});   // residual 1
  obs.tt.push_back({0, 1, 1.0});   // residual -2
  obs.pt.push_back({0, false, 4});

  double w_ones[3] = {1, 1, 1};
  auto b0 = loss(sim, obs, w_ones);
  CHECK(b0.sse_flow == 0.0);
  CHECK(b0.sse_pt == 0.0);
  CHECK(b0.sse_tt == doctest::Approx(5.0).epsilon(1e-15));

  double w_tt[3] = {0, 0, 1};
  CHECK(loss(sim, obs, w_tt).total == doctest::Approx(5.0).epsilon(1e-15));

  // Perturbing an unobserved entry leaves the loss unchanged.
  auto before = loss(sim, obs, w_ones).total;
  sim.link_flow[1] += 100.0;
  sim.pt_counts[1] += 50.0;
  CHECK(loss(sim, obs, w_ones).total == doctest::Approx(before).epsilon(1e-15));

  double w_mix[3] = {2.0, 0.5, 3.0};
  auto b = loss(sim, obs, w_mix);
  CHECK(b.total == doctest::Approx(2.0 * b.sse_flow + 0.5 * b.sse_pt +
                                   3.0 * b.sse_tt)
                       .epsilon(1e-15));
}

TEST_CASE("resolve_weights: empty component with weight is an error") {
  ObservationSet obs;
  obs.flow.push_back({0, 0, 1.0});
  EstimationConfig cfg;
  double w[3];
  CHECK_THROWS_AS(resolve_weights(obs, cfg, w), ConfigError);
  cfg.w2 = 0;
  cfg.w3 = 0;
  resolve_weights(obs, cfg, w);
  CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-12));  // mean square = 1
  CHECK(w[1] == 0.0);
}

TEST_CASE("scalar chain: dL/dq equals -2 w (obs - x) on a unit DAR") {
  NetBuilder b;
  int o = b.node("O", 0, 0, true);
  int d = b.node("D", 1, 0, true);
  int l1 = b.link("l1", o, d, 0.6);
  b.net.zones.push_back({o, 20, 20, 0, 0});
  b.net.zones.push_back({d, 20, 20, 0, 0});
  int od = b.od(o, d);
  b.path("p1", od, SubMode::Car).legs = {NetBuilder::drive(l1)};
  auto net = b.finalize();

  EquilibriumConfig ecfg;
  ecfg.loading.horizon_sec = 1800;
  DemandTensor q(1, 1);
  q.at(0, 0) = 50;
  ParamVector theta = truth_params();
  auto fwd = solve(net, q, theta, ecfg);

  ObservationSet obs;
  obs.flow.push_back({0, 0, 64.0});  // simulated x = 50
  double w_eff[3] = {1, 0, 0};
  auto layout = OdChoiceLayout::build(net);
  auto g = backward(net, layout, fwd, q, theta, ecfg.scales, obs, w_eff,
                    ecfg.loading);
  CHECK(g.dq.at(0, 0) == doctest::Approx(-2.0 * (64.0 - 50.0)).epsilon(1e-9));
}

TEST_CASE("zero residuals give zero gradients") {
  auto net = estimation_net();
  auto cfg = base_cfg();
  DemandTensor q(1, 2);
  q.at(0, 0) = 300;
  q.at(0, 1) = 200;
  ParamVector theta = truth_params();
  auto fwd = solve(net, q, theta, cfg.equilibrium);
  auto obs = full_observations(net, fwd.outputs);
  double w_eff[3];
  resolve_weights(obs, cfg, w_eff);
  auto layout = OdChoiceLayout::build(net);
  auto g = backward(net, layout, fwd, q, theta, cfg.equilibrium.scales, obs,
                    w_eff, cfg.equilibrium.loading);
  for (double v : g.dq.v) CHECK(std::abs(v) < 1e-9);
  for (double v : g.dtheta) CHECK(std::abs(v) < 1e-9);
}

namespace {

// Replaces the forward outputs with the frozen-map images of the assignment
// flows at the converged costs, so the gradient algebra is checked at an
// exactly self-consistent point of the frozen computational graph.
SolveResult consistent_point(const MultiModalNetwork& net,
                             const SolveResult& fwd, const DemandTensor& q,
                             const ParamVector& theta,
                             const EquilibriumConfig& ecfg, int T) {
  SolveResult out = fwd;
  auto layout = OdChoiceLayout::build(net);
  auto y = assign(net, layout, q, fwd.state.costs, ecfg.scales, T);
  auto dtdx = travel_time_derivative(fwd.outputs, ecfg.loading);
  std::vector<double> x(fwd.outputs.link_flow.size(), 0.0);
  std::vector<double> xpt(fwd.outputs.pt_counts.size(), 0.0);
  auto apply = [&](const DarMatrix& m, std::vector<double>& target) {
    for (int c = 0; c < m.num_cols(); ++c) {
      double fc = y.at(m.col_path[c], m.col_dep[c]);
      for (const auto& [row, v] : m.cols[c]) target[row] += v * fc;
    }
  };
  apply(fwd.outputs.dar_car, x);
  apply(fwd.outputs.dar_pnr_car, x);
  apply(fwd.outputs.dar_pt, xpt);
  apply(fwd.outputs.dar_pnr_pt, xpt);
  for (size_t i = 0; i < x.size(); ++i)
    out.outputs.link_tt_min[i] +=
        dtdx[i] * (x[i] - fwd.outputs.link_flow[i]);
  out.outputs.link_flow = x;
  out.outputs.pt_counts = xpt;
  out.state.flows = y;
  return out;
}

}  // namespace

TEST_CASE("gradients match the frozen-graph finite-difference oracle") {
  auto net = estimation_net();
  auto cfg = base_cfg();
  DemandTensor q(1, 2);
  q.at(0, 0) = 320;
  q.at(0, 1) = 210;
  ParamVector theta = truth_params();
  auto fwd0 = solve(net, q, theta, cfg.equilibrium);
  auto fwd = consistent_point(net, fwd0, q, theta, cfg.equilibrium, 2);

  // Observations from a different parameter point so residuals are nonzero.
  ParamVector theta_obs = theta;
  theta_obs.set("beta_1_car", 1.25);
  theta_obs.set("alpha_bus", 1.6);
  DemandTensor q_obs(1, 2);
  q_obs.at(0, 0) = 280;
  q_obs.at(0, 1) = 240;
  auto fwd_obs = solve(net, q_obs, theta_obs, cfg.equilibrium);
  auto obs = full_observations(net, fwd_obs.outputs);
  double w_eff[3];
  resolve_weights(obs, cfg, w_eff);

  auto layout = OdChoiceLayout::build(net);
  auto g = backward(net, layout, fwd, q, theta, cfg.equilibrium.scales, obs,
                    w_eff, cfg.equilibrium.loading);

  FrozenGraph oracle(net, fwd0, cfg.equilibrium, 2);
  oracle.base.link_tt_min = fwd.outputs.link_tt_min;
  oracle.base.link_flow = fwd.outputs.link_flow;
  const double hq = 1e-3;
  for (int t = 0; t < 2; ++t) {
    DemandTensor up = q, dn = q;
    up.at(0, t) += hq;
    dn.at(0, t) -= hq;
    double fd = (oracle.eval(up, theta, obs, w_eff) -
                 oracle.eval(dn, theta, obs, w_eff)) /
                (2 * hq);
    CHECK(mmtest::rel_err(g.dq.at(0, t), fd, 1e-6) < 1e-3);
  }
  const double ht = 1e-5;
  double gnorm = 0;
  for (double v : g.dtheta) gnorm = std::max(gnorm, std::abs(v));
  for (size_t j = 0; j < theta.size(); ++j) {
    ParamVector up = theta, dn = theta;
    up.at(j).value += ht;
    dn.at(j).value -= ht;
    double fd = (oracle.eval(q, up, obs, w_eff) -
                 oracle.eval(q, dn, obs, w_eff)) /
                (2 * ht);
    CHECK(std::abs(g.dtheta[j] - fd) <=
          1e-3 * std::abs(fd) + 1e-6 * std::max(1.0, gnorm));
  }
}

TEST_CASE("estimate: loss decreases, projection holds, trace reproducible") {
  auto net = estimation_net();
  auto cfg = base_cfg();
  cfg.iterations = 12;
  cfg.lr_q = 2.0;
  cfg.lr_theta = 0.02;
  cfg.equilibrium.max_iterations = 60;
  cfg.equilibrium.convergence_eps = 1e-5;

  DemandTensor q_true(1, 2);
  q_true.at(0, 0) = 300;
  q_true.at(0, 1) = 200;
  ParamVector theta_true = truth_params();
  auto fwd_true = solve(net, q_true, theta_true, cfg.equilibrium);
  auto obs = full_observations(net, fwd_true.outputs);

  DemandTensor q0(1, 2);
  q0.at(0, 0) = 430;
  q0.at(0, 1) = 120;
  ParamVector theta0 = theta_true;
  theta0.set("beta_1_car", 1.15);
  theta0.set("alpha_bus", 2.3);

  auto res = estimate(net, q0, theta0, obs, cfg);
  CHECK(!res.aborted_diverging);
  CHECK(res.best_loss.total < res.trace.rows.front().total);
  CHECK(res.best_loss.nmse_flow <= res.trace.rows.front().nmse_flow + 1e-12);
  for (double d : res.q.v) CHECK(d >= 0.0);

  auto res2 = estimate(net, q0, theta0, obs, cfg);
  REQUIRE(res.trace.rows.size() == res2.trace.rows.size());
  for (size_t i = 0; i < res.trace.rows.size(); ++i) {
    CHECK(res.trace.rows[i].total == res2.trace.rows[i].total);
    CHECK(res.trace.rows[i].demand_hash == res2.trace.rows[i].demand_hash);
  }

  // Starting at the truth: nothing to improve.
  auto at_truth = estimate(net, q_true, theta_true, obs, cfg);
  CHECK(at_truth.best_loss.total <= 1e-9);
  CHECK(at_truth.best_iteration == 0);
}

TEST_CASE("estimate: zero iterations reflects the initial point") {
  auto net = estimation_net();
  auto cfg = base_cfg();
  cfg.iterations = 0;
  cfg.equilibrium.max_iterations = 40;
  cfg.equilibrium.convergence_eps = 1e-5;
  DemandTensor q(1, 2);
  q.at(0, 0) = 250;
  q.at(0, 1) = 150;
  auto fwd = solve(net, q, truth_params(), cfg.equilibrium);
  auto obs = full_observations(net, fwd.outputs);
  DemandTensor q0 = q;
  q0.at(0, 0) = 300;
  auto res = estimate(net, q0, truth_params(), obs, cfg);
  CHECK(res.trace.rows.size() == 1);
  CHECK(res.q.at(0, 0) == 300);
}

TEST_CASE("estimate: diverging loss aborts with the flag") {
  auto net = estimation_net();
  auto cfg = base_cfg();
  cfg.iterations = 40;
  cfg.optimizer = EstimationConfig::Optimizer::Plain;
  cfg.lr_q = 1e5;
  cfg.lr_theta = 10.0;
  cfg.equilibrium.max_iterations = 25;
  cfg.equilibrium.convergence_eps = 1e-4;
  DemandTensor q(1, 2);
  q.at(0, 0) = 250;
  q.at(0, 1) = 150;
  auto fwd = solve(net, q, truth_params(), cfg.equilibrium);
  auto obs = full_observations(net, fwd.outputs);
  DemandTensor q0 = q;
  q0.at(0, 0) = 250.5;  // near-perfect start, so any blow-up is 10x the loss
  auto res = estimate(net, q0, truth_params(), obs, cfg);
  CHECK(res.aborted_diverging);
}

TEST_CASE("goodness of fit: limits and formula oracle") {
  DnlOutputs sim;
  sim.num_links = 1;
  sim.num_intervals = 4;
  sim.num_stop_trips = 0;
  sim.link_flow = {10, 20, 30, 40};
  sim.link_tt_min = {1, 1, 1, 1};

  ObservationSet obs;
  for (int h = 0; h < 4; ++h) obs.flow.push_back({0, h, sim.link_flow[h]});
  auto fit = goodness_of_fit(sim, obs);
  CHECK(fit[0].r2 == doctest::Approx(1.0).epsilon(1e-15));

  // Simulation equal to the observation mean scores zero.
  ObservationSet obs2;
  obs2.flow = {{0, 0, 5}, {0, 1, 35}, {0, 2, 20}, {0, 3, 40}};
  DnlOutputs simc = sim;
  simc.link_flow = {25, 25, 25, 25};
  auto fit2 = goodness_of_fit(simc, obs2);
  CHECK(fit2[0].r2 == doctest::Approx(0.0).epsilon(1e-15));

  // Long-double reference of the same formula.
  std::mt19937_64 rng(11);
  ObservationSet obs3;
  DnlOutputs sim3 = sim;
  for (int h = 0; h < 4; ++h) {
    obs3.flow.push_back({0, h, mmtest::urand(rng, 5, 50)});
    sim3.link_flow[h] = mmtest::urand(rng, 5, 50);
  }
  auto fit3 = goodness_of_fit(sim3, obs3);
  long double mean = 0;
  for (const auto& o : obs3.flow) mean += o.value;
  mean /= 4;
  long double sse = 0, sst = 0;
  for (int h = 0; h < 4; ++h) {
    sse += powl(obs3.flow[h].value - sim3.link_flow[h], 2);
    sst += powl(obs3.flow[h].value - mean, 2);
  }
  CHECK(fit3[0].r2 == doctest::Approx((double)(1 - sse / sst)).epsilon(1e-12));

  // Zero variance flags undefined instead of crashing.
  ObservationSet obs4;
  obs4.flow = {{0, 0, 7}, {0, 1, 7}};
  auto fit4 = goodness_of_fit(sim, obs4);
  CHECK(fit4[0].undefined);
}

TEST_CASE("observations round trip through the flat files") {
  auto net = estimation_net();
  auto cfg = base_cfg();
  DemandTensor q(1, 2);
  q.at(0, 0) = 260;
  q.at(0, 1) = 170;
  auto fwd = solve(net, q, truth_params(), cfg.equilibrium);
  auto obs = full_observations(net, fwd.outputs);
  std::string dir =
      std::filesystem::temp_directory_path() / "mmcal_obs_roundtrip";
  save_observations(obs, net, dir);
  auto again = load_observations(net, dir);
  REQUIRE(again.flow.size() == obs.flow.size());
  REQUIRE(again.tt.size() == obs.tt.size());
  REQUIRE(again.pt.size() == obs.pt.size());
  for (size_t i = 0; i < obs.flow.size(); ++i)
    CHECK(again.flow[i].value == doctest::Approx(obs.flow[i].value));
  for (size_t i = 0; i < obs.pt.size(); ++i) {
    CHECK(again.pt[i].stop_trip == obs.pt[i].stop_trip);
    CHECK(again.pt[i].alight == obs.pt[i].alight);
  }
}
