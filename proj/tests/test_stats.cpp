#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mmcal/stats.hpp"
#include "test_support.hpp"

using namespace mmcal;
using mmtest::NetBuilder;

namespace {

// Same fixture as the estimation suite: car, bus and park-and-ride paths.
MultiModalNetwork stats_net() {
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
  int line = b.line("B", false, 60, {vs1, vs2, vs3}, deps, {}, {l1, l2});
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

ParamVector simplified_truth() {
  ParamVector p = ParamVector::simplified_beta_model();
  p.set("beta_1_car", 1.0);
  p.set("beta_1_bus", 1.5);
  p.set("beta_2", 2.0);
  p.set("beta_3_bus", 2.0);
  p.set("beta_4", 2.0);
  // metro entries stay zero; the fixture has no metro service
  return p;
}

EstimationConfig small_cfg() {
  EstimationConfig cfg;
  cfg.iterations = 8;
  cfg.lr_q = 1.0;
  cfg.lr_theta = 0.01;
  cfg.equilibrium.loading.horizon_sec = 3600;
  cfg.equilibrium.max_iterations = 50;
  cfg.equilibrium.convergence_eps = 1e-4;
  for (auto& th : cfg.equilibrium.scales.theta_top) th = 10.0;
  for (auto& th : cfg.equilibrium.scales.theta_sub) th = 10.0;
  return cfg;
}

ObservationSet all_obs(const MultiModalNetwork& net, const DnlOutputs& out) {
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

}  // namespace

TEST_CASE("normal quantile inverts the CDF") {
  for (double u : {1e-9, 1e-4, 0.01, 0.2, 0.5, 0.7, 0.975, 0.9999, 1 - 1e-9}) {
    double x = normal_quantile(u);
    CHECK(normal_cdf(x) == doctest::Approx(u).epsilon(1e-12));
  }
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).scale(1).epsilon(1e-14));
  CHECK_THROWS_AS(normal_quantile(0.0), ContractError);
}

TEST_CASE("wald_test matches a hand-computed OLS fit to 1e-10") {
  // y =. X theta + e with p = 3 and a fixed error vector; the oracle is the
  // closed-form OLS computation done here in long double with an explicit
  // 3x3 inverse.
  const int n = 12, p = 3;
  std::mt19937_64 rng(2024);
  std::vector<double> X(n * p), y(n);
  std::vector<double> theta_true = {1.5, -2.0, 0.7};
  std::vector<double> err = {0.3,  -0.2, 0.1, 0.4,  -0.5, 0.2,
                             -0.1, 0.3,  0.2, -0.3, 0.1,  -0.25};
  for (int i = 0; i < n; ++i) {
    X[i * p + 0] = 1.0;
    X[i * p + 1] = mmtest::urand(rng, -2, 2);
    X[i * p + 2] = mmtest::urand(rng, 0, 5);
    y[i] = err[i];
    for (int j = 0; j < p; ++j) y[i] += X[i * p + j] * theta_true[j];
  }
  // normal equations in long double
  long double A[3][3] = {}, b3[3] = {};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) {
      for (int k = 0; k < p; ++k) A[j][k] += (long double)X[i * p + j] * X[i * p + k];
      b3[j] += (long double)X[i * p + j] * y[i];
    }
  auto det3 = [&](long double M[3][3]) {
    return M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1]) -
           M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0]) +
           M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0]);
  };
  long double det = det3(A);
  long double inv[3][3];
  inv[0][0] = (A[1][1] * A[2][2] - A[1][2] * A[2][1]) / det;
  inv[0][1] = (A[0][2] * A[2][1] - A[0][1] * A[2][2]) / det;
  inv[0][2] = (A[0][1] * A[1][2] - A[0][2] * A[1][1]) / det;
  inv[1][0] = (A[1][2] * A[2][0] - A[1][0] * A[2][2]) / det;
  inv[1][1] = (A[0][0] * A[2][2] - A[0][2] * A[2][0]) / det;
  inv[1][2] = (A[0][2] * A[1][0] - A[0][0] * A[1][2]) / det;
  inv[2][0] = (A[1][0] * A[2][1] - A[1][1] * A[2][0]) / det;
  inv[2][1] = (A[0][1] * A[2][0] - A[0][0] * A[2][1]) / det;
  inv[2][2] = (A[0][0] * A[1][1] - A[0][1] * A[1][0]) / det;
  long double theta_hat[3] = {};
  for (int j = 0; j < p; ++j)
    for (int k = 0; k < p; ++k) theta_hat[j] += inv[j][k] * b3[k];
  long double sse = 0;
  for (int i = 0; i < n; ++i) {
    long double r = y[i];
    for (int j = 0; j < p; ++j) r -= X[i * p + j] * theta_hat[j];
    sse += r * r;
  }
  long double sigma2 = sse / (n - p);

  std::vector<std::string> names = {"c0", "c1", "c2"};
  std::vector<double> est = {(double)theta_hat[0], (double)theta_hat[1],
                             (double)theta_hat[2]};
  std::vector<double> null0 = {0, 0, 0};
  auto rep = wald_test(X, n, p, (double)sse, names, est, null0, 0.05);
  CHECK(!rep.pseudo_inverse);
  for (int j = 0; j < p; ++j) {
    long double se = sqrtl(sigma2 * inv[j][j]);
    long double z = theta_hat[j] / se;
    long double pval = erfcl(fabsl(z) / sqrtl(2.0L));
    CHECK(mmtest::rel_err(rep.rows[j].se, (double)se) < 1e-10);
    CHECK(mmtest::rel_err(rep.rows[j].z, (double)z) < 1e-10);
    CHECK(mmtest::rel_err(rep.rows[j].p_value, (double)pval, 1e-300) < 1e-10);
    double half = rep.rows[j].ci_hi - rep.rows[j].estimate;
    CHECK(half ==
          doctest::Approx(normal_quantile(0.975) * rep.rows[j].se)
              .epsilon(1e-12));
    CHECK((rep.rows[j].significant == (rep.rows[j].p_value < 0.05)));
  }
}

TEST_CASE("wald_test: stated trivial cases") {
  // theta_hat equal to the null gives z = 0, p = 1.
  std::vector<double> J(8 * 1, 1.0);
  auto rep = wald_test(J, 8, 1, 3.0, {"a"}, {0.7}, {0.7}, 0.05);
  CHECK(rep.rows[0].z == 0.0);
  CHECK(rep.rows[0].p_value == 1.0);
  CHECK(!rep.rows[0].significant);

  // Identity J padded with zero rows, sigma2 forced to 1: unit SEs.
  const int p = 3, n = 7;
  std::vector<double> I(n * p, 0.0);
  for (int j = 0; j < p; ++j) I[j * p + j] = 1.0;
  auto rep2 = wald_test(I, n, p, double(n - p), {"a", "b", "c"},
                        {1.0, -2.0, 0.5}, {0, 0, 0}, 0.05);
  CHECK(rep2.sigma2 == doctest::Approx(1.0));
  for (int j = 0; j < p; ++j)
    CHECK(rep2.rows[j].se == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(
      wald_test(std::vector<double>(4, 1.0), 2, 2, 1.0, {"a", "b"},
                {0.0, 0.0}, {0, 0}, 0.05),
      ContractError);
}

TEST_CASE("wald_test: zero column flags and never claims significance") {
  const int n = 10, p = 2;
  std::vector<double> J(n * p, 0.0);
  for (int i = 0; i < n; ++i) J[i * p] = 1.0 + 0.1 * i;
  auto rep = wald_test(J, n, p, 4.0, {"live", "dead"}, {2.0, 1.5}, {0, 0},
                       0.05);
  CHECK(!rep.rows[0].zero_column);
  CHECK(rep.rows[1].zero_column);
  CHECK(std::isinf(rep.rows[1].se));
  CHECK(!rep.rows[1].significant);
  CHECK(rep.pseudo_inverse);  // the rank deficiency engaged the fallback
}

TEST_CASE("wald_test: scaling residuals and rows leaves z unchanged") {
  std::mt19937_64 rng(7);
  const int n = 15, p = 2;
  std::vector<double> J(n * p);
  for (auto& v : J) v = mmtest::urand(rng, -1, 3);
  double sse = 6.42;
  auto a = wald_test(J, n, p, sse, {"a", "b"}, {1.2, -0.4}, {0, 0}, 0.05);
  const double c = 37.5;
  std::vector<double> Jc = J;
  for (auto& v : Jc) v *= c;
  auto b = wald_test(Jc, n, p, sse * c * c, {"a", "b"}, {1.2, -0.4}, {0, 0},
                     0.05);
  for (int j = 0; j < p; ++j) {
    CHECK(a.rows[j].z == doctest::Approx(b.rows[j].z).epsilon(1e-11));
    CHECK(a.rows[j].p_value ==
          doctest::Approx(b.rows[j].p_value).epsilon(1e-10));
  }
}

TEST_CASE("pseudo-inverse engages exactly on rank deficiency") {
  const int n = 9, p = 2;
  std::vector<double> good(n * p), dup(n * p);
  std::mt19937_64 rng(3);
  for (int i = 0; i < n; ++i) {
    good[i * p] = mmtest::urand(rng, 1, 2);
    good[i * p + 1] = mmtest::urand(rng, -2, -1);
    dup[i * p] = good[i * p];
    dup[i * p + 1] = good[i * p] * 2.0;  // exact multiple
  }
  auto a = wald_test(good, n, p, 1.0, {"a", "b"}, {1, 1}, {0, 0}, 0.05);
  CHECK(!a.pseudo_inverse);
  auto b = wald_test(dup, n, p, 1.0, {"a", "b"}, {1, 1}, {0, 0}, 0.05);
  CHECK(b.pseudo_inverse);
  CHECK(std::isinf(b.condition));
}

TEST_CASE("output_jacobian columns match finite differences of observables") {
  auto net = stats_net();
  auto cfg = small_cfg();
  cfg.equilibrium.averaging = EquilibriumConfig::Averaging::FixedStep;
  cfg.equilibrium.fixed_step = 0.5;
  cfg.equilibrium.max_iterations = 300;
  cfg.equilibrium.convergence_eps = 1e-8;
  DemandTensor q(1, 2);
  q.at(0, 0) = 320;
  q.at(0, 1) = 210;
  ParamVector theta = simplified_truth();
  auto fwd = solve(net, q, theta, cfg.equilibrium);
  auto obs = all_obs(net, fwd.outputs);
  auto J = output_jacobian(net, fwd, q, theta, cfg.equilibrium.scales,
                           cfg.equilibrium.loading, obs);
  CHECK(J.p == 7);

  // Frozen-map finite difference: observables are DAR * flows(theta).
  auto layout = OdChoiceLayout::build(net);
  auto observable = [&](const ParamVector& th) {
    auto costs = evaluate_costs(net, fwd.state.cost_inputs, th, 2);
    auto f = assign(net, layout, q, costs, cfg.equilibrium.scales, 2);
    std::vector<double> x(fwd.outputs.link_flow.size(), 0.0);
    auto apply = [&](const DarMatrix& m) {
      for (int c = 0; c < m.num_cols(); ++c) {
        double fc = f.at(m.col_path[c], m.col_dep[c]);
        for (const auto& [row, v] : m.cols[c]) x[row] += v * fc;
      }
    };
    apply(fwd.outputs.dar_car);
    apply(fwd.outputs.dar_pnr_car);
    std::vector<double> vals;
    for (const auto& o : obs.flow)
      vals.push_back(x[fwd.outputs.li(o.link, o.interval)]);
    return vals;
  };
  const double h = 1e-5;
  for (int j = 0; j < J.p; ++j) {
    ParamVector up = theta, dn = theta;
    up.at(J.free_idx[j]).value += h;
    dn.at(J.free_idx[j]).value -= h;
    auto vu = observable(up);
    auto vd = observable(dn);
    for (int i = 0; i < J.n_flow; ++i) {
      double fd = (vu[i] - vd[i]) / (2 * h);
      CHECK(std::abs(J.flow[i * J.p + j] - fd) <=
            1e-3 * std::abs(fd) + 1e-6 * 500);
    }
  }
}

TEST_CASE("combined significance is the OR of the three components") {
  auto net = stats_net();
  auto cfg = small_cfg();
  DemandTensor q(1, 2);
  q.at(0, 0) = 300;
  q.at(0, 1) = 180;
  ParamVector theta = simplified_truth();
  auto fwd = solve(net, q, theta, cfg.equilibrium);
  auto obs = all_obs(net, fwd.outputs);
  // Perturb observations so residuals are nonzero.
  for (auto& o : obs.flow) o.value *= 1.03;
  for (auto& o : obs.tt) o.value_min *= 0.98;
  for (auto& o : obs.pt) o.value *= 1.05;
  auto tests = test_all_components(net, fwd, q, theta,
                                   cfg.equilibrium.scales,
                                   cfg.equilibrium.loading, obs, 0.05);
  REQUIRE(tests.reports.size() == 3);
  for (size_t j = 0; j < tests.names.size(); ++j) {
    bool any = false;
    for (const auto& rep : tests.reports)
      if (!rep.skipped && rep.rows[j].significant) any = true;
    CHECK((tests.significant[j] != 0) == any);
  }
}

TEST_CASE("small components are skipped with a diagnostic") {
  auto net = stats_net();
  auto cfg = small_cfg();
  DemandTensor q(1, 2);
  q.at(0, 0) = 280;
  q.at(0, 1) = 160;
  ParamVector theta = simplified_truth();
  auto fwd = solve(net, q, theta, cfg.equilibrium);
  auto obs = all_obs(net, fwd.outputs);
  obs.tt.resize(3);  // fewer travel time rows than parameters
  auto tests = test_all_components(net, fwd, q, theta,
                                   cfg.equilibrium.scales,
                                   cfg.equilibrium.loading, obs, 0.05);
  CHECK(tests.reports[2].skipped);
  CHECK(tests.reports[2].n == 3);
}

TEST_CASE("select_variables: early exit, budget cap, monotone history") {
  auto net = stats_net();
  auto cfg = small_cfg();
  cfg.iterations = 6;
  DemandTensor q_true(1, 2);
  q_true.at(0, 0) = 300;
  q_true.at(0, 1) = 200;
  ParamVector theta_true = simplified_truth();
  auto fwd = solve(net, q_true, theta_true, cfg.equilibrium);
  auto obs = all_obs(net, fwd.outputs);

  DemandTensor q0 = q_true;
  q0.at(0, 0) = 330;
  ParamVector theta0 = theta_true;
  theta0.set("beta_1_car", 1.08);
  // The fixture runs no metro service; those columns are structurally zero.
  theta0.at(theta0.find("beta_1_metro")).free_flag = false;
  theta0.at(theta0.find("beta_3_metro")).free_flag = false;

  // Every retained coefficient matters for these observables: with a
  // decent fit the first round keeps them all and exits early.
  cfg.iterations = 16;
  auto sel = select_variables(net, q0, theta0, obs, 0.1, 3, cfg);
  CHECK(sel.all_significant);
  CHECK(sel.rounds == 1);
  CHECK(sel.history.empty());

  // A budget of one round runs exactly one estimation regardless.
  auto sel1 = select_variables(net, q0, theta0, obs, 0.1, 1, cfg);
  CHECK(sel1.rounds == 1);
}
