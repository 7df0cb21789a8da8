#include "mmcal/stats.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mmcal/io.hpp"

namespace mmcal {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

// Acklam's rational approximation, then one Halley refinement.
double inv_normal_acklam(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double q, r, x;
  if (p < plow) {
    q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    q = p - 0.5;
    r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
          c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  return x;
}

}  // namespace

double normal_quantile(double u) {
  if (!(u > 0.0 && u < 1.0))
    throw ContractError("normal quantile needs u in (0,1)");
  double x = inv_normal_acklam(u);
  // Halley refinement against the full-precision CDF.
  for (int it = 0; it < 2; ++it) {
    double e = normal_cdf(x) - u;
    double pdf = std::exp(-0.5 * x * x) / std::sqrt(2 * M_PI);
    double un = e / pdf;
    x -= un / (1 + x * un / 2);
  }
  return x;
}

OutputJacobians output_jacobian(const MultiModalNetwork& net,
                                const SolveResult& forward,
                                const DemandTensor& q,
                                const ParamVector& params,
                                const ScaleConfig& scales,
                                const LoadingConfig& loading,
                                const ObservationSet& obs) {
  OutputJacobians J;
  J.free_idx = params.free_indices();
  J.p = static_cast<int>(J.free_idx.size());
  if (J.p == 0) throw ContractError("no free parameters to test");
  for (int i : J.free_idx) J.names.push_back(params.at(i).name);

  const int T = q.num_intervals;
  auto layout = OdChoiceLayout::build(net);
  auto X = dflow_dtheta(net, layout, q, forward.state.costs,
                        forward.state.cost_inputs, params, scales, T);
  const size_t np = params.size();
  const auto& out = forward.outputs;

  // df/dtheta pushed through the DAR maps onto every link-time and
  // stop-trip coordinate.
  std::vector<double> Ax(out.link_flow.size() * J.p, 0.0);
  std::vector<double> Apt(out.pt_counts.size() * J.p, 0.0);
  auto push = [&](const DarMatrix& m, std::vector<double>& A) {
    for (int c = 0; c < m.num_cols(); ++c) {
      const double* xrow =
          &X[(static_cast<size_t>(m.col_path[c]) * T + m.col_dep[c]) * np];
      for (const auto& [row, v] : m.cols[c]) {
        double* arow = &A[static_cast<size_t>(row) * J.p];
        for (int j = 0; j < J.p; ++j)
          arow[j] += v * xrow[J.free_idx[j]];
      }
    }
  };
  push(out.dar_car, Ax);
  push(out.dar_pnr_car, Ax);
  push(out.dar_pt, Apt);
  push(out.dar_pnr_pt, Apt);

  auto dtdx = travel_time_derivative(out, loading);

  J.n_flow = static_cast<int>(obs.flow.size());
  J.flow.resize(static_cast<size_t>(J.n_flow) * J.p);
  for (size_t i = 0; i < obs.flow.size(); ++i) {
    size_t row = out.li(obs.flow[i].link, obs.flow[i].interval);
    std::copy_n(&Ax[row * J.p], J.p, &J.flow[i * J.p]);
  }
  J.n_tt = static_cast<int>(obs.tt.size());
  J.tt.resize(static_cast<size_t>(J.n_tt) * J.p);
  for (size_t i = 0; i < obs.tt.size(); ++i) {
    size_t row = out.li(obs.tt[i].link, obs.tt[i].interval);
    for (int j = 0; j < J.p; ++j)
      J.tt[i * J.p + j] = dtdx[row] * Ax[row * J.p + j];
  }
  J.n_pt = static_cast<int>(obs.pt.size());
  J.pt.resize(static_cast<size_t>(J.n_pt) * J.p);
  for (size_t i = 0; i < obs.pt.size(); ++i) {
    size_t row = 2 * obs.pt[i].stop_trip + (obs.pt[i].alight ? 1 : 0);
    std::copy_n(&Apt[row * J.p], J.p, &J.pt[i * J.p]);
  }
  return J;
}

WaldReport wald_test(const std::vector<double>& J_rowmajor, int n, int p,
                     double sse, const std::vector<std::string>& names,
                     const std::vector<double>& estimates,
                     const std::vector<double>& null_values, double alpha) {
  if (n <= p) throw ContractError("n must exceed the parameter count");
  if (static_cast<int>(J_rowmajor.size()) != n * p)
    throw ContractError("Jacobian shape mismatch");

  WaldReport rep;
  rep.n = n;
  rep.p = p;
  rep.sigma2 = sse / (n - p);

  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> J(J_rowmajor.data(), n, p);
  Eigen::MatrixXd JtJ = J.transpose() * J;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      JtJ, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  double smax = sv.size() ? sv(0) : 0.0;
  double smin = sv.size() ? sv(sv.size() - 1) : 0.0;
  const double cutoff = 1e-10;
  rep.condition = smin > 0 ? smax / smin
                           : std::numeric_limits<double>::infinity();
  rep.pseudo_inverse = !(smin > cutoff * smax);
  Eigen::VectorXd inv_sv(sv.size());
  for (int i = 0; i < sv.size(); ++i)
    inv_sv(i) = sv(i) > cutoff * smax ? 1.0 / sv(i) : 0.0;
  Eigen::MatrixXd cov = svd.matrixV() * inv_sv.asDiagonal() *
                        svd.matrixU().transpose() * rep.sigma2;

  double zcrit = normal_quantile(1.0 - alpha / 2.0);
  for (int j = 0; j < p; ++j) {
    WaldRow row;
    row.name = names[j];
    row.estimate = estimates[j];
    row.null_value = null_values[j];
    row.zero_column = J.col(j).lpNorm<1>() == 0.0;
    double var = std::max(cov(j, j), 0.0);
    row.se = row.zero_column ? std::numeric_limits<double>::infinity()
                             : std::sqrt(var);
    double diff = row.estimate - row.null_value;
    if (std::isinf(row.se)) {
      row.z = 0;
      row.p_value = 1;
    } else if (row.se == 0) {
      row.z = diff == 0 ? 0 : std::copysign(
                                  std::numeric_limits<double>::infinity(),
                                  diff);
      row.p_value = diff == 0 ? 1 : 0;
    } else {
      row.z = diff / row.se;
      row.p_value = std::erfc(std::abs(row.z) / std::sqrt(2.0));
    }
    if (std::isinf(row.se)) {
      row.ci_lo = -std::numeric_limits<double>::infinity();
      row.ci_hi = std::numeric_limits<double>::infinity();
    } else {
      row.ci_lo = row.estimate - zcrit * row.se;
      row.ci_hi = row.estimate + zcrit * row.se;
    }
    row.significant = row.p_value < alpha;
    rep.rows.push_back(row);
  }
  return rep;
}

CombinedTests test_all_components(const MultiModalNetwork& net,
                                  const SolveResult& forward,
                                  const DemandTensor& q,
                                  const ParamVector& params,
                                  const ScaleConfig& scales,
                                  const LoadingConfig& loading,
                                  const ObservationSet& obs, double alpha) {
  if (obs.flow.empty() && obs.pt.empty() && obs.tt.empty())
    throw ContractError("no observations to test against");
  auto J = output_jacobian(net, forward, q, params, scales, loading, obs);

  std::vector<double> est, null0;
  for (int i : J.free_idx) {
    est.push_back(params.at(i).value);
    null0.push_back(0.0);
  }

  const auto& out = forward.outputs;
  double sse_flow = 0, sse_pt = 0, sse_tt = 0;
  for (const auto& o : obs.flow) {
    double r = o.value - out.link_flow[out.li(o.link, o.interval)];
    sse_flow += r * r;
  }
  for (const auto& o : obs.pt) {
    double r = o.value - out.pt_counts[2 * o.stop_trip + (o.alight ? 1 : 0)];
    sse_pt += r * r;
  }
  for (const auto& o : obs.tt) {
    double r = o.value_min - out.link_tt_min[out.li(o.link, o.interval)];
    sse_tt += r * r;
  }

  CombinedTests combined;
  combined.names = J.names;
  combined.significant.assign(J.p, 0);
  struct Comp {
    const char* name;
    const std::vector<double>* mat;
    int n;
    double sse;
  };
  for (const auto& comp :
       {Comp{"link_flow", &J.flow, J.n_flow, sse_flow},
        Comp{"board_alight", &J.pt, J.n_pt, sse_pt},
        Comp{"travel_time", &J.tt, J.n_tt, sse_tt}}) {
    WaldReport rep;
    rep.component = comp.name;
    if (comp.n <= J.p) {
      rep.skipped = true;
      rep.n = comp.n;
      rep.p = J.p;
    } else {
      rep = wald_test(*comp.mat, comp.n, J.p, comp.sse, J.names, est, null0,
                      alpha);
      rep.component = comp.name;
      for (int j = 0; j < J.p; ++j)
        if (rep.rows[j].significant) combined.significant[j] = 1;
    }
    combined.reports.push_back(std::move(rep));
  }
  return combined;
}

SelectionResult select_variables(const MultiModalNetwork& net,
                                 const DemandTensor& q0,
                                 const ParamVector& theta0,
                                 const ObservationSet& obs, double alpha,
                                 int max_rounds,
                                 const EstimationConfig& est_cfg) {
  if (max_rounds < 1) throw ConfigError("selection needs at least one round");
  SelectionResult sel;
  DemandTensor q = q0;
  ParamVector theta = theta0;
  for (int k = 1; k <= max_rounds; ++k) {
    auto res = estimate(net, q, theta, obs, est_cfg);
    auto tests = test_all_components(
        net, res.best_forward, res.q, res.theta, est_cfg.equilibrium.scales,
        est_cfg.equilibrium.loading, obs, alpha);
    sel.theta = res.theta;
    sel.q = res.q;
    sel.tests = tests;
    sel.rounds = k;
    std::vector<std::string> drop;
    for (size_t j = 0; j < tests.names.size(); ++j)
      if (!tests.significant[j]) drop.push_back(tests.names[j]);
    if (drop.empty()) {
      sel.all_significant = true;
      return sel;
    }
    if (drop.size() == tests.names.size())
      throw ContractError("all parameters tested non-significant");
    if (k == max_rounds) return sel;
    sel.history.push_back({k, drop});
    for (const auto& name : drop) sel.theta.remove(name);
    theta = sel.theta;
    q = sel.q;
  }
  return sel;
}

void write_wald_report(const std::vector<WaldReport>& reports,
                       const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  auto d = io::format_double;
  for (const auto& rep : reports) {
    if (rep.skipped) continue;
    for (const auto& r : rep.rows)
      rows.push_back({r.name, d(r.estimate), d(r.se), d(r.z), d(r.p_value),
                      d(r.ci_lo), d(r.ci_hi), r.significant ? "1" : "0",
                      rep.component});
  }
  io::write_csv(path,
                {"parameter", "estimate", "se", "z", "p", "ci_lo", "ci_hi",
                 "significant", "component"},
                rows);
}

void write_selection_history(const std::vector<SelectionRound>& history,
                             const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& h : history)
    for (const auto& name : h.removed)
      rows.push_back({std::to_string(h.iteration), name});
  io::write_csv(path, {"round", "removed_parameter"}, rows);
}

}  // namespace mmcal
