#include "mmcal/choice.hpp"

#include <algorithm>
#include <cmath>

namespace mmcal {

std::string param_name(ParamKind kind, SubMode alt) {
  switch (kind) {
    case ParamKind::Beta1Car: return "beta_1_car";
    case ParamKind::Beta1Bus: return "beta_1_bus";
    case ParamKind::Beta1Metro: return "beta_1_metro";
    case ParamKind::Beta2: return "beta_2";
    case ParamKind::Beta3Bus: return "beta_3_bus";
    case ParamKind::Beta3Metro: return "beta_3_metro";
    case ParamKind::Beta4: return "beta_4";
    case ParamKind::Gamma1: return std::string("gamma_1_") + to_string(alt);
    case ParamKind::Gamma2: return std::string("gamma_2_") + to_string(alt);
    case ParamKind::Gamma3: return std::string("gamma_3_") + to_string(alt);
    default: return std::string("alpha_") + to_string(alt);
  }
}

ParamVector::ParamVector(std::vector<ParamEntry> entries)
    : entries_(std::move(entries)) {
  rebuild_index();
}

void ParamVector::rebuild_index() {
  std::fill(std::begin(beta_idx_), std::end(beta_idx_), -1);
  for (auto& row : gamma_idx_) std::fill(std::begin(row), std::end(row), -1);
  std::fill(std::begin(alpha_idx_), std::end(alpha_idx_), -1);
  for (size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    int k = static_cast<int>(e.kind);
    int g = static_cast<int>(e.alt);
    int idx = static_cast<int>(i);
    if (k <= static_cast<int>(ParamKind::Beta4)) {
      if (beta_idx_[k] >= 0)
        throw ContractError("duplicate parameter " + e.name);
      beta_idx_[k] = idx;
    } else if (e.kind == ParamKind::Alpha) {
      if (alpha_idx_[g] >= 0)
        throw ContractError("duplicate parameter " + e.name);
      alpha_idx_[g] = idx;
    } else {
      int j = k - static_cast<int>(ParamKind::Gamma1);
      if (gamma_idx_[j][g] >= 0)
        throw ContractError("duplicate parameter " + e.name);
      gamma_idx_[j][g] = idx;
    }
  }
}

ParamVector ParamVector::full_model() {
  std::vector<ParamEntry> es;
  auto add = [&es](ParamKind k, SubMode g) {
    es.push_back({param_name(k, g), k, g, 0.0, true});
  };
  for (int k = 0; k <= static_cast<int>(ParamKind::Beta4); ++k)
    add(static_cast<ParamKind>(k), SubMode::Car);
  for (ParamKind k : {ParamKind::Gamma1, ParamKind::Gamma2, ParamKind::Gamma3})
    for (int g = 0; g < kNumSubModes; ++g) add(k, static_cast<SubMode>(g));
  for (int g = 0; g < kNumSubModes; ++g)
    if (static_cast<SubMode>(g) != SubMode::Car)
      add(ParamKind::Alpha, static_cast<SubMode>(g));
  return ParamVector(std::move(es));
}

ParamVector ParamVector::simplified_beta_model() {
  std::vector<ParamEntry> es;
  for (int k = 0; k <= static_cast<int>(ParamKind::Beta4); ++k)
    es.push_back({param_name(static_cast<ParamKind>(k), SubMode::Car),
                  static_cast<ParamKind>(k), SubMode::Car, 0.0, true});
  return ParamVector(std::move(es));
}

int ParamVector::find(const std::string& name) const {
  for (size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return static_cast<int>(i);
  return -1;
}

void ParamVector::set(const std::string& name, double value) {
  int i = find(name);
  if (i < 0) throw ContractError("unknown parameter '" + name + "'");
  entries_[static_cast<size_t>(i)].value = value;
}

int ParamVector::index_of(ParamKind kind, SubMode alt) const {
  int k = static_cast<int>(kind);
  int g = static_cast<int>(alt);
  if (k <= static_cast<int>(ParamKind::Beta4)) return beta_idx_[k];
  if (kind == ParamKind::Alpha) return alpha_idx_[g];
  return gamma_idx_[k - static_cast<int>(ParamKind::Gamma1)][g];
}

double ParamVector::value_of(ParamKind kind, SubMode alt) const {
  int i = index_of(kind, alt);
  return i < 0 ? 0.0 : entries_[static_cast<size_t>(i)].value;
}

std::vector<double> ParamVector::values() const {
  std::vector<double> v(entries_.size());
  for (size_t i = 0; i < entries_.size(); ++i) v[i] = entries_[i].value;
  return v;
}

void ParamVector::set_values(const std::vector<double>& v) {
  if (v.size() != entries_.size())
    throw ContractError("parameter value count mismatch");
  for (size_t i = 0; i < v.size(); ++i) entries_[i].value = v[i];
}

std::vector<int> ParamVector::free_indices() const {
  std::vector<int> idx;
  for (size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].free_flag) idx.push_back(static_cast<int>(i));
  return idx;
}

void ParamVector::remove(const std::string& name) {
  int i = find(name);
  if (i < 0) throw ContractError("unknown parameter '" + name + "'");
  entries_.erase(entries_.begin() + i);
  rebuild_index();
}

void ScaleConfig::validate() const {
  for (double t : theta_top)
    if (!(t > 0)) throw ContractError("nest scales must be positive");
  for (double t : theta_sub)
    if (!(t > 0)) throw ContractError("nest scales must be positive");
}

double disutility(SubMode g, const PathCostInputs& in, const ParamVector& p) {
  const bool car = involves_car(g), bus = involves_bus(g),
             metro = involves_metro(g);
  if (!car && in.w_car != 0)
    throw ContractError("car time on a path without a car leg");
  if (!bus && (in.w_bus != 0 || in.wait_bus != 0))
    throw ContractError("bus time on a path without a bus leg");
  if (!metro && (in.w_metro != 0 || in.wait_metro != 0))
    throw ContractError("metro time on a path without a metro leg");
  if (g == SubMode::Car && in.walk_time != 0)
    throw ContractError("walk time on a drive-only path");
  if (g == SubMode::Car && in.fare != 0)
    throw ContractError("transit fare on a drive-only path");
  if (!car && in.parking_fee != 0)
    throw ContractError("parking fee on a path without a car leg");

  double c = 0;
  if (car)
    c += p.value_of(ParamKind::Beta1Car) * in.w_car +
         p.value_of(ParamKind::Beta2) * in.parking_fee;
  if (bus)
    c += p.value_of(ParamKind::Beta1Bus) * in.w_bus +
         p.value_of(ParamKind::Beta3Bus) * in.wait_bus;
  if (metro)
    c += p.value_of(ParamKind::Beta1Metro) * in.w_metro +
         p.value_of(ParamKind::Beta3Metro) * in.wait_metro;
  if (g != SubMode::Car)
    c += p.value_of(ParamKind::Beta2) * in.fare +
         p.value_of(ParamKind::Beta4) * in.walk_time;
  c += p.value_of(ParamKind::Gamma1, g) * in.income +
       p.value_of(ParamKind::Gamma2, g) * in.pop_density_o +
       p.value_of(ParamKind::Gamma3, g) * in.pop_density_d;
  if (g != SubMode::Car) c += p.value_of(ParamKind::Alpha, g);
  return c;
}

std::vector<std::pair<int, double>> dcost_dparams(SubMode g,
                                                  const PathCostInputs& in,
                                                  const ParamVector& p) {
  const bool car = involves_car(g), bus = involves_bus(g),
             metro = involves_metro(g);
  std::vector<std::pair<int, double>> row;
  auto put = [&row, &p](ParamKind k, SubMode alt, double v) {
    int i = p.index_of(k, alt);
    if (i >= 0) row.emplace_back(i, v);
  };
  if (car) put(ParamKind::Beta1Car, SubMode::Car, in.w_car);
  if (bus) {
    put(ParamKind::Beta1Bus, SubMode::Car, in.w_bus);
    put(ParamKind::Beta3Bus, SubMode::Car, in.wait_bus);
  }
  if (metro) {
    put(ParamKind::Beta1Metro, SubMode::Car, in.w_metro);
    put(ParamKind::Beta3Metro, SubMode::Car, in.wait_metro);
  }
  double money = 0;
  if (g == SubMode::Car)
    money = in.parking_fee;
  else if (!car)
    money = in.fare;
  else
    money = in.parking_fee + in.fare;
  put(ParamKind::Beta2, SubMode::Car, money);
  if (g != SubMode::Car) put(ParamKind::Beta4, SubMode::Car, in.walk_time);
  put(ParamKind::Gamma1, g, in.income);
  put(ParamKind::Gamma2, g, in.pop_density_o);
  put(ParamKind::Gamma3, g, in.pop_density_d);
  if (g != SubMode::Car) put(ParamKind::Alpha, g, 1.0);
  std::sort(row.begin(), row.end());
  return row;
}

size_t ChoiceInstance::total_alternatives() const {
  size_t n = 0;
  for (const auto& nest : nests) n += nest.costs.size();
  return n;
}

size_t ChoiceProbabilities::total_alternatives() const {
  size_t n = 0;
  for (const auto& nest : nests) n += nest.p_path.size();
  return n;
}

namespace {

// log(sum(exp(x_i))) with the max factored out.
double log_sum_exp(const std::vector<double>& x) {
  double m = *std::max_element(x.begin(), x.end());
  double s = 0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

ChoiceProbabilities nested_probabilities(const ChoiceInstance& inst,
                                         const ScaleConfig& scales) {
  scales.validate();
  if (inst.nests.empty() || inst.total_alternatives() == 0)
    throw ContractError("empty choice set");
  for (const auto& nest : inst.nests) {
    if (nest.costs.empty())
      throw ContractError(std::string("nest ") + to_string(nest.g) +
                          " has no paths");
    for (double c : nest.costs)
      if (!std::isfinite(c)) throw ContractError("non-finite path cost");
  }

  ChoiceProbabilities out;
  out.nests.resize(inst.nests.size());

  // Bottom layer: P_{k|g} and IV_{m,g} from -c/theta_{m,g}.
  for (size_t j = 0; j < inst.nests.size(); ++j) {
    const auto& nest = inst.nests[j];
    auto& pv = out.nests[j];
    pv.g = nest.g;
    double th = scales.sub(nest.g);
    std::vector<double> a(nest.costs.size());
    for (size_t k = 0; k < nest.costs.size(); ++k) a[k] = -nest.costs[k] / th;
    double lse = log_sum_exp(a);
    pv.iv = lse;
    pv.p_path.resize(a.size());
    for (size_t k = 0; k < a.size(); ++k) pv.p_path[k] = std::exp(a[k] - lse);
  }

  // Middle layer per present top mode: P_{g|m} and IV_m from
  // (theta_{m,g}/theta_m) * IV_{m,g}.
  for (int m = 0; m < 3; ++m) {
    std::vector<size_t> members;
    for (size_t j = 0; j < out.nests.size(); ++j)
      if (static_cast<int>(top_mode_of(out.nests[j].g)) == m)
        members.push_back(j);
    if (members.empty()) continue;
    out.top_present[m] = true;
    double th_m = scales.theta_top[m];
    std::vector<double> b(members.size());
    for (size_t i = 0; i < members.size(); ++i) {
      const auto& nest = out.nests[members[i]];
      b[i] = scales.sub(nest.g) / th_m * nest.iv;
    }
    double lse = log_sum_exp(b);
    out.iv_top[m] = lse;
    for (size_t i = 0; i < members.size(); ++i)
      out.nests[members[i]].p_sub_given_top = std::exp(b[i] - lse);
  }

  // Top layer: P_m from theta_m * IV_m.
  std::vector<double> d;
  std::vector<int> modes;
  for (int m = 0; m < 3; ++m) {
    if (!out.top_present[m]) continue;
    d.push_back(scales.theta_top[m] * out.iv_top[m]);
    modes.push_back(m);
  }
  double lse = log_sum_exp(d);
  for (size_t i = 0; i < d.size(); ++i)
    out.p_top[modes[i]] = std::exp(d[i] - lse);
  return out;
}

std::vector<double> path_flows(double demand,
                               const ChoiceProbabilities& probs) {
  if (demand < 0) throw ContractError("negative demand");
  std::vector<double> f;
  f.reserve(probs.total_alternatives());
  for (size_t j = 0; j < probs.nests.size(); ++j)
    for (size_t k = 0; k < probs.nests[j].p_path.size(); ++k)
      f.push_back(demand * probs.joint(j, k));
  return f;
}

std::vector<double> dflow_ddemand(const ChoiceProbabilities& probs) {
  std::vector<double> g;
  g.reserve(probs.total_alternatives());
  for (size_t j = 0; j < probs.nests.size(); ++j)
    for (size_t k = 0; k < probs.nests[j].p_path.size(); ++k)
      g.push_back(probs.joint(j, k));
  return g;
}

std::vector<std::vector<double>> dflow_dcost(const ChoiceProbabilities& probs,
                                             const std::vector<double>& flows,
                                             const ScaleConfig& scales) {
  size_t n = probs.total_alternatives();
  if (flows.size() != n)
    throw ContractError("flow vector does not match the instance");

  struct AltRef {
    size_t nest;
    size_t k;
  };
  std::vector<AltRef> alts;
  alts.reserve(n);
  for (size_t j = 0; j < probs.nests.size(); ++j)
    for (size_t k = 0; k < probs.nests[j].p_path.size(); ++k)
      alts.push_back({j, k});

  std::vector<std::vector<double>> jac(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    const auto& ai = alts[i];
    const auto& nest_i = probs.nests[ai.nest];
    TopMode m_i = top_mode_of(nest_i.g);
    double f = flows[i];
    double th_sub = scales.sub(nest_i.g);
    double th_top = scales.top(m_i);
    double p_k = nest_i.p_path[ai.k];
    double p_g = nest_i.p_sub_given_top;
    double p_m = probs.p_top[static_cast<int>(m_i)];
    for (size_t j = 0; j < n; ++j) {
      const auto& aj = alts[j];
      const auto& nest_j = probs.nests[aj.nest];
      TopMode m_j = top_mode_of(nest_j.g);
      double pk_j = nest_j.p_path[aj.k];
      double pg_j = nest_j.p_sub_given_top;
      double v;
      if (i == j) {
        // same path
        v = f * (-(1.0 - p_k) / th_sub - p_k * (1.0 - p_g) / th_top -
                 p_k * p_g * (1.0 - p_m));
      } else if (ai.nest == aj.nest) {
        // different path, same second-level mode
        v = f * (pk_j / th_sub - pk_j * (1.0 - p_g) / th_top -
                 pk_j * p_g * (1.0 - p_m));
      } else if (m_i == m_j) {
        // different second-level mode, same first-level mode
        v = f * pg_j * pk_j * (1.0 / th_top - 1.0 + p_m);
      } else {
        // different first-level mode
        double p_mj = probs.p_top[static_cast<int>(m_j)];
        v = f * p_mj * pg_j * pk_j;
      }
      jac[i][j] = v;
    }
  }
  return jac;
}

}  // namespace mmcal
