#ifndef MMCAL_CHOICE_HPP
#define MMCAL_CHOICE_HPP

#include <string>
#include <vector>

#include "mmcal/types.hpp"

namespace mmcal {

// Disutility parameters: beta (alternative-specific variables), gamma
// (zone-specific variables) and alpha (mode constants). The full model has
// 7 + 3*7 + 6 = 34 entries; reduced models drop entries entirely.
enum class ParamKind : int {
  Beta1Car = 0,
  Beta1Bus,
  Beta1Metro,
  Beta2,
  Beta3Bus,
  Beta3Metro,
  Beta4,
  Gamma1,
  Gamma2,
  Gamma3,
  Alpha
};

std::string param_name(ParamKind kind, SubMode alt);

struct ParamEntry {
  std::string name;
  ParamKind kind = ParamKind::Beta2;
  SubMode alt = SubMode::Car;  // meaningful for Gamma1..3 and Alpha only
  double value = 0;
  bool free_flag = true;
};

class ParamVector {
 public:
  ParamVector() { rebuild_index(); }
  explicit ParamVector(std::vector<ParamEntry> entries);

  // All 34 Table-style entries, values zero, all free.
  static ParamVector full_model();
  // Time-and-money model: the 7 beta entries only.
  static ParamVector simplified_beta_model();

  const std::vector<ParamEntry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  ParamEntry& at(size_t i) { return entries_[i]; }
  const ParamEntry& at(size_t i) const { return entries_[i]; }

  int find(const std::string& name) const;  // -1 if absent
  void set(const std::string& name, double value);
  // Entry index for (kind, alt), -1 when the reduced model omits it.
  int index_of(ParamKind kind, SubMode alt = SubMode::Car) const;
  // Value lookup; omitted entries act as zero coefficients.
  double value_of(ParamKind kind, SubMode alt = SubMode::Car) const;

  std::vector<double> values() const;
  void set_values(const std::vector<double>& v);
  std::vector<int> free_indices() const;

  // Drops an entry (Algorithm-style variable removal).
  void remove(const std::string& name);

  void rebuild_index();

 private:
  std::vector<ParamEntry> entries_;
  int beta_idx_[7];
  int gamma_idx_[3][kNumSubModes];
  int alpha_idx_[kNumSubModes];
};

// Scale parameters of the three-layer nest structure. Configuration inputs,
// not estimated.
struct ScaleConfig {
  double theta_top[3] = {1.0, 1.0, 1.0};          // per first-level nest
  double theta_sub[kNumSubModes] = {1, 1, 1, 1, 1, 1, 1};  // per second level

  double top(TopMode m) const { return theta_top[static_cast<int>(m)]; }
  double sub(SubMode g) const { return theta_sub[static_cast<int>(g)]; }
  void validate() const;
};

// Everything the disutility of one (path, departure interval) depends on.
// Times are minutes; money is dollars. Times of absent legs must be zero.
struct PathCostInputs {
  double w_car = 0;
  double w_bus = 0;
  double w_metro = 0;
  double wait_bus = 0;
  double wait_metro = 0;
  double walk_time = 0;
  double parking_fee = 0;  // tau
  double fare = 0;         // delta
  double income = 0;       // I^{rs}
  double pop_density_o = 0;  // J^r
  double pop_density_d = 0;  // J^s
};

// Generalized cost of one path alternative.
double disutility(SubMode g, const PathCostInputs& in, const ParamVector& p);

// Row of dc/dtheta for one path alternative: (entry index, value) pairs,
// ordered by entry index.
std::vector<std::pair<int, double>> dcost_dparams(SubMode g,
                                                  const PathCostInputs& in,
                                                  const ParamVector& p);

// One (O-D pair, departure interval) choice instance: path costs grouped by
// second-level mode. Modes that are unavailable are simply not listed.
struct ChoiceInstance {
  struct Nest {
    SubMode g;
    std::vector<double> costs;  // one per path, caller's path order
  };
  std::vector<Nest> nests;

  size_t total_alternatives() const;
};

struct ChoiceProbabilities {
  struct Nest {
    SubMode g;
    double p_sub_given_top = 0;        // P_{g(m)|m,t}
    double iv = 0;                     // IV_{m,g(m),t}
    std::vector<double> p_path;        // P_{k|g(m),t}
  };
  std::vector<Nest> nests;
  double p_top[3] = {0, 0, 0};  // P_{m,t}; zero for absent modes
  double iv_top[3] = {0, 0, 0};
  bool top_present[3] = {false, false, false};

  // Joint probability of alternative k of nest j.
  double joint(size_t nest, size_t k) const {
    const auto& n = nests[nest];
    return p_top[static_cast<int>(top_mode_of(n.g))] * n.p_sub_given_top *
           n.p_path[k];
  }
  size_t total_alternatives() const;
};

// Evaluates the nested probability system with log-sum-exp stabilization.
ChoiceProbabilities nested_probabilities(const ChoiceInstance& inst,
                                         const ScaleConfig& scales);

// f = q * P_m * P_{g|m} * P_{k|g}, flattened nest-major in instance order.
std::vector<double> path_flows(double demand, const ChoiceProbabilities& probs);

// dj/di entries of df/dc for one instance, dense (row = flow of alternative
// i, column = cost of alternative j), flattened in the same order as
// path_flows. Implements the four nesting cases.
std::vector<std::vector<double>> dflow_dcost(const ChoiceProbabilities& probs,
                                             const std::vector<double>& flows,
                                             const ScaleConfig& scales);

// df/dq for one instance: the joint probabilities, flattened.
std::vector<double> dflow_ddemand(const ChoiceProbabilities& probs);

}  // namespace mmcal

#endif  // MMCAL_CHOICE_HPP
