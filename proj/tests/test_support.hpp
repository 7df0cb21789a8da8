#ifndef MMCAL_TEST_SUPPORT_HPP
#define MMCAL_TEST_SUPPORT_HPP

#include <cmath>
#include <random>
#include <vector>

#include "mmcal/choice.hpp"
#include "mmcal/network.hpp"

namespace mmtest {

using mmcal::ChoiceInstance;
using mmcal::ChoiceProbabilities;
using mmcal::ScaleConfig;
using mmcal::SubMode;
using mmcal::TopMode;

inline double urand(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

inline int irand(std::mt19937_64& rng, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  return d(rng);
}

// Direct long-double evaluation of the nested probability system, written
// from the published closed forms without stabilization. Independent of the
// library implementation; used as the oracle for probability and gradient
// checks.
struct DirectProbs {
  std::vector<std::vector<long double>> p_path;  // per nest
  std::vector<long double> p_sub;                // P_{g|m}
  long double p_top[3] = {0, 0, 0};
};

inline DirectProbs direct_nested_probs(const ChoiceInstance& inst,
                                       const ScaleConfig& scales) {
  DirectProbs out;
  size_t nn = inst.nests.size();
  out.p_path.resize(nn);
  out.p_sub.assign(nn, 0.0L);
  std::vector<long double> iv_sub(nn);
  for (size_t j = 0; j < nn; ++j) {
    long double th = scales.sub(inst.nests[j].g);
    long double denom = 0;
    for (double c : inst.nests[j].costs) denom += expl(-(long double)c / th);
    iv_sub[j] = logl(denom);
    for (double c : inst.nests[j].costs)
      out.p_path[j].push_back(expl(-(long double)c / th) / denom);
  }
  long double iv_top[3] = {0, 0, 0};
  bool present[3] = {false, false, false};
  for (int m = 0; m < 3; ++m) {
    long double denom = 0;
    for (size_t j = 0; j < nn; ++j) {
      if (static_cast<int>(mmcal::top_mode_of(inst.nests[j].g)) != m) continue;
      present[m] = true;
      long double th_g = scales.sub(inst.nests[j].g);
      denom += expl(th_g / scales.theta_top[m] * iv_sub[j]);
    }
    if (!present[m]) continue;
    iv_top[m] = logl(denom);
    for (size_t j = 0; j < nn; ++j) {
      if (static_cast<int>(mmcal::top_mode_of(inst.nests[j].g)) != m) continue;
      long double th_g = scales.sub(inst.nests[j].g);
      out.p_sub[j] = expl(th_g / scales.theta_top[m] * iv_sub[j]) / denom;
    }
  }
  long double denom = 0;
  for (int m = 0; m < 3; ++m)
    if (present[m]) denom += expl(scales.theta_top[m] * iv_top[m]);
  for (int m = 0; m < 3; ++m)
    if (present[m])
      out.p_top[m] = expl(scales.theta_top[m] * iv_top[m]) / denom;
  return out;
}

// Flattened path flows from the direct oracle.
inline std::vector<long double> direct_flows(double q,
                                             const ChoiceInstance& inst,
                                             const ScaleConfig& scales) {
  DirectProbs dp = direct_nested_probs(inst, scales);
  std::vector<long double> f;
  for (size_t j = 0; j < inst.nests.size(); ++j) {
    int m = static_cast<int>(mmcal::top_mode_of(inst.nests[j].g));
    for (size_t k = 0; k < inst.nests[j].costs.size(); ++k)
      f.push_back((long double)q * dp.p_top[m] * dp.p_sub[j] *
                  dp.p_path[j][k]);
  }
  return f;
}

// Random instance with up to three first-level modes and small path counts.
inline ChoiceInstance random_instance(std::mt19937_64& rng, int max_paths = 4,
                                      double cost_lo = 1.0,
                                      double cost_hi = 40.0) {
  static const SubMode by_top[3][3] = {
      {SubMode::Car, SubMode::Car, SubMode::Car},
      {SubMode::Bus, SubMode::Metro, SubMode::BusMetro},
      {SubMode::CarBus, SubMode::CarMetro, SubMode::CarBusMetro}};
  ChoiceInstance inst;
  for (int m = 0; m < 3; ++m) {
    if (m > 0 && irand(rng, 0, 3) == 0) continue;  // sometimes absent
    int gn = m == 0 ? 1 : irand(rng, 1, 3);
    for (int g = 0; g < gn; ++g) {
      ChoiceInstance::Nest nest;
      nest.g = by_top[m][g];
      int pn = irand(rng, 1, max_paths);
      for (int k = 0; k < pn; ++k)
        nest.costs.push_back(urand(rng, cost_lo, cost_hi));
      inst.nests.push_back(nest);
    }
  }
  return inst;
}

inline ScaleConfig random_scales(std::mt19937_64& rng) {
  ScaleConfig s;
  for (auto& t : s.theta_top) t = urand(rng, 0.5, 3.0);
  for (auto& t : s.theta_sub) t = urand(rng, 0.5, 3.0);
  return s;
}

// Convenience builder for small in-memory networks used across the suites.
struct NetBuilder {
  mmcal::MultiModalNetwork net;

  int node(const std::string& id, double x, double y, bool zone = false,
           bool parking = false) {
    net.nodes.push_back({id, x, y, zone, parking});
    return static_cast<int>(net.nodes.size() - 1);
  }
  int link(const std::string& id, int from, int to, double len_miles,
           double speed = 30, double cap_car = 900, double cap_bus = 700,
           double jam_car = 250, double jam_bus = 200, int lanes = 1) {
    mmcal::AutoLink l;
    l.id = id;
    l.from_node = from;
    l.to_node = to;
    l.length_miles = len_miles;
    l.speed_mph = speed;
    l.cap_car_vph = cap_car;
    l.cap_bus_vph = cap_bus;
    l.jam_car_per_mile = jam_car;
    l.jam_bus_per_mile = jam_bus;
    l.lanes = lanes;
    net.links.push_back(l);
    return static_cast<int>(net.links.size() - 1);
  }
  int stop(const std::string& id, mmcal::StopKind kind, int parent = -1,
           int host_link = -1, double milepost = 0, double x = 0,
           double y = 0) {
    mmcal::TransitStop s;
    s.id = id;
    s.kind = kind;
    s.parent_physical = parent;
    s.host_link = host_link;
    s.host_milepost = milepost;
    s.x = x;
    s.y = y;
    net.stops.push_back(s);
    return static_cast<int>(net.stops.size() - 1);
  }
  int walk(const std::string& id, int from_node, int from_stop, int to_node,
           int to_stop, mmcal::WalkCategory cat, double len_miles) {
    mmcal::WalkLink w;
    w.id = id;
    w.from_node = from_node;
    w.from_stop = from_stop;
    w.to_node = to_node;
    w.to_stop = to_stop;
    w.category = cat;
    w.length_miles = len_miles;
    net.walks.push_back(w);
    return static_cast<int>(net.walks.size() - 1);
  }
  int line(const std::string& id, bool metro, double capacity,
           std::vector<int> stops, std::vector<double> departures,
           std::vector<double> run_times = {},
           std::vector<int> route_links = {}) {
    mmcal::TransitLine ln;
    ln.id = id;
    ln.is_metro = metro;
    ln.vehicle_capacity = capacity;
    ln.stops = std::move(stops);
    ln.trip_departures = std::move(departures);
    ln.run_times_sec = std::move(run_times);
    ln.route_links = std::move(route_links);
    net.lines.push_back(ln);
    return static_cast<int>(net.lines.size() - 1);
  }
  int od(int origin, int dest, double income = 20, double dens_o = 20,
         double dens_d = 18) {
    net.od_pairs.push_back({origin, dest, income, dens_o, dens_d});
    return static_cast<int>(net.od_pairs.size() - 1);
  }
  mmcal::Path& path(const std::string& id, int od, mmcal::SubMode mode,
                    double tau = 0, double fare = 0) {
    mmcal::Path p;
    p.id = id;
    p.od = od;
    p.mode = mode;
    p.parking_fee = tau;
    p.fare = fare;
    net.paths.push_back(p);
    return net.paths.back();
  }
  static mmcal::PathLeg drive(int link) {
    mmcal::PathLeg l;
    l.kind = mmcal::PathLeg::Kind::Drive;
    l.link = link;
    return l;
  }
  static mmcal::PathLeg ride(int line, int board, int alight) {
    mmcal::PathLeg l;
    l.kind = mmcal::PathLeg::Kind::Ride;
    l.line = line;
    l.board_stop = board;
    l.alight_stop = alight;
    return l;
  }
  static mmcal::PathLeg walk_leg(int walk, bool forward = true) {
    mmcal::PathLeg l;
    l.kind = mmcal::PathLeg::Kind::Walk;
    l.walk = walk;
    l.walk_forward = forward;
    return l;
  }
  static mmcal::PathLeg park(int node) {
    mmcal::PathLeg l;
    l.kind = mmcal::PathLeg::Kind::Park;
    l.park_node = node;
    return l;
  }
  // Scan-based lookups usable before finalize() builds the id maps.
  int stop_id(const std::string& id) const {
    for (size_t i = 0; i < net.stops.size(); ++i)
      if (net.stops[i].id == id) return static_cast<int>(i);
    return -1;
  }
  int walk_id(const std::string& id) const {
    for (size_t i = 0; i < net.walks.size(); ++i)
      if (net.walks[i].id == id) return static_cast<int>(i);
    return -1;
  }
  int line_id(const std::string& id) const {
    for (size_t i = 0; i < net.lines.size(); ++i)
      if (net.lines[i].id == id) return static_cast<int>(i);
    return -1;
  }
  int path_id(const std::string& id) const {
    for (size_t i = 0; i < net.paths.size(); ++i)
      if (net.paths[i].id == id) return static_cast<int>(i);
    return -1;
  }

  mmcal::MultiModalNetwork finalize() {
    net.finalize();
    return net;
  }
};

inline double rel_err(double got, double want, double abs_floor = 1e-9) {
  double denom = std::max(std::abs(want), abs_floor);
  return std::abs(got - want) / denom;
}

// Derivative comparison at relative 1e-5 with an absolute floor of 1e-9 per
// unit of the quantity's scale (derivatives of flows scale with demand).
inline bool deriv_close(double got, double want, double scale = 1.0,
                        double rel = 1e-5) {
  return std::abs(got - want) <=
         rel * std::abs(want) + 1e-9 * std::max(1.0, std::abs(scale));
}

}  // namespace mmtest

#endif
