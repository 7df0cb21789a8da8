#include "mmcal/dnl.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "mmcal/io.hpp"

namespace mmcal {

namespace {

constexpr double kMassEps = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Parcel {
  int cohort;  // car cohort index
  int leg;     // position within the cohort's drive-link sequence
  double mass;
};

struct Cell {
  double len = 0;        // miles
  double jam_car = 0;    // vehicles at jam, car class
  double jam_bus = 0;
  double mu = 1;         // movable content fraction per step
  double car_mass = 0;
  double bus_count = 0;
  std::deque<Parcel> q;  // front = closest to the downstream boundary
};

struct LinkState {
  const AutoLink* def = nullptr;
  std::vector<Cell> cells;
  std::deque<Parcel> buffer;  // origin vertical queue
  double buffer_mass = 0;
  double cap_car_step = 0;  // vehicles per loading step
  double cap_bus_step = 0;
  double wdt_miles = 0;     // backward wave distance per step
  double occ_crit = 0;      // critical occupancy fraction (car based)
  // Fraction of each boundary's capacity consumed by buses crossing it; the
  // usage recorded in one step throttles car flow in the next.
  std::vector<double> bus_usage, bus_usage_next;  // size cells+1
  std::vector<double> arr_bin, dep_bin;           // car cumulative bins
  std::vector<double> bus_arr_bin, bus_dep_bin;
  std::vector<double> occ_sum;  // per output interval

  double cell_occupancy(const Cell& c) const {
    return c.car_mass / c.jam_car + c.bus_count / c.jam_bus;
  }
  // Congested-regime speed from the triangular diagram, mph.
  double cell_speed(const Cell& c, double wave_mph) const {
    double occ = cell_occupancy(c);
    if (occ <= 1e-9) return def->speed_mph;
    double v = wave_mph * (1.0 - occ) / occ;
    return std::clamp(v, 0.0, def->speed_mph);
  }
};

struct CarCohort {
  int path = -1;
  int dep = -1;
  std::vector<int> links;
  bool pnr = false;
  int resume_leg = -1;  // first leg after Park
  double flow = 0;
};

struct PaxCohort {
  int path = -1;
  int dep = -1;
  double flow = 0;
};

struct PaxParcel {
  int cohort;  // pax cohort index
  int leg;     // next leg to process
  double mass;
  double time;  // clock seconds when the parcel reaches that leg
};

struct QueueEntry {
  int cohort;
  int leg;  // the Ride leg being waited for
  double mass;
};

struct OnboardGroup {
  int cohort;
  int leg;
  double mass;
};

struct BusAgent {
  int line = -1, trip = -1;
  enum class Phase { Pending, Driving, Dwelling, Done } phase = Phase::Pending;
  double pos = 0;  // miles along the route
  int route_idx = 0;
  int cell_idx = 0;
  int next_stop = 0;  // index into the line's stop sequence
  double onboard_total = 0;
  std::vector<std::vector<OnboardGroup>> onboard;  // by alight stop seq
  double dwell_arrival = 0;
  double service_sec = 0;
  bool boarded_this_step = false;
  int dwell_stop_seq = -1;
};

struct MetroAgent {
  int line = -1, trip = -1;
  enum class Phase { Pending, AtStation, InTransit, Done } phase =
      Phase::Pending;
  int seq = 0;
  double arrival = 0;
  double depart_time = 0;
  double alighted = 0, boarded = 0;
  bool boarded_this_step = false;
  double onboard_total = 0;
  std::vector<std::vector<OnboardGroup>> onboard;
};

struct DarTally {
  // Raw (row, mass) appends per cohort, consolidated at extraction.
  std::vector<std::vector<std::pair<int, double>>> per_cohort;
};

class Loader {
 public:
  Loader(const MultiModalNetwork& net, const PathFlowVector& flows,
         const LoadingConfig& cfg)
      : net_(net), flows_(flows), cfg_(cfg) {}

  DnlOutputs run();

 private:
  const MultiModalNetwork& net_;
  const PathFlowVector& flows_;
  const LoadingConfig& cfg_;

  double dt_ = 5;
  int steps_ = 0;
  int nout_ = 0;
  int spi_ = 0;       // steps per output interval
  int dep_steps_ = 0; // steps per departure interval

  std::vector<LinkState> links_;
  std::vector<CarCohort> car_cohorts_;
  std::vector<PaxCohort> pax_cohorts_;
  std::vector<int> car_cohort_of_, pax_cohort_of_;  // (path,dep) -> index
  std::vector<std::deque<QueueEntry>> queues_;      // per virtual stop
  std::vector<std::vector<PaxParcel>> buckets_;     // per step
  std::vector<PaxParcel> beyond_horizon_;
  std::vector<BusAgent> buses_;
  std::vector<MetroAgent> metros_;
  std::vector<std::vector<double>> route_cum_;  // per line, per route link
  std::vector<double> route_len_;

  DarTally car_tally_, pt_tally_;
  DnlOutputs out_;
  int step_ = 0;
  double pax_arrived_late_ = 0;

  int interval_of_step(int k) const { return k / spi_; }
  double now_end() const { return (step_ + 1) * dt_; }

  int cohort_key(int path, int dep) const {
    return path * flows_.num_intervals + dep;
  }

  void build();
  void inject(int k);
  void process_bucket(int k);
  void spawn_vehicles(int k);
  void node_phase();
  void internal_phase();
  void buffer_phase();
  void move_buses();
  void move_metros();
  void record_occupancy(int k);
  void finish();

  void record_car_entry(int link, int cohort, double mass);
  void advance_pax(PaxParcel p);
  double board_from_queue(int vstop, double headroom, int st_idx,
                          std::vector<std::vector<OnboardGroup>>& onboard,
                          int alight_lookup_line, double* service_sec,
                          double per_pass_sec);
  void alight_groups(std::vector<OnboardGroup>& groups, int st_idx,
                     double when);
  void record_pt(int cohort, int row, double mass);

  static double step_inverse_integral(const std::vector<double>& cum,
                                      double c1, double c2, double dt);
};

void Loader::build() {
  dt_ = cfg_.loading_step_sec;
  steps_ = cfg_.num_steps();
  nout_ = cfg_.num_out_intervals();
  spi_ = cfg_.steps_per_interval();
  dep_steps_ = static_cast<int>(cfg_.demand_interval_sec / dt_ + 0.5);

  if (flows_.num_paths != static_cast<int>(net_.paths.size()))
    throw ContractError("path flow vector does not index the path table");
  if (flows_.num_intervals * cfg_.demand_interval_sec >
      cfg_.horizon_sec + 1e-9)
    throw ConfigError("horizon shorter than the demand period");
  for (const auto& ln : net_.lines)
    for (double dep : ln.trip_departures)
      if (dep >= cfg_.horizon_sec)
        throw ConfigError("horizon too short for a scheduled trip of line " +
                          ln.id);

  links_.resize(net_.links.size());
  for (size_t li = 0; li < net_.links.size(); ++li) {
    const auto& def = net_.links[li];
    auto& L = links_[li];
    L.def = &def;
    double l0 = mph_to_miles_per_sec(def.speed_mph) * dt_;
    int n = std::max(1, static_cast<int>(std::floor(def.length_miles / l0 +
                                                    1e-9)));
    L.cells.resize(n);
    for (int i = 0; i < n; ++i) {
      double len = (i + 1 < n) ? l0 : def.length_miles - (n - 1) * l0;
      auto& c = L.cells[i];
      c.len = len;
      c.jam_car = def.jam_car_per_mile * len;
      c.jam_bus = def.jam_bus_per_mile * len;
      c.mu = std::min(1.0, l0 / len);
    }
    L.cap_car_step = def.cap_car_vph * dt_ / kSecondsPerHour;
    L.cap_bus_step = def.cap_bus_vph * dt_ / kSecondsPerHour;
    double k_crit = def.cap_car_vph / def.speed_mph;  // veh per mile
    double wave =
        def.cap_car_vph / std::max(def.jam_car_per_mile - k_crit, 1e-9);
    wave = std::min(wave, def.speed_mph);
    L.wdt_miles = mph_to_miles_per_sec(wave) * dt_;
    L.occ_crit = k_crit / def.jam_car_per_mile;
    L.bus_usage.assign(n + 1, 0.0);
    L.bus_usage_next.assign(n + 1, 0.0);
    L.arr_bin.assign(steps_ + 1, 0.0);
    L.dep_bin.assign(steps_ + 1, 0.0);
    L.bus_arr_bin.assign(steps_ + 1, 0.0);
    L.bus_dep_bin.assign(steps_ + 1, 0.0);
    L.occ_sum.assign(nout_, 0.0);
  }

  car_cohort_of_.assign(net_.paths.size() * flows_.num_intervals, -1);
  pax_cohort_of_.assign(net_.paths.size() * flows_.num_intervals, -1);
  for (size_t pi = 0; pi < net_.paths.size(); ++pi) {
    const auto& p = net_.paths[pi];
    std::vector<int> drive_links;
    int resume = -1;
    bool has_ride = false;
    for (size_t leg = 0; leg < p.legs.size(); ++leg) {
      if (p.legs[leg].kind == PathLeg::Kind::Drive)
        drive_links.push_back(p.legs[leg].link);
      if (p.legs[leg].kind == PathLeg::Kind::Park)
        resume = static_cast<int>(leg) + 1;
      if (p.legs[leg].kind == PathLeg::Kind::Ride) has_ride = true;
    }
    for (int t = 0; t < flows_.num_intervals; ++t) {
      double f = flows_.at(static_cast<int>(pi), t);
      if (f <= kMassEps) continue;
      if (!drive_links.empty()) {
        CarCohort c;
        c.path = static_cast<int>(pi);
        c.dep = t;
        c.links = drive_links;
        c.pnr = resume >= 0;
        c.resume_leg = resume;
        c.flow = f;
        car_cohort_of_[cohort_key(static_cast<int>(pi), t)] =
            static_cast<int>(car_cohorts_.size());
        car_cohorts_.push_back(std::move(c));
      }
      if (has_ride) {
        PaxCohort c;
        c.path = static_cast<int>(pi);
        c.dep = t;
        c.flow = f;
        pax_cohort_of_[cohort_key(static_cast<int>(pi), t)] =
            static_cast<int>(pax_cohorts_.size());
        pax_cohorts_.push_back(c);
      }
    }
  }
  car_tally_.per_cohort.resize(car_cohorts_.size());
  pt_tally_.per_cohort.resize(pax_cohorts_.size());

  queues_.resize(net_.stops.size());
  buckets_.resize(steps_ + 1);

  route_cum_.resize(net_.lines.size());
  route_len_.assign(net_.lines.size(), 0.0);
  for (size_t li = 0; li < net_.lines.size(); ++li) {
    const auto& ln = net_.lines[li];
    if (ln.is_metro) continue;
    double cum = 0;
    for (int rl : ln.route_links) {
      route_cum_[li].push_back(cum);
      cum += net_.links[rl].length_miles;
    }
    route_len_[li] = cum;
  }

  out_.num_links = static_cast<int>(net_.links.size());
  out_.num_intervals = nout_;
  out_.num_stop_trips = static_cast<int>(net_.stop_trips.size());
  out_.link_flow.assign(net_.links.size() * nout_, 0.0);
  out_.link_tt_min.assign(net_.links.size() * nout_, 0.0);
  out_.pt_counts.assign(net_.stop_trips.size() * 2, 0.0);
  out_.congested.assign(net_.links.size() * nout_, 0);
  out_.exit_flow.assign(net_.links.size() * nout_, 0.0);
  out_.stop_trip_arrival.assign(net_.stop_trips.size(), kInf);
  out_.stop_trip_departure.assign(net_.stop_trips.size(), kInf);
}

void Loader::record_car_entry(int link, int cohort, double mass) {
  auto& L = links_[link];
  L.arr_bin[step_ + 1] += mass;
  int h = interval_of_step(step_);
  out_.link_flow[out_.li(link, h)] += mass;
  auto& tally = car_tally_.per_cohort[cohort];
  int row = link * nout_ + h;
  if (!tally.empty() && tally.back().first == row)
    tally.back().second += mass;
  else
    tally.emplace_back(row, mass);
  if (cfg_.record_trajectories)
    out_.events.push_back({(step_ + 1) * dt_, "link-entry",
                           car_cohorts_[cohort].path, car_cohorts_[cohort].dep,
                           mass, net_.links[link].id, -1});
}

void Loader::record_pt(int cohort, int row, double mass) {
  out_.pt_counts[row] += mass;
  auto& tally = pt_tally_.per_cohort[cohort];
  if (!tally.empty() && tally.back().first == row)
    tally.back().second += mass;
  else
    tally.emplace_back(row, mass);
}

void Loader::advance_pax(PaxParcel p) {
  const auto& path = net_.paths[pax_cohorts_[p.cohort].path];
  while (p.leg < static_cast<int>(path.legs.size())) {
    const auto& leg = path.legs[p.leg];
    switch (leg.kind) {
      case PathLeg::Kind::Walk:
        p.time += net_.walk_time_sec(net_.walks[leg.walk]);
        ++p.leg;
        break;
      case PathLeg::Kind::Ride: {
        if (p.time >= cfg_.horizon_sec) {
          beyond_horizon_.push_back(p);
          return;
        }
        int k = static_cast<int>(p.time / dt_);
        if (k <= step_) {
          auto& q = queues_[leg.board_stop];
          if (!q.empty() && q.back().cohort == p.cohort &&
              q.back().leg == p.leg)
            q.back().mass += p.mass;
          else
            q.push_back({p.cohort, p.leg, p.mass});
        } else {
          buckets_[k].push_back(p);
        }
        return;
      }
      default:
        throw ContractError("unsupported leg order in passenger segment of " +
                            path.id);
    }
  }
  if (p.time <= cfg_.horizon_sec) {
    out_.pax_arrived += p.mass;
    if (cfg_.record_trajectories)
      out_.events.push_back({p.time, "arrive", pax_cohorts_[p.cohort].path,
                             pax_cohorts_[p.cohort].dep, p.mass,
                             net_.nodes[net_.od_pairs[path.od].destination].id,
                             -1});
  } else {
    pax_arrived_late_ += p.mass;
  }
}

void Loader::inject(int k) {
  int t = k / dep_steps_;
  if (t >= flows_.num_intervals) return;
  if (k % dep_steps_ == 0 && cfg_.record_trajectories) {
    // one depart event per cohort at the interval start keeps dumps small
    for (const auto& c : car_cohorts_)
      if (c.dep == t)
        out_.events.push_back({k * dt_, "depart", c.path, c.dep, c.flow,
                               net_.nodes[net_.od_pairs[net_.paths[c.path].od]
                                              .origin]
                                   .id,
                               -1});
  }
  for (size_t ci = 0; ci < car_cohorts_.size(); ++ci) {
    auto& c = car_cohorts_[ci];
    if (c.dep != t) continue;
    double m = c.flow / dep_steps_;
    auto& L = links_[c.links[0]];
    if (!L.buffer.empty() && L.buffer.back().cohort == static_cast<int>(ci))
      L.buffer.back().mass += m;
    else
      L.buffer.push_back({static_cast<int>(ci), 0, m});
    L.buffer_mass += m;
    out_.car_injected += m;
  }
  for (size_t ci = 0; ci < pax_cohorts_.size(); ++ci) {
    const auto& c = pax_cohorts_[ci];
    if (c.dep != t) continue;
    if (net_.paths[c.path].legs[0].kind == PathLeg::Kind::Drive)
      continue;  // spawned at the parking event instead
    double m = c.flow / dep_steps_;
    out_.pax_injected += m;
    advance_pax({static_cast<int>(ci), 0, m, k * dt_});
  }
}

void Loader::process_bucket(int k) {
  auto pending = std::move(buckets_[k]);
  buckets_[k].clear();
  for (auto& p : pending) advance_pax(p);
}

void Loader::spawn_vehicles(int k) {
  double t0 = k * dt_, t1 = (k + 1) * dt_;
  for (size_t li = 0; li < net_.lines.size(); ++li) {
    const auto& ln = net_.lines[li];
    for (size_t trip = 0; trip < ln.trip_departures.size(); ++trip) {
      double dep = ln.trip_departures[trip];
      if (ln.is_metro) {
        // the train opens its doors one dwell before the scheduled departure
        double appear = std::max(0.0, dep - cfg_.min_dwell_metro_sec);
        if (appear < t0 || appear >= t1) continue;
        MetroAgent a;
        a.line = static_cast<int>(li);
        a.trip = static_cast<int>(trip);
        a.phase = MetroAgent::Phase::AtStation;
        a.seq = 0;
        a.arrival = appear;
        a.onboard.resize(ln.stops.size());
        int st = net_.stop_trip_index(a.line, a.trip, 0);
        out_.stop_trip_arrival[st] = appear;
        metros_.push_back(std::move(a));
      } else {
        if (dep < t0 || dep >= t1) continue;
        BusAgent a;
        a.line = static_cast<int>(li);
        a.trip = static_cast<int>(trip);
        a.phase = BusAgent::Phase::Driving;
        a.pos = 0;
        a.route_idx = 0;
        a.cell_idx = 0;
        a.onboard.resize(ln.stops.size());
        links_[ln.route_links[0]].cells[0].bus_count += 1;
        links_[ln.route_links[0]].bus_arr_bin[k + 1] += 1;
        out_.bus_injected += 1;
        buses_.push_back(std::move(a));
      }
    }
  }
}

void Loader::node_phase() {
  struct Move {
    int in_link;
    size_t qi;      // deque position at candidate time (stable: no pops yet)
    double amount;  // unscaled candidate mass
    int out_link;   // -1 = absorbed at this node
  };
  for (size_t ni = 0; ni < net_.nodes.size(); ++ni) {
    const auto& in_list = net_.in_links[ni];
    if (in_list.empty()) continue;

    std::vector<Move> moves;
    std::vector<double> demand(net_.links.size(), 0.0);
    for (int il : in_list) {
      auto& L = links_[il];
      auto& cell = L.cells.back();
      if (cell.q.empty()) continue;
      double geo = cell.mu * cell.car_mass;
      double cap = L.cap_car_step *
                   std::max(0.0, 1.0 - L.bus_usage[L.cells.size()]);
      double budget = std::min(geo, cap);
      for (size_t pi = 0; pi < cell.q.size() && budget > kMassEps; ++pi) {
        const auto& p = cell.q[pi];
        const auto& coh = car_cohorts_[p.cohort];
        double amt = std::min(p.mass, budget);
        int out = -1;
        if (p.leg + 1 < static_cast<int>(coh.links.size()))
          out = coh.links[p.leg + 1];
        moves.push_back({il, pi, amt, out});
        if (out >= 0) demand[out] += amt;
        budget -= amt;
        if (amt < p.mass - kMassEps) break;  // blocked remainder keeps FIFO
      }
    }
    if (moves.empty()) continue;

    std::vector<double> scale(net_.links.size(), 1.0);
    for (int ol : net_.out_links[ni]) {
      if (demand[ol] <= kMassEps) continue;
      auto& O = links_[ol];
      auto& c0 = O.cells.front();
      double space = std::max(0.0, 1.0 - O.cell_occupancy(c0)) *
                     O.def->jam_car_per_mile *
                     std::min(O.wdt_miles, c0.len);
      double cap =
          O.cap_car_step * std::max(0.0, 1.0 - O.bus_usage[0]);
      scale[ol] = std::min(1.0, std::min(space, cap) / demand[ol]);
    }

    for (const auto& mv : moves) {
      auto& L = links_[mv.in_link];
      auto& cell = L.cells.back();
      double amt = mv.amount * (mv.out_link >= 0 ? scale[mv.out_link] : 1.0);
      if (amt <= kMassEps) continue;
      auto& p = cell.q[mv.qi];
      double take = std::min(amt, p.mass);
      p.mass -= take;
      cell.car_mass -= take;
      L.dep_bin[step_ + 1] += take;
      out_.exit_flow[out_.li(mv.in_link, interval_of_step(step_))] += take;
      int cohort = p.cohort;
      int leg = p.leg;
      if (mv.out_link < 0) {
        const auto& coh = car_cohorts_[cohort];
        out_.car_arrived += take;
        double when = now_end();
        if (coh.pnr) {
          int pc = pax_cohort_of_[cohort_key(coh.path, coh.dep)];
          out_.pax_injected += take;
          if (cfg_.record_trajectories)
            out_.events.push_back({when, "park", coh.path, coh.dep, take,
                                   net_.nodes[ni].id, -1});
          advance_pax({pc, coh.resume_leg, take, when});
        } else if (cfg_.record_trajectories) {
          out_.events.push_back({when, "arrive", coh.path, coh.dep, take,
                                 net_.nodes[ni].id, -1});
        }
      } else {
        auto& O = links_[mv.out_link];
        auto& c0 = O.cells.front();
        c0.car_mass += take;
        if (!c0.q.empty() && c0.q.back().cohort == cohort &&
            c0.q.back().leg == leg + 1)
          c0.q.back().mass += take;
        else
          c0.q.push_back({cohort, leg + 1, take});
        record_car_entry(mv.out_link, cohort, take);
      }
    }
    // drained parcels are removed afterwards so deque positions stay stable
    for (int il : in_list) {
      auto& q = links_[il].cells.back().q;
      while (!q.empty() && q.front().mass <= kMassEps) q.pop_front();
      for (size_t pi = 0; pi < q.size();) {
        if (q[pi].mass <= kMassEps)
          q.erase(q.begin() + static_cast<long>(pi));
        else
          ++pi;
      }
    }
  }
}

void Loader::internal_phase() {
  for (auto& L : links_) {
    int n = static_cast<int>(L.cells.size());
    for (int b = n - 1; b >= 1; --b) {
      auto& up = L.cells[b - 1];
      auto& dn = L.cells[b];
      if (up.q.empty()) continue;
      double geo = up.mu * up.car_mass;
      double cap = L.cap_car_step * std::max(0.0, 1.0 - L.bus_usage[b]);
      double space = std::max(0.0, 1.0 - L.cell_occupancy(dn)) *
                     L.def->jam_car_per_mile * std::min(L.wdt_miles, dn.len);
      double budget = std::min({geo, cap, space});
      while (budget > kMassEps && !up.q.empty()) {
        auto& p = up.q.front();
        double take = std::min(p.mass, budget);
        p.mass -= take;
        up.car_mass -= take;
        dn.car_mass += take;
        if (!dn.q.empty() && dn.q.back().cohort == p.cohort &&
            dn.q.back().leg == p.leg)
          dn.q.back().mass += take;
        else
          dn.q.push_back({p.cohort, p.leg, take});
        budget -= take;
        if (p.mass <= kMassEps)
          up.q.pop_front();
        else
          break;
      }
    }
  }
}

void Loader::buffer_phase() {
  for (size_t li = 0; li < links_.size(); ++li) {
    auto& L = links_[li];
    if (L.buffer.empty()) continue;
    auto& c0 = L.cells.front();
    double cap = L.cap_car_step * std::max(0.0, 1.0 - L.bus_usage[0]);
    double space = std::max(0.0, 1.0 - L.cell_occupancy(c0)) *
                   L.def->jam_car_per_mile * std::min(L.wdt_miles, c0.len);
    double budget = std::min(cap, space);
    while (budget > kMassEps && !L.buffer.empty()) {
      auto& p = L.buffer.front();
      double take = std::min(p.mass, budget);
      p.mass -= take;
      L.buffer_mass -= take;
      c0.car_mass += take;
      if (!c0.q.empty() && c0.q.back().cohort == p.cohort &&
          c0.q.back().leg == p.leg)
        c0.q.back().mass += take;
      else
        c0.q.push_back({p.cohort, p.leg, take});
      record_car_entry(static_cast<int>(li), p.cohort, take);
      budget -= take;
      if (p.mass <= kMassEps)
        L.buffer.pop_front();
      else
        break;
    }
  }
}

double Loader::board_from_queue(int vstop, double headroom, int st_idx,
                                std::vector<std::vector<OnboardGroup>>& onboard,
                                int line, double* service_sec,
                                double per_pass_sec) {
  auto& q = queues_[vstop];
  const auto& ln = net_.lines[line];
  double boarded = 0;
  while (headroom > kMassEps && !q.empty()) {
    auto& e = q.front();
    double take = std::min(e.mass, headroom);
    const auto& leg = net_.paths[pax_cohorts_[e.cohort].path].legs[e.leg];
    int alight_seq = -1;
    for (size_t s = 0; s < ln.stops.size(); ++s)
      if (ln.stops[s] == leg.alight_stop) alight_seq = static_cast<int>(s);
    auto& groups = onboard[alight_seq];
    bool merged = false;
    for (auto& g : groups)
      if (g.cohort == e.cohort && g.leg == e.leg) {
        g.mass += take;
        merged = true;
        break;
      }
    if (!merged) groups.push_back({e.cohort, e.leg, take});
    record_pt(e.cohort, 2 * st_idx, take);
    if (cfg_.record_trajectories)
      out_.events.push_back({now_end(), "board",
                             pax_cohorts_[e.cohort].path,
                             pax_cohorts_[e.cohort].dep, take,
                             net_.stops[vstop].id,
                             net_.stop_trips[st_idx].trip});
    boarded += take;
    headroom -= take;
    e.mass -= take;
    if (e.mass <= kMassEps) q.pop_front();
  }
  *service_sec += boarded * per_pass_sec;
  return boarded;
}

void Loader::alight_groups(std::vector<OnboardGroup>& groups, int st_idx,
                           double when) {
  for (auto& g : groups) {
    record_pt(g.cohort, 2 * st_idx + 1, g.mass);
    if (cfg_.record_trajectories)
      out_.events.push_back({when, "alight", pax_cohorts_[g.cohort].path,
                             pax_cohorts_[g.cohort].dep, g.mass,
                             net_.stops[net_.stop_trips[st_idx].stop].id,
                             net_.stop_trips[st_idx].trip});
    advance_pax({g.cohort, g.leg + 1, g.mass, when});
  }
  groups.clear();
}

void Loader::move_buses() {
  for (auto& bus : buses_) {
    if (bus.phase == BusAgent::Phase::Done ||
        bus.phase == BusAgent::Phase::Pending)
      continue;
    const auto& ln = net_.lines[bus.line];
    const auto& stop_mp = net_.line_stop_mileposts[bus.line];
    bus.boarded_this_step = false;

    if (bus.phase == BusAgent::Phase::Dwelling) {
      int seq = bus.dwell_stop_seq;
      int st = net_.stop_trip_index(bus.line, bus.trip, seq);
      double headroom = ln.vehicle_capacity - bus.onboard_total;
      double b = board_from_queue(ln.stops[seq], headroom, st, bus.onboard,
                                  bus.line, &bus.service_sec,
                                  cfg_.bus_board_sec);
      bus.onboard_total += b;
      if (b > kMassEps) bus.boarded_this_step = true;
      double ready = std::max(bus.dwell_arrival + cfg_.min_dwell_bus_sec,
                              bus.dwell_arrival + bus.service_sec);
      if (!bus.boarded_this_step && now_end() >= ready) {
        out_.stop_trip_departure[st] = ready;
        bus.phase = BusAgent::Phase::Driving;
        bus.next_stop = seq + 1;
        bus.dwell_stop_seq = -1;
      }
      continue;
    }

    // Driving: advance along the route on the congested speed field.
    double remaining = dt_;
    while (remaining > 1e-9 && bus.phase == BusAgent::Phase::Driving) {
      int rl = ln.route_links[bus.route_idx];
      auto& L = links_[rl];
      auto& cell = L.cells[bus.cell_idx];
      double v = L.cell_speed(cell, L.wdt_miles / dt_ * kSecondsPerHour);
      double v_mps = mph_to_miles_per_sec(v);
      if (v_mps <= 1e-12) break;
      double link_start = route_cum_[bus.line][bus.route_idx];
      double cell_start = link_start;
      for (int i = 0; i < bus.cell_idx; ++i)
        cell_start += L.cells[i].len;
      double cell_end = cell_start + cell.len;
      double target = cell_end;
      bool at_stop = false;
      if (bus.next_stop < static_cast<int>(stop_mp.size()) &&
          stop_mp[bus.next_stop] <= cell_end + 1e-12 &&
          stop_mp[bus.next_stop] > bus.pos + 1e-12) {
        target = stop_mp[bus.next_stop];
        at_stop = true;
      }
      if (bus.next_stop < static_cast<int>(stop_mp.size()) &&
          stop_mp[bus.next_stop] <= bus.pos + 1e-12) {
        target = bus.pos;
        at_stop = true;
      }
      double dist = target - bus.pos;
      double need = dist / v_mps;
      if (need > remaining) {
        bus.pos += v_mps * remaining;
        remaining = 0;
        break;
      }
      bus.pos = target;
      remaining -= need;
      double when = now_end() - remaining;
      if (at_stop) {
        int seq = bus.next_stop;
        int st = net_.stop_trip_index(bus.line, bus.trip, seq);
        out_.stop_trip_arrival[st] = when;
        bool alighters = !bus.onboard[seq].empty();
        bool waiting = !queues_[ln.stops[seq]].empty() &&
                       bus.onboard_total < ln.vehicle_capacity - kMassEps;
        if (alighters || waiting) {
          bus.phase = BusAgent::Phase::Dwelling;
          bus.dwell_stop_seq = seq;
          bus.dwell_arrival = when;
          bus.service_sec = 0;
          double alighted = 0;
          for (const auto& g : bus.onboard[seq]) alighted += g.mass;
          alight_groups(bus.onboard[seq], st, when);
          bus.onboard_total -= alighted;
          bus.service_sec += alighted * cfg_.bus_alight_sec;
          break;  // dwell logic resumes next step
        } else {
          out_.stop_trip_departure[st] = when;
          bus.next_stop = seq + 1;
          continue;
        }
      }
      // Crossing a cell boundary (possibly a node into the next route link).
      bool last_cell = bus.cell_idx + 1 == static_cast<int>(L.cells.size());
      if (!last_cell) {
        auto& nxt = L.cells[bus.cell_idx + 1];
        double occ = L.cell_occupancy(nxt);
        if (1.0 - occ < 1.0 / nxt.jam_bus) {
          remaining = 0;  // no room ahead, wait here
          break;
        }
        cell.bus_count -= 1;
        nxt.bus_count += 1;
        bus.cell_idx += 1;
        L.bus_usage_next[bus.cell_idx] += 1.0 / L.cap_bus_step;
      } else {
        if (bus.route_idx + 1 ==
            static_cast<int>(ln.route_links.size())) {
          cell.bus_count -= 1;
          L.bus_dep_bin[step_ + 1] += 1;
          L.bus_usage_next[L.cells.size()] += 1.0 / L.cap_bus_step;
          bus.phase = BusAgent::Phase::Done;
          out_.bus_arrived += 1;
          break;
        }
        int nrl = ln.route_links[bus.route_idx + 1];
        auto& NL = links_[nrl];
        auto& nxt = NL.cells[0];
        double occ = NL.cell_occupancy(nxt);
        if (1.0 - occ < 1.0 / nxt.jam_bus) {
          remaining = 0;
          break;
        }
        cell.bus_count -= 1;
        L.bus_dep_bin[step_ + 1] += 1;
        L.bus_usage_next[L.cells.size()] += 1.0 / L.cap_bus_step;
        nxt.bus_count += 1;
        NL.bus_arr_bin[step_ + 1] += 1;
        NL.bus_usage_next[0] += 1.0 / NL.cap_bus_step;
        bus.route_idx += 1;
        bus.cell_idx = 0;
      }
    }
  }
}

void Loader::move_metros() {
  for (auto& tr : metros_) {
    if (tr.phase == MetroAgent::Phase::Done ||
        tr.phase == MetroAgent::Phase::Pending)
      continue;
    const auto& ln = net_.lines[tr.line];
    tr.boarded_this_step = false;

    if (tr.phase == MetroAgent::Phase::InTransit) {
      double arr = tr.depart_time + ln.run_times_sec[tr.seq];
      if (arr > now_end()) continue;
      tr.seq += 1;
      tr.arrival = arr;
      tr.alighted = tr.boarded = 0;
      int st = net_.stop_trip_index(tr.line, tr.trip, tr.seq);
      out_.stop_trip_arrival[st] = arr;
      double alighted = 0;
      for (const auto& g : tr.onboard[tr.seq]) alighted += g.mass;
      alight_groups(tr.onboard[tr.seq], st, arr);
      tr.onboard_total -= alighted;
      tr.alighted = alighted;
      tr.phase = MetroAgent::Phase::AtStation;
      if (tr.seq + 1 == static_cast<int>(ln.stops.size())) {
        // terminal: no boarding, train leaves service after alighting
        out_.stop_trip_departure[st] =
            arr + std::ceil(tr.alighted / cfg_.metro_doors) *
                      cfg_.metro_alight_sec;
        tr.phase = MetroAgent::Phase::Done;
        continue;
      }
    }

    int st = net_.stop_trip_index(tr.line, tr.trip, tr.seq);
    double headroom = ln.vehicle_capacity - tr.onboard_total;
    double dummy = 0;
    double b = board_from_queue(ln.stops[tr.seq], headroom, st, tr.onboard,
                                tr.line, &dummy, 0.0);
    tr.onboard_total += b;
    tr.boarded += b;
    if (b > kMassEps) tr.boarded_this_step = true;

    double service =
        std::ceil(tr.boarded / cfg_.metro_doors) * cfg_.metro_board_sec +
        std::ceil(tr.alighted / cfg_.metro_doors) * cfg_.metro_alight_sec;
    double ready = tr.arrival + std::max(cfg_.min_dwell_metro_sec, service);
    if (tr.seq == 0)
      ready = std::max(ready, ln.trip_departures[tr.trip]);
    if (!tr.boarded_this_step && now_end() >= ready) {
      out_.stop_trip_departure[st] = ready;
      tr.depart_time = ready;
      tr.phase = MetroAgent::Phase::InTransit;
    }
  }
}

void Loader::record_occupancy(int k) {
  int h = interval_of_step(k);
  for (auto& L : links_) {
    double occ = 0;
    for (const auto& c : L.cells) occ += L.cell_occupancy(c) * c.len;
    L.occ_sum[h] += occ / L.def->length_miles;
  }
}

double Loader::step_inverse_integral(const std::vector<double>& cum, double c1,
                                     double c2, double dt) {
  double total = 0;
  for (size_t j = 1; j < cum.size(); ++j) {
    double lo = cum[j - 1], hi = cum[j];
    double o = std::min(hi, c2) - std::max(lo, c1);
    if (o > 0) total += j * dt * o;
    if (hi >= c2) break;
  }
  return total;
}

void Loader::finish() {
  // cumulative curves
  out_.car_cum_in.resize(links_.size());
  out_.car_cum_out.resize(links_.size());
  out_.bus_cum_in.resize(links_.size());
  out_.bus_cum_out.resize(links_.size());
  for (size_t li = 0; li < links_.size(); ++li) {
    auto& L = links_[li];
    auto cumsum = [](std::vector<double>& v) {
      for (size_t j = 1; j < v.size(); ++j) v[j] += v[j - 1];
    };
    cumsum(L.arr_bin);
    cumsum(L.dep_bin);
    cumsum(L.bus_arr_bin);
    cumsum(L.bus_dep_bin);
    out_.car_cum_in[li] = L.arr_bin;
    out_.car_cum_out[li] = L.dep_bin;
    out_.bus_cum_in[li] = L.bus_arr_bin;
    out_.bus_cum_out[li] = L.bus_dep_bin;
  }

  for (size_t li = 0; li < links_.size(); ++li) {
    auto& L = links_[li];
    double ff_min = L.def->free_flow_time_sec() / 60.0;
    for (int h = 0; h < nout_; ++h) {
      int k1 = h * spi_, k2 = (h + 1) * spi_;
      double a1 = L.arr_bin[k1], a2 = L.arr_bin[k2];
      double mass = a2 - a1;
      double tt_min = ff_min;
      if (mass > 1e-9) {
        double exited = std::min(a2, L.dep_bin[steps_]);
        if (exited > a1 + 1e-9) {
          double m = exited - a1;
          double td = step_inverse_integral(out_.car_cum_out[li], a1, exited,
                                            dt_);
          double ta = step_inverse_integral(out_.car_cum_in[li], a1, exited,
                                            dt_);
          tt_min = std::max(ff_min, (td - ta) / m / 60.0);
        } else {
          // nothing that entered this interval ever left within horizon
          tt_min = std::max(ff_min,
                            (cfg_.horizon_sec - (k1 * dt_)) / 60.0);
        }
      }
      out_.link_tt_min[out_.li(static_cast<int>(li), h)] = tt_min;
      double occ_avg = L.occ_sum[h] / spi_;
      out_.congested[out_.li(static_cast<int>(li), h)] =
          occ_avg > L.occ_crit ? 1 : 0;
    }
  }

  // in-network accounting
  for (const auto& L : links_) {
    double m = L.buffer_mass;
    for (const auto& c : L.cells) m += c.car_mass;
    out_.car_in_network += m;
  }
  for (const auto& b : buses_)
    if (b.phase != BusAgent::Phase::Done &&
        b.phase != BusAgent::Phase::Pending) {
      out_.bus_in_network += 1;
      out_.pax_in_network += b.onboard_total;
    }
  for (const auto& tr : metros_)
    if (tr.phase != MetroAgent::Phase::Done &&
        tr.phase != MetroAgent::Phase::Pending)
      out_.pax_in_network += tr.onboard_total;
  for (const auto& q : queues_)
    for (const auto& e : q) out_.pax_in_network += e.mass;
  for (const auto& bucket : buckets_)
    for (const auto& p : bucket) out_.pax_in_network += p.mass;
  for (const auto& p : beyond_horizon_) out_.pax_in_network += p.mass;
  out_.pax_in_network += pax_arrived_late_;

  // DAR extraction: consolidate tallies and normalize by cohort flow
  auto extract = [this](const DarTally& tally,
                        const std::vector<int>& group_paths, bool pt) {
    DarMatrix m;
    m.num_rows = pt ? 2 * out_.num_stop_trips
                    : out_.num_links * out_.num_intervals;
    const auto& cohorts_paths = group_paths;
    for (int p : cohorts_paths) {
      for (int t = 0; t < flows_.num_intervals; ++t) {
        int ci = pt ? pax_cohort_of_[cohort_key(p, t)]
                    : car_cohort_of_[cohort_key(p, t)];
        if (ci < 0) continue;
        double f = pt ? pax_cohorts_[ci].flow : car_cohorts_[ci].flow;
        auto entries = tally.per_cohort[ci];
        std::sort(entries.begin(), entries.end());
        std::vector<std::pair<int, double>> col;
        for (const auto& [row, mass] : entries) {
          if (!col.empty() && col.back().first == row)
            col.back().second += mass / f;
          else
            col.emplace_back(row, mass / f);
        }
        if (col.empty()) continue;
        m.col_path.push_back(p);
        m.col_dep.push_back(t);
        m.cols.push_back(std::move(col));
      }
    }
    return m;
  };
  out_.dar_car = extract(car_tally_, net_.car_paths, false);
  out_.dar_pnr_car = extract(car_tally_, net_.pnr_paths, false);
  out_.dar_pt = extract(pt_tally_, net_.pt_paths, true);
  out_.dar_pnr_pt = extract(pt_tally_, net_.pnr_paths, true);
}

DnlOutputs Loader::run() {
  build();
  for (step_ = 0; step_ < steps_; ++step_) {
    for (auto& L : links_) {
      std::swap(L.bus_usage, L.bus_usage_next);
      std::fill(L.bus_usage_next.begin(), L.bus_usage_next.end(), 0.0);
    }
    inject(step_);
    process_bucket(step_);
    spawn_vehicles(step_);
    node_phase();
    internal_phase();
    buffer_phase();
    move_buses();
    move_metros();
    record_occupancy(step_);
  }
  finish();
  return out_;
}

}  // namespace

void LoadingConfig::validate() const {
  if (loading_step_sec <= 0 || agg_interval_sec <= 0 || horizon_sec <= 0)
    throw ConfigError("loading times must be positive");
  double r1 = agg_interval_sec / loading_step_sec;
  if (std::abs(r1 - std::round(r1)) > 1e-9)
    throw ConfigError("loading step must divide the aggregation interval");
  double r2 = horizon_sec / agg_interval_sec;
  if (std::abs(r2 - std::round(r2)) > 1e-9)
    throw ConfigError("horizon must be a multiple of the aggregation interval");
  double r3 = demand_interval_sec / loading_step_sec;
  if (std::abs(r3 - std::round(r3)) > 1e-9)
    throw ConfigError("loading step must divide the demand interval");
}

DnlOutputs load(const MultiModalNetwork& net, const PathFlowVector& flows,
                const LoadingConfig& cfg) {
  cfg.validate();
  for (double f : flows.v)
    if (f < 0) throw ContractError("negative path flow");
  Loader loader(net, flows, cfg);
  return loader.run();
}

std::vector<double> travel_time_derivative(const DnlOutputs& out,
                                           const LoadingConfig& cfg) {
  std::vector<double> d(out.link_flow.size(), 0.0);
  double interval_min = cfg.agg_interval_sec / 60.0;
  for (size_t i = 0; i < d.size(); ++i) {
    if (!out.congested[i]) continue;
    double exit = out.exit_flow[i];
    d[i] = interval_min / std::max(exit, 1.0);
  }
  return d;
}

void write_trajectories(const std::vector<TrajectoryEvent>& events,
                        const MultiModalNetwork& net, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : events)
    rows.push_back({io::format_double(e.time_sec), e.kind,
                    net.paths[e.path].id, std::to_string(e.dep_interval),
                    io::format_double(e.mass), e.place,
                    std::to_string(e.trip)});
  io::write_tsv(path, {"time_sec", "event", "path", "dep_interval", "mass",
                       "place", "trip"},
                rows);
}

}  // namespace mmcal
