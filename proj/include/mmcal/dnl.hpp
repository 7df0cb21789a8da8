#ifndef MMCAL_DNL_HPP
#define MMCAL_DNL_HPP

#include <string>
#include <vector>

#include "mmcal/network.hpp"

namespace mmcal {

struct LoadingConfig {
  double loading_step_sec = 5;
  double agg_interval_sec = 900;     // output aggregation
  double horizon_sec = 3600;
  double demand_interval_sec = 900;  // departure-interval length
  double boarding_idle_sec = 5;      // queue gap that ends a dwell
  double bus_board_sec = 2.0;        // per passenger service times
  double bus_alight_sec = 1.5;
  double metro_board_sec = 1.0;
  double metro_alight_sec = 0.8;
  double min_dwell_bus_sec = 5;
  double min_dwell_metro_sec = 15;
  int metro_doors = 4;
  bool record_trajectories = false;

  void validate() const;
  int num_steps() const {
    return static_cast<int>(horizon_sec / loading_step_sec + 0.5);
  }
  int num_out_intervals() const {
    return static_cast<int>(horizon_sec / agg_interval_sec + 0.5);
  }
  int steps_per_interval() const {
    return static_cast<int>(agg_interval_sec / loading_step_sec + 0.5);
  }
};

// Path flows indexed by (path, departure interval).
struct PathFlowVector {
  int num_paths = 0;
  int num_intervals = 0;
  std::vector<double> v;  // path-major

  PathFlowVector() = default;
  PathFlowVector(int paths, int intervals)
      : num_paths(paths),
        num_intervals(intervals),
        v(static_cast<size_t>(paths) * intervals, 0.0) {}
  double& at(int p, int t) {
    return v[static_cast<size_t>(p) * num_intervals + t];
  }
  double at(int p, int t) const {
    return v[static_cast<size_t>(p) * num_intervals + t];
  }
};

// Column-compressed sparse matrix whose columns are (path, departure
// interval) pairs of one path group. Entries of one column sum to at most 1.
struct DarMatrix {
  int num_rows = 0;
  std::vector<int> col_path;  // column -> path index (global)
  std::vector<int> col_dep;   // column -> departure interval
  std::vector<std::vector<std::pair<int, double>>> cols;  // row-sorted

  int num_cols() const { return static_cast<int>(cols.size()); }
};

struct TrajectoryEvent {
  double time_sec;
  std::string kind;  // depart, link-entry, park, board, alight, arrive
  int path;
  int dep_interval;
  double mass;
  std::string place;  // link id, stop id, node id
  int trip = -1;
};

struct DnlOutputs {
  int num_links = 0;
  int num_intervals = 0;   // output intervals
  int num_stop_trips = 0;

  // Car-class link flow: vehicles entering the link per (link, interval).
  std::vector<double> link_flow;
  // Mean experienced car travel time in minutes per (link, interval);
  // free-flow time where no flow entered.
  std::vector<double> link_tt_min;
  // Boarding (even) / alighting (odd) passenger counts per stop-trip pair:
  // index 2*st + {0,1}.
  std::vector<double> pt_counts;

  DarMatrix dar_car, dar_pnr_car, dar_pt, dar_pnr_pt;

  std::vector<uint8_t> congested;   // per (link, interval)
  std::vector<double> exit_flow;    // cars leaving link head per interval

  // Realized transit trip events (clock seconds; +inf when not reached
  // within the horizon). Indexed like net.stop_trips.
  std::vector<double> stop_trip_arrival;
  std::vector<double> stop_trip_departure;

  // Conservation accounting (vehicles / passengers).
  double car_injected = 0, car_arrived = 0, car_in_network = 0;
  double bus_injected = 0, bus_arrived = 0, bus_in_network = 0;
  double pax_injected = 0, pax_arrived = 0, pax_in_network = 0;

  // Cumulative car arrival/departure counts per link at step boundaries
  // (size num_steps+1 each), kept for tests and diagnostics.
  std::vector<std::vector<double>> car_cum_in, car_cum_out;
  std::vector<std::vector<double>> bus_cum_in, bus_cum_out;

  std::vector<TrajectoryEvent> events;

  double free_flow_minutes(const MultiModalNetwork& net, int link) const {
    return net.links[link].free_flow_time_sec() / 60.0;
  }
  size_t li(int link, int interval) const {
    return static_cast<size_t>(link) * num_intervals + interval;
  }
};

// Runs the multi-modal loading: multi-class CTM for cars with scheduled
// buses and stop dwell, timetable metro, and passenger walking/queueing.
DnlOutputs load(const MultiModalNetwork& net, const PathFlowVector& flows,
                const LoadingConfig& cfg);

// Diagonal of dt/dx in minutes per vehicle: zero when the (link, interval)
// is uncongested, otherwise the aggregation interval divided by the exit
// flow, clamped at one interval per vehicle.
std::vector<double> travel_time_derivative(const DnlOutputs& out,
                                           const LoadingConfig& cfg);

void write_trajectories(const std::vector<TrajectoryEvent>& events,
                        const MultiModalNetwork& net, const std::string& path);

}  // namespace mmcal

#endif  // MMCAL_DNL_HPP
