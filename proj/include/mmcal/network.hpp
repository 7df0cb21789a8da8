#ifndef MMCAL_NETWORK_HPP
#define MMCAL_NETWORK_HPP

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmcal/types.hpp"

namespace mmcal {

struct AutoLink {
  std::string id;
  int from_node = -1;
  int to_node = -1;
  double length_miles = 0;
  double speed_mph = 0;
  double cap_car_vph = 0;   // road capacity for the car class
  double cap_bus_vph = 0;   // road capacity for the bus class
  double jam_car_per_mile = 0;
  double jam_bus_per_mile = 0;
  int lanes = 1;

  double free_flow_time_sec() const {
    return length_miles / speed_mph * kSecondsPerHour;
  }
};

struct Node {
  std::string id;
  double x = 0, y = 0;
  bool is_zone = false;     // origin/destination centroid
  bool is_parking = false;  // park-and-ride lot
};

struct TransitStop {
  std::string id;
  StopKind kind = StopKind::PhysicalBus;
  int parent_physical = -1;  // required for virtual stops
  int host_link = -1;        // bus virtual stops only
  double host_milepost = 0;  // position along host link, miles from tail
  double x = 0, y = 0;
  int line = -1;             // owning line, filled for virtual stops on load
};

struct WalkLink {
  std::string id;
  // Endpoints name either a node or a stop; exactly one interpretation must
  // resolve. Walking links are traversable in both directions.
  int from_node = -1, from_stop = -1;
  int to_node = -1, to_stop = -1;
  WalkCategory category = WalkCategory::OriginAccess;
  double length_miles = 0;
};

struct TransitLine {
  std::string id;
  bool is_metro = false;
  double vehicle_capacity = 0;           // passengers
  std::vector<int> stops;                // virtual stop indices, in order
  std::vector<double> trip_departures;   // clock seconds, strictly increasing
  std::vector<double> run_times_sec;     // metro only: size() == stops-1
  std::vector<int> route_links;          // bus only: driven link sequence
};

struct PathLeg {
  enum class Kind { Drive, Ride, Walk, Park };
  Kind kind = Kind::Drive;
  int link = -1;                       // Drive
  int line = -1, board_stop = -1, alight_stop = -1;  // Ride (virtual stops)
  int walk = -1;                       // Walk
  bool walk_forward = true;            // traversal direction of the walk link
  int park_node = -1;                  // Park
};

struct Path {
  std::string id;
  int od = -1;
  SubMode mode = SubMode::Car;
  std::vector<PathLeg> legs;
  double parking_fee = 0;  // tau, dollars
  double fare = 0;         // delta, dollars
};

struct OdPair {
  int origin = -1;
  int destination = -1;
  double median_income = 0;   // I^{rs}, taken from the origin zone
  double pop_density_o = 0;   // J^r
  double pop_density_d = 0;   // J^s
};

struct ZoneAttributes {
  int node = -1;
  double median_income = 0;
  double pop_density = 0;
  double parking_fee = 0;
  double pnr_parking_fee = 0;
};

struct NetworkSummary {
  int nodes = 0;
  int links = 0;
  int od_pairs = 0;
  int bus_lines = 0;
  int metro_lines = 0;
  int physical_stops = 0;
  int virtual_stops = 0;
  int stop_trip_pairs = 0;
  int walking_links = 0;
  int paths_driving = 0;
  int paths_transit = 0;
  int paths_pnr = 0;
  int parking_lots = 0;

  bool operator==(const NetworkSummary&) const = default;
};

// Identifies one stop served by one scheduled vehicle run. Boarding and
// alighting counts are observed at this granularity.
struct StopTripPair {
  int line = -1;
  int trip = -1;       // index into trip_departures
  int stop = -1;       // virtual stop index
  int stop_seq = -1;   // position within the line
};

class MultiModalNetwork {
 public:
  std::vector<Node> nodes;
  std::vector<AutoLink> links;
  std::vector<TransitStop> stops;
  std::vector<WalkLink> walks;
  std::vector<TransitLine> lines;
  std::vector<Path> paths;
  std::vector<OdPair> od_pairs;
  std::vector<ZoneAttributes> zones;
  double walk_speed_mph = 3.1;
  std::string name;

  // Derived on finalize().
  std::vector<StopTripPair> stop_trips;                 // A_pt, schedule order
  std::vector<std::vector<int>> paths_by_od;            // od -> path indices
  std::vector<std::vector<int>> out_links;              // node -> link indices
  std::vector<std::vector<int>> in_links;
  std::vector<int> car_paths, pt_paths, pnr_paths;      // path group indices
  // Per line: route milepost of each stop (bus: along route_links; metro:
  // cumulative scheduled position, informational only).
  std::vector<std::vector<double>> line_stop_mileposts;

  int node_index(const std::string& id) const;
  int link_index(const std::string& id) const;
  int stop_index(const std::string& id) const;
  int walk_index(const std::string& id) const;
  int line_index(const std::string& id) const;
  int path_index(const std::string& id) const;
  int od_index(int origin, int destination) const;

  // (line, trip, stop_seq) -> index into stop_trips, -1 if out of range.
  int stop_trip_index(int line, int trip, int stop_seq) const;

  // Cross-references ids, validates every structural invariant, and builds
  // the derived tables. Throws StructuralError / ValidationError.
  void finalize();

  NetworkSummary summary() const;

  double walk_time_sec(const WalkLink& w) const {
    return w.length_miles / walk_speed_mph * kSecondsPerHour;
  }

  // (xi_bus, xi_metro) for the path's second-level mode, derived from legs.
  std::pair<int, int> path_mode_indicators(const Path& p) const;

 private:
  void validate_path_connectivity(
      const Path& p, const std::function<void(const std::string&)>& fail) const;

  std::map<std::string, int> node_ids_, link_ids_, stop_ids_, walk_ids_,
      line_ids_, path_ids_;
  std::map<std::pair<int, int>, int> od_ids_;
  std::vector<int> stop_trip_offsets_;  // per line: offset into stop_trips
};

// Reads a bundle directory: links.tsv, stops.tsv, walks.tsv, lines.tsv,
// zones.tsv, paths.tsv, manifest. Column formats are documented in the
// repository README.
MultiModalNetwork load_network(const std::string& bundle_dir);

void save_network(const MultiModalNetwork& net, const std::string& bundle_dir);

}  // namespace mmcal

#endif  // MMCAL_NETWORK_HPP
