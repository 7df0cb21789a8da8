// Generates the Nguyen-Dupuis multi-modal fixture bundle: the classic
// 13-node/19-link road network with six bus lines, three metro lines,
// walking connectors and pre-enumerated path tables for all seven modes.
//
// The enumeration recipe is deterministic: driving paths are every simple
// path of the digraph; transit and park-and-ride paths are direct or
// one-transfer itineraries ranked by a free-flow time proxy and truncated
// by per-(O-D, mode) quotas.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mmcal/io.hpp"
#include "mmcal/network.hpp"

using namespace mmcal;

namespace {

struct XY {
  double x, y;
};

double dist(XY a, XY b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Gen {
  MultiModalNetwork net;
  std::map<std::string, int> node_of;
  std::vector<XY> node_xy;

  int add_node(const std::string& id, double x, double y, bool zone,
               bool parking) {
    net.nodes.push_back({id, x, y, zone, parking});
    node_of[id] = static_cast<int>(net.nodes.size() - 1);
    node_xy.push_back({x, y});
    return node_of[id];
  }

  int link_idx(const std::string& id) const {
    for (size_t i = 0; i < net.links.size(); ++i)
      if (net.links[i].id == id) return static_cast<int>(i);
    throw StructuralError("generator: unknown link " + id);
  }

  int add_link(const std::string& id, const std::string& a,
               const std::string& b, double len, double speed, double cc,
               double cb, double jc, double jb, int lanes) {
    AutoLink l;
    l.id = id;
    l.from_node = node_of[a];
    l.to_node = node_of[b];
    l.length_miles = len;
    l.speed_mph = speed;
    l.cap_car_vph = cc;
    l.cap_bus_vph = cb;
    l.jam_car_per_mile = jc;
    l.jam_bus_per_mile = jb;
    l.lanes = lanes;
    net.links.push_back(l);
    return static_cast<int>(net.links.size() - 1);
  }

  XY link_point(int link, double milepost) const {
    const auto& l = net.links[link];
    double f = milepost / l.length_miles;
    XY a = node_xy[l.from_node], b = node_xy[l.to_node];
    return {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)};
  }
};

struct BusStopSpec {
  std::string link;
  double milepost;
};

struct BusLineSpec {
  std::string id;
  std::vector<std::string> route;
  std::vector<BusStopSpec> stops;
};

struct MetroLineSpec {
  std::string id;
  std::vector<std::string> stations;  // physical station keys
  std::vector<double> run_times;
};

constexpr int kTripsPerLine = 30;
constexpr double kHeadwaySec = 180;
constexpr double kBusCapacity = 60;
constexpr double kMetroCapacity = 400;
constexpr double kFareBus = 0.5;
constexpr double kFareMetro = 1.0;
constexpr double kDetour = 1.2;  // walk distance = detour * euclidean

// Walking-link quotas per category (board-alight links are one per virtual
// stop); nearest candidates win. Totals must reach the published 220.
constexpr int kOriginAccessLinks = 96;
constexpr int kTransferLinks = 61;
constexpr int kParkingAccessLinks = 24;

}  // namespace

int main(int argc, char** argv) {
  std::string out_dir = argc > 1 ? argv[1] : "data/nguyen_dupuis";
  Gen g;
  g.net.name = "nguyen-dupuis";
  g.net.walk_speed_mph = 3.1;

  // --- nodes (zones 1..4, parking at 6) -------------------------------
  struct N {
    const char* id;
    double x, y;
    bool zone, park;
  };
  const N nodes[] = {
      {"1", 0.6, 1.8, true, false}, {"2", 2.4, 0.6, true, false},
      {"3", 1.8, 0.0, true, false}, {"4", 0.0, 1.2, true, false},
      {"5", 0.6, 1.2, false, false}, {"6", 1.2, 1.2, false, true},
      {"7", 1.8, 1.2, false, false}, {"8", 2.4, 1.2, false, false},
      {"9", 0.6, 0.6, false, false}, {"10", 1.2, 0.6, false, false},
      {"11", 1.8, 0.6, false, false}, {"12", 1.8, 1.8, false, false},
      {"13", 0.6, 0.0, false, false},
  };
  for (const auto& n : nodes) g.add_node(n.id, n.x, n.y, n.zone, n.park);

  // --- links (published characteristics) ------------------------------
  struct L {
    const char* id;
    const char* a;
    const char* b;
    double len, spd, cc, jc, cb, jb;
    int lanes;
  };
  const L links[] = {
      {"1", "1", "5", 0.6, 30, 900, 250, 700, 200, 1},
      {"2", "1", "12", 0.6, 30, 900, 250, 700, 200, 1},
      {"3", "4", "5", 0.6, 30, 900, 250, 700, 200, 1},
      {"4", "4", "9", 1.2, 40, 1200, 250, 1000, 200, 2},
      {"5", "5", "6", 0.6, 30, 900, 250, 700, 200, 1},
      {"6", "5", "9", 0.6, 30, 900, 250, 700, 200, 1},
      {"7", "6", "7", 0.6, 30, 900, 250, 700, 200, 1},
      {"8", "6", "10", 1.2, 40, 1200, 250, 1000, 200, 2},
      {"9", "7", "8", 0.6, 30, 900, 250, 700, 200, 1},
      {"10", "7", "11", 2.0, 50, 1600, 250, 1400, 200, 2},
      {"11", "8", "2", 0.6, 30, 900, 250, 700, 200, 1},
      {"12", "9", "10", 0.6, 30, 900, 250, 700, 200, 1},
      {"13", "9", "13", 0.6, 30, 900, 250, 700, 200, 1},
      {"14", "10", "11", 0.6, 30, 900, 250, 700, 200, 1},
      {"15", "11", "2", 0.6, 30, 900, 250, 700, 200, 1},
      {"16", "11", "3", 0.6, 30, 900, 250, 700, 200, 1},
      {"17", "12", "6", 0.6, 30, 900, 250, 700, 200, 1},
      {"18", "12", "8", 0.6, 30, 900, 250, 700, 200, 1},
      {"19", "13", "3", 0.6, 30, 900, 250, 700, 200, 1},
  };
  for (const auto& l : links)
    g.add_link(l.id, l.a, l.b, l.len, l.spd, l.cc, l.cb, l.jc, l.jb, l.lanes);

  // --- zones (published attributes) ------------------------------------
  auto zone = [&](const char* node, double inc, double dens, double pf,
                  double pnr) {
    g.net.zones.push_back({g.node_of[node], inc, dens, pf, pnr});
  };
  zone("1", 20, 21, 10, 3);
  zone("2", 18, 22, 10, 3);
  zone("3", 22, 18, 10, 3);
  zone("4", 25, 15, 10, 3);
  zone("6", 0, 0, 0, 3);

  // --- bus stops and lines ---------------------------------------------
  // Shared locations: l5@0.3 and l7@0.3 (B1,B5); l14@0.3 (B2,B3,B6);
  // l15@0.3 (B2,B5,B6); l2@0.3 and l17@0.4 (B3,B6). 26 virtual stops on
  // 18 physical ones.
  const BusLineSpec bus_lines[] = {
      {"B1",
       {"1", "5", "7", "9", "11"},
       {{"1", 0.3}, {"5", 0.3}, {"7", 0.3}, {"9", 0.3}, {"11", 0.3}}},
      {"B2",
       {"3", "6", "12", "14", "15"},
       {{"3", 0.3}, {"6", 0.3}, {"12", 0.3}, {"14", 0.3}, {"15", 0.3}}},
      {"B3",
       {"2", "17", "8", "14", "16"},
       {{"2", 0.3}, {"17", 0.4}, {"14", 0.3}, {"16", 0.3}}},
      {"B4",
       {"4", "13", "19"},
       {{"4", 0.4}, {"4", 0.9}, {"13", 0.3}, {"19", 0.3}}},
      {"B5",
       {"5", "7", "10", "15"},
       {{"5", 0.3}, {"7", 0.3}, {"10", 0.3}, {"15", 0.3}}},
      {"B6",
       {"2", "17", "8", "14", "15"},
       {{"2", 0.3}, {"17", 0.4}, {"14", 0.3}, {"15", 0.3}}},
  };

  std::map<std::string, int> phys_bus;  // "link@mp" -> physical stop index
  int ps_count = 0;
  for (const auto& spec : bus_lines) {
    TransitLine ln;
    ln.id = spec.id;
    ln.is_metro = false;
    ln.vehicle_capacity = kBusCapacity;
    for (const auto& rl : spec.route)
      ln.route_links.push_back(g.link_idx(rl));
    for (size_t s = 0; s < spec.stops.size(); ++s) {
      const auto& st = spec.stops[s];
      int link = g.link_idx(st.link);
      char key[32];
      std::snprintf(key, sizeof(key), "%s@%.2f", st.link.c_str(),
                    st.milepost);
      XY pos = g.link_point(link, st.milepost);
      int parent;
      auto it = phys_bus.find(key);
      if (it == phys_bus.end()) {
        TransitStop ps;
        ps.id = "PS" + std::to_string(++ps_count);
        ps.kind = StopKind::PhysicalBus;
        ps.x = pos.x;
        ps.y = pos.y;
        g.net.stops.push_back(ps);
        parent = static_cast<int>(g.net.stops.size() - 1);
        phys_bus[key] = parent;
      } else {
        parent = it->second;
      }
      TransitStop vs;
      vs.id = spec.id + "S" + std::to_string(s + 1);
      vs.kind = StopKind::VirtualBus;
      vs.parent_physical = parent;
      vs.host_link = link;
      vs.host_milepost = st.milepost;
      vs.x = pos.x;
      vs.y = pos.y;
      g.net.stops.push_back(vs);
      ln.stops.push_back(static_cast<int>(g.net.stops.size() - 1));
    }
    for (int t = 0; t < kTripsPerLine; ++t)
      ln.trip_departures.push_back(t * kHeadwaySec);
    g.net.lines.push_back(std::move(ln));
  }

  // --- metro stations and lines ----------------------------------------
  const struct {
    const char* key;
    double x, y;
  } stations[] = {
      {"MA", 0.55, 1.72}, {"MB", 0.66, 1.14}, {"MC", 0.55, 0.52},
      {"MD", 0.66, 0.06}, {"ME", 1.74, 0.08}, {"MF", 0.06, 1.26},
      {"MG", 1.26, 1.14}, {"MH", 1.86, 1.26}, {"MI", 1.14, 0.52},
  };
  std::map<std::string, int> pm_of;
  int pm_count = 0;
  for (const auto& s : stations) {
    TransitStop ps;
    ps.id = "PM" + std::to_string(++pm_count);
    ps.kind = StopKind::PhysicalMetro;
    ps.x = s.x;
    ps.y = s.y;
    g.net.stops.push_back(ps);
    pm_of[s.key] = static_cast<int>(g.net.stops.size() - 1);
  }
  const MetroLineSpec metro_lines[] = {
      {"M1", {"MA", "MB", "MC", "MD", "ME"}, {150, 150, 150, 240}},
      {"M2", {"MF", "MB", "MG", "MH"}, {150, 150, 150}},
      {"M3", {"MB", "MG", "MI", "ME"}, {150, 180, 260}},
  };
  for (const auto& spec : metro_lines) {
    TransitLine ln;
    ln.id = spec.id;
    ln.is_metro = true;
    ln.vehicle_capacity = kMetroCapacity;
    ln.run_times_sec = spec.run_times;
    for (size_t s = 0; s < spec.stations.size(); ++s) {
      int parent = pm_of[spec.stations[s]];
      TransitStop vm;
      vm.id = spec.id + "S" + std::to_string(s + 1);
      vm.kind = StopKind::VirtualMetro;
      vm.parent_physical = parent;
      vm.x = g.net.stops[parent].x;
      vm.y = g.net.stops[parent].y;
      g.net.stops.push_back(vm);
      ln.stops.push_back(static_cast<int>(g.net.stops.size() - 1));
    }
    for (int t = 0; t < kTripsPerLine; ++t)
      ln.trip_departures.push_back(t * kHeadwaySec);
    g.net.lines.push_back(std::move(ln));
  }

  // --- walking links ----------------------------------------------------
  int walk_count = 0;
  auto add_walk = [&](int from_node, int from_stop, int to_node, int to_stop,
                      WalkCategory cat, double len) {
    WalkLink w;
    w.id = "W" + std::to_string(++walk_count);
    w.from_node = from_node;
    w.from_stop = from_stop;
    w.to_node = to_node;
    w.to_stop = to_stop;
    w.category = cat;
    w.length_miles = std::max(0.02, len);
    g.net.walks.push_back(w);
    return static_cast<int>(g.net.walks.size() - 1);
  };

  // board-alight: one per virtual stop
  for (size_t si = 0; si < g.net.stops.size(); ++si) {
    const auto& s = g.net.stops[si];
    if (!is_virtual(s.kind)) continue;
    add_walk(-1, s.parent_physical, -1, static_cast<int>(si),
             WalkCategory::BoardAlight, 0.02);
  }

  auto stop_xy = [&](int si) { return XY{g.net.stops[si].x, g.net.stops[si].y}; };
  std::vector<int> physical;
  for (size_t si = 0; si < g.net.stops.size(); ++si)
    if (!is_virtual(g.net.stops[si].kind)) physical.push_back((int)si);

  struct Cand {
    double d;
    int a_node, a_stop, b_stop;
  };
  // zone access
  {
    std::vector<Cand> cands;
    for (const auto& z : {"1", "2", "3", "4"})
      for (int ps : physical) {
        double d = dist(g.node_xy[g.node_of[z]], stop_xy(ps));
        cands.push_back({d, g.node_of[z], -1, ps});
      }
    std::sort(cands.begin(), cands.end(),
              [](const Cand& a, const Cand& b) {
                return a.d != b.d ? a.d < b.d
                                  : std::tie(a.a_node, a.b_stop) <
                                        std::tie(b.a_node, b.b_stop);
              });
    for (int i = 0; i < kOriginAccessLinks; ++i)
      add_walk(cands[i].a_node, -1, -1, cands[i].b_stop,
               WalkCategory::OriginAccess, cands[i].d * kDetour);
  }
  // transfers between physical stops
  {
    std::vector<Cand> cands;
    for (size_t i = 0; i < physical.size(); ++i)
      for (size_t j = i + 1; j < physical.size(); ++j) {
        double d = dist(stop_xy(physical[i]), stop_xy(physical[j]));
        cands.push_back({d, -1, physical[i], physical[j]});
      }
    std::sort(cands.begin(), cands.end(),
              [](const Cand& a, const Cand& b) {
                return a.d != b.d ? a.d < b.d
                                  : std::tie(a.a_stop, a.b_stop) <
                                        std::tie(b.a_stop, b.b_stop);
              });
    for (int i = 0; i < kTransferLinks; ++i)
      add_walk(-1, cands[i].a_stop, -1, cands[i].b_stop,
               WalkCategory::Transfer, cands[i].d * kDetour);
  }
  // parking access from node 6
  {
    std::vector<Cand> cands;
    for (int ps : physical) {
      double d = dist(g.node_xy[g.node_of["6"]], stop_xy(ps));
      cands.push_back({d, g.node_of["6"], -1, ps});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      return a.d != b.d ? a.d < b.d : a.b_stop < b.b_stop;
    });
    for (int i = 0; i < kParkingAccessLinks; ++i)
      add_walk(cands[i].a_node, -1, -1, cands[i].b_stop,
               WalkCategory::ParkingAccess, cands[i].d * kDetour);
  }

  std::printf("walk links: %zu\n", g.net.walks.size());

  // --- O-D pairs --------------------------------------------------------
  const std::pair<const char*, const char*> ods[] = {
      {"1", "2"}, {"1", "3"}, {"4", "2"}, {"4", "3"}};
  for (const auto& [o, d] : ods) {
    OdPair p;
    p.origin = g.node_of[o];
    p.destination = g.node_of[d];
    for (const auto& z : g.net.zones) {
      if (z.node == p.origin) {
        p.median_income = z.median_income;
        p.pop_density_o = z.pop_density;
      }
      if (z.node == p.destination) p.pop_density_d = z.pop_density;
    }
    g.net.od_pairs.push_back(p);
  }

  // --- driving paths: every simple path --------------------------------
  int path_count = 0;
  auto new_path = [&](int od, SubMode mode, std::vector<PathLeg> legs,
                      double tau, double fare) {
    Path p;
    p.id = "P" + std::to_string(++path_count);
    p.od = od;
    p.mode = mode;
    p.legs = std::move(legs);
    p.parking_fee = tau;
    p.fare = fare;
    g.net.paths.push_back(std::move(p));
  };

  int n_drive = 0;
  for (size_t od = 0; od < g.net.od_pairs.size(); ++od) {
    int origin = g.net.od_pairs[od].origin;
    int dest = g.net.od_pairs[od].destination;
    std::vector<std::vector<int>> found;
    std::vector<int> stack;
    std::vector<char> visited(g.net.nodes.size(), 0);
    std::function<void(int)> dfs = [&](int node) {
      if (node == dest) {
        found.push_back(stack);
        return;
      }
      visited[node] = 1;
      for (size_t li = 0; li < g.net.links.size(); ++li) {
        if (g.net.links[li].from_node != node) continue;
        if (visited[g.net.links[li].to_node]) continue;
        stack.push_back(static_cast<int>(li));
        dfs(g.net.links[li].to_node);
        stack.pop_back();
      }
      visited[node] = 0;
    };
    dfs(origin);
    std::sort(found.begin(), found.end());
    for (const auto& seq : found) {
      std::vector<PathLeg> legs;
      for (int li : seq) {
        PathLeg l;
        l.kind = PathLeg::Kind::Drive;
        l.link = li;
        legs.push_back(l);
      }
      // parking at the destination zone
      new_path(static_cast<int>(od), SubMode::Car, std::move(legs), 10.0,
               0.0);
      ++n_drive;
    }
  }
  std::printf("driving paths: %d\n", n_drive);

  // --- transit and PNR enumeration --------------------------------------
  const double walk_speed_mps = g.net.walk_speed_mph / 3600.0;  // miles/sec

  // access/egress walk links by zone node; transfer links by stop
  std::map<int, std::vector<int>> access_by_node;   // node -> walk idx
  std::map<int, std::vector<int>> transfer_by_stop; // physical stop -> walk
  for (size_t wi = 0; wi < g.net.walks.size(); ++wi) {
    const auto& w = g.net.walks[wi];
    if (w.category == WalkCategory::OriginAccess ||
        w.category == WalkCategory::ParkingAccess)
      access_by_node[w.from_node].push_back(static_cast<int>(wi));
    if (w.category == WalkCategory::Transfer) {
      transfer_by_stop[w.from_stop].push_back(static_cast<int>(wi));
      transfer_by_stop[w.to_stop].push_back(static_cast<int>(wi));
    }
  }
  // board-alight link per virtual stop
  std::map<int, int> ba_of;
  for (size_t wi = 0; wi < g.net.walks.size(); ++wi)
    if (g.net.walks[wi].category == WalkCategory::BoardAlight)
      ba_of[g.net.walks[wi].to_stop] = static_cast<int>(wi);
  // virtual stops per physical
  std::map<int, std::vector<int>> virt_of;
  for (size_t si = 0; si < g.net.stops.size(); ++si)
    if (is_virtual(g.net.stops[si].kind))
      virt_of[g.net.stops[si].parent_physical].push_back((int)si);
  // line/stop sequence lookup
  auto seq_of = [&](int line, int stop) {
    const auto& st = g.net.lines[line].stops;
    for (size_t s = 0; s < st.size(); ++s)
      if (st[s] == stop) return static_cast<int>(s);
    return -1;
  };
  // free-flow proxy ride time between stop sequences, seconds
  auto ride_proxy = [&](int line, int b, int a) {
    const auto& ln = g.net.lines[line];
    if (ln.is_metro) {
      double t = 0;
      for (int s = b; s < a; ++s) t += ln.run_times_sec[s] + 20;
      return t;
    }
    double t = 0;
    const auto& mp = g.net.line_stop_mileposts;
    (void)mp;  // mileposts need finalize; use euclidean fallback
    XY pa = stop_xy(ln.stops[b]), pb = stop_xy(ln.stops[a]);
    t = dist(pa, pb) / 25.0 * 3600.0 + (a - b) * 15.0;
    return t;
  };

  struct TransitLegs {
    std::vector<PathLeg> legs;  // from first board-alight to last egress walk
    double proxy_sec = 0;
    int boardings_bus = 0, boardings_metro = 0;
    std::string signature;
  };

  // Itineraries from a starting walk-access point (a zone or the parking
  // node) to a destination zone: direct rides and one-transfer chains.
  auto enumerate_transit = [&](int start_node, int dest_node) {
    std::vector<TransitLegs> result;
    for (int aw : access_by_node[start_node]) {
      const auto& w0 = g.net.walks[aw];
      int ps_a = w0.to_stop;
      double walk0 = w0.length_miles / walk_speed_mps;
      for (int va : virt_of[ps_a]) {
        int line1 = g.net.stops[va].line;
        // `line` is only filled by finalize(); resolve by scanning
        for (size_t li = 0; li < g.net.lines.size(); ++li)
          for (int s : g.net.lines[li].stops)
            if (s == va) line1 = static_cast<int>(li);
        int bseq = seq_of(line1, va);
        const auto& ln1 = g.net.lines[line1];
        for (int aseq = bseq + 1; aseq < (int)ln1.stops.size(); ++aseq) {
          int vb = ln1.stops[aseq];
          int ps_b = g.net.stops[vb].parent_physical;
          // direct: egress from ps_b to dest
          for (int ew : access_by_node[dest_node]) {
            if (g.net.walks[ew].to_stop != ps_b) continue;
            TransitLegs t;
            t.legs = {};
            PathLeg w_in;
            w_in.kind = PathLeg::Kind::Walk;
            w_in.walk = aw;
            t.legs.push_back(w_in);
            PathLeg ba_in;
            ba_in.kind = PathLeg::Kind::Walk;
            ba_in.walk = ba_of[va];
            t.legs.push_back(ba_in);
            PathLeg ride;
            ride.kind = PathLeg::Kind::Ride;
            ride.line = line1;
            ride.board_stop = va;
            ride.alight_stop = vb;
            t.legs.push_back(ride);
            PathLeg ba_out;
            ba_out.kind = PathLeg::Kind::Walk;
            ba_out.walk = ba_of[vb];
            ba_out.walk_forward = false;
            t.legs.push_back(ba_out);
            PathLeg w_out;
            w_out.kind = PathLeg::Kind::Walk;
            w_out.walk = ew;
            w_out.walk_forward = false;
            t.legs.push_back(w_out);
            t.proxy_sec = walk0 * 2 +
                          g.net.walks[ew].length_miles / walk_speed_mps * 2 +
                          ride_proxy(line1, bseq, aseq) + 60;
            (ln1.is_metro ? t.boardings_metro : t.boardings_bus)++;
            t.signature = std::to_string(aw) + "/" + std::to_string(va) +
                          "-" + std::to_string(vb) + "/" +
                          std::to_string(ew);
            result.push_back(std::move(t));
          }
          // one transfer: ps_b -> ps_c (same physical or transfer link)
          auto try_second = [&](int ps_c, int tw /*-1 same stop*/) {
            for (int vc : virt_of[ps_c]) {
              int line2 = -1;
              for (size_t li = 0; li < g.net.lines.size(); ++li)
                for (int s : g.net.lines[li].stops)
                  if (s == vc) line2 = static_cast<int>(li);
              if (line2 == line1) continue;
              int bseq2 = seq_of(line2, vc);
              const auto& ln2 = g.net.lines[line2];
              for (int aseq2 = bseq2 + 1; aseq2 < (int)ln2.stops.size();
                   ++aseq2) {
                int vd = ln2.stops[aseq2];
                int ps_d = g.net.stops[vd].parent_physical;
                for (int ew : access_by_node[dest_node]) {
                  if (g.net.walks[ew].to_stop != ps_d) continue;
                  TransitLegs t;
                  PathLeg leg;
                  leg.kind = PathLeg::Kind::Walk;
                  leg.walk = aw;
                  t.legs.push_back(leg);
                  leg.walk = ba_of[va];
                  t.legs.push_back(leg);
                  PathLeg ride1;
                  ride1.kind = PathLeg::Kind::Ride;
                  ride1.line = line1;
                  ride1.board_stop = va;
                  ride1.alight_stop = vb;
                  t.legs.push_back(ride1);
                  PathLeg out1;
                  out1.kind = PathLeg::Kind::Walk;
                  out1.walk = ba_of[vb];
                  out1.walk_forward = false;
                  t.legs.push_back(out1);
                  double transfer_walk = 0;
                  if (tw >= 0) {
                    PathLeg tr;
                    tr.kind = PathLeg::Kind::Walk;
                    tr.walk = tw;
                    tr.walk_forward = g.net.walks[tw].from_stop == ps_b;
                    t.legs.push_back(tr);
                    transfer_walk =
                        g.net.walks[tw].length_miles / walk_speed_mps;
                  }
                  PathLeg in2;
                  in2.kind = PathLeg::Kind::Walk;
                  in2.walk = ba_of[vc];
                  t.legs.push_back(in2);
                  PathLeg ride2;
                  ride2.kind = PathLeg::Kind::Ride;
                  ride2.line = line2;
                  ride2.board_stop = vc;
                  ride2.alight_stop = vd;
                  t.legs.push_back(ride2);
                  PathLeg out2;
                  out2.kind = PathLeg::Kind::Walk;
                  out2.walk = ba_of[vd];
                  out2.walk_forward = false;
                  t.legs.push_back(out2);
                  PathLeg w_out;
                  w_out.kind = PathLeg::Kind::Walk;
                  w_out.walk = ew;
                  w_out.walk_forward = false;
                  t.legs.push_back(w_out);
                  t.proxy_sec =
                      walk0 * 2 + transfer_walk * 2 +
                      g.net.walks[ew].length_miles / walk_speed_mps * 2 +
                      ride_proxy(line1, bseq, aseq) +
                      ride_proxy(line2, bseq2, aseq2) + 120 + 300;
                  (ln1.is_metro ? t.boardings_metro : t.boardings_bus)++;
                  (ln2.is_metro ? t.boardings_metro : t.boardings_bus)++;
                  t.signature = std::to_string(aw) + "/" +
                                std::to_string(va) + "-" +
                                std::to_string(vb) + "/" +
                                std::to_string(tw) + "/" +
                                std::to_string(vc) + "-" +
                                std::to_string(vd) + "/" +
                                std::to_string(ew);
                  result.push_back(std::move(t));
                }
              }
            }
          };
          try_second(ps_b, -1);
          for (int tw : transfer_by_stop[ps_b]) {
            const auto& w = g.net.walks[tw];
            int other = w.from_stop == ps_b ? w.to_stop : w.from_stop;
            try_second(other, tw);
          }
        }
      }
    }
    std::sort(result.begin(), result.end(),
              [](const TransitLegs& a, const TransitLegs& b) {
                return a.proxy_sec != b.proxy_sec
                           ? a.proxy_sec < b.proxy_sec
                           : a.signature < b.signature;
              });
    // dedupe by signature
    std::set<std::string> seen;
    std::vector<TransitLegs> unique;
    for (auto& t : result)
      if (seen.insert(t.signature).second) unique.push_back(std::move(t));
    return unique;
  };

  // quotas per (od, second-level mode); tuned to the published totals
  std::map<std::pair<int, int>, int> quota;
  auto set_quota = [&](int od, SubMode m, int n) {
    quota[{od, static_cast<int>(m)}] = n;
  };
  for (int od = 0; od < 4; ++od) {
    set_quota(od, SubMode::Bus, 18);
    set_quota(od, SubMode::Metro, 8);
    set_quota(od, SubMode::BusMetro, od == 3 ? 19 : 18);
    set_quota(od, SubMode::CarBus, 8);
    set_quota(od, SubMode::CarMetro, 6);
    set_quota(od, SubMode::CarBusMetro, 7);
  }

  int n_transit = 0, n_pnr = 0;
  std::map<std::string, int> pool_report;
  for (size_t od = 0; od < g.net.od_pairs.size(); ++od) {
    int origin = g.net.od_pairs[od].origin;
    int dest = g.net.od_pairs[od].destination;
    auto itineraries = enumerate_transit(origin, dest);
    std::map<int, int> taken;
    for (const auto& t : itineraries) {
      SubMode m;
      if (t.boardings_bus && t.boardings_metro)
        m = SubMode::BusMetro;
      else if (t.boardings_metro)
        m = SubMode::Metro;
      else
        m = SubMode::Bus;
      pool_report[std::string("od") + std::to_string(od) + ":" +
                  to_string(m)]++;
      int cap = quota[{(int)od, (int)m}];
      if (taken[(int)m] >= cap) continue;
      taken[(int)m]++;
      double fare = t.boardings_bus * kFareBus + t.boardings_metro * kFareMetro;
      new_path((int)od, m, t.legs, 0.0, fare);
      ++n_transit;
    }

    // park-and-ride: simple car paths to node 6, then transit onwards
    std::vector<std::vector<int>> car_part;
    {
      std::vector<int> stack;
      std::vector<char> visited(g.net.nodes.size(), 0);
      int park = g.node_of["6"];
      std::function<void(int)> dfs = [&](int node) {
        if (node == park) {
          car_part.push_back(stack);
          return;
        }
        visited[node] = 1;
        for (size_t li = 0; li < g.net.links.size(); ++li) {
          if (g.net.links[li].from_node != node) continue;
          if (visited[g.net.links[li].to_node]) continue;
          if ((int)stack.size() >= 3) continue;  // keep access legs short
          stack.push_back((int)li);
          dfs(g.net.links[li].to_node);
          stack.pop_back();
        }
        visited[node] = 0;
      };
      dfs(origin);
      std::sort(car_part.begin(), car_part.end());
    }
    auto onward = enumerate_transit(g.node_of["6"], dest);
    struct PnrCand {
      double proxy;
      std::string sig;
      std::vector<PathLeg> legs;
      SubMode m;
      double fare;
    };
    std::vector<PnrCand> pnr;
    for (const auto& seq : car_part) {
      double car_proxy = 0;
      for (int li : seq)
        car_proxy += g.net.links[li].free_flow_time_sec();
      for (const auto& t : onward) {
        PnrCand c;
        c.proxy = car_proxy + t.proxy_sec + 120;
        c.m = t.boardings_metro && t.boardings_bus ? SubMode::CarBusMetro
             : t.boardings_metro                   ? SubMode::CarMetro
                                                   : SubMode::CarBus;
        c.fare = t.boardings_bus * kFareBus + t.boardings_metro * kFareMetro;
        for (int li : seq) {
          PathLeg l;
          l.kind = PathLeg::Kind::Drive;
          l.link = li;
          c.legs.push_back(l);
        }
        PathLeg park;
        park.kind = PathLeg::Kind::Park;
        park.park_node = g.node_of["6"];
        c.legs.push_back(park);
        c.legs.insert(c.legs.end(), t.legs.begin(), t.legs.end());
        c.sig = "car";
        for (int li : seq) c.sig += "-" + g.net.links[li].id;
        c.sig += "/" + t.signature;
        pnr.push_back(std::move(c));
      }
    }
    std::sort(pnr.begin(), pnr.end(), [](const PnrCand& a, const PnrCand& b) {
      return a.proxy != b.proxy ? a.proxy < b.proxy : a.sig < b.sig;
    });
    std::map<int, int> taken_pnr;
    for (const auto& c : pnr) {
      pool_report[std::string("od") + std::to_string(od) + ":" +
                  to_string(c.m)]++;
      int cap = quota[{(int)od, (int)c.m}];
      if (taken_pnr[(int)c.m] >= cap) continue;
      taken_pnr[(int)c.m]++;
      new_path((int)od, c.m, c.legs, 3.0, c.fare);
      ++n_pnr;
    }
  }
  std::printf("transit paths: %d, pnr paths: %d\n", n_transit, n_pnr);
  for (const auto& [k, v] : pool_report)
    std::printf("  pool %-18s %d\n", k.c_str(), v);

  g.net.finalize();
  auto s = g.net.summary();
  std::printf(
      "summary: nodes=%d links=%d od=%d bus=%d metro=%d ps=%d vs=%d "
      "st=%d walks=%d drive=%d transit=%d pnr=%d park=%d\n",
      s.nodes, s.links, s.od_pairs, s.bus_lines, s.metro_lines,
      s.physical_stops, s.virtual_stops, s.stop_trip_pairs, s.walking_links,
      s.paths_driving, s.paths_transit, s.paths_pnr, s.parking_lots);

  save_network(g.net, out_dir);
  std::printf("bundle written to %s\n", out_dir.c_str());
  return 0;
}
