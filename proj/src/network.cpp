#include "mmcal/network.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "mmcal/io.hpp"

namespace mmcal {

const char* to_string(TopMode m) {
  switch (m) {
    case TopMode::Driving: return "driving";
    case TopMode::Transit: return "transit";
    default: return "pnr";
  }
}

const char* to_string(SubMode g) {
  switch (g) {
    case SubMode::Car: return "car";
    case SubMode::Bus: return "bus";
    case SubMode::Metro: return "metro";
    case SubMode::BusMetro: return "bus+metro";
    case SubMode::CarBus: return "car+bus";
    case SubMode::CarMetro: return "car+metro";
    default: return "car+bus+metro";
  }
}

SubMode submode_from_string(const std::string& s) {
  for (int i = 0; i < kNumSubModes; ++i) {
    SubMode g = static_cast<SubMode>(i);
    if (s == to_string(g)) return g;
  }
  throw StructuralError("unknown mode '" + s + "'");
}

const char* to_string(StopKind k) {
  switch (k) {
    case StopKind::PhysicalBus: return "physical-bus";
    case StopKind::VirtualBus: return "virtual-bus";
    case StopKind::PhysicalMetro: return "physical-metro";
    default: return "virtual-metro";
  }
}

StopKind stop_kind_from_string(const std::string& s) {
  for (int i = 0; i < 4; ++i) {
    StopKind k = static_cast<StopKind>(i);
    if (s == to_string(k)) return k;
  }
  throw StructuralError("unknown stop kind '" + s + "'");
}

const char* to_string(WalkCategory c) {
  switch (c) {
    case WalkCategory::OriginAccess: return "origin-access";
    case WalkCategory::Transfer: return "transfer";
    case WalkCategory::ParkingAccess: return "parking-access";
    default: return "board-alight";
  }
}

WalkCategory walk_category_from_string(const std::string& s) {
  for (int i = 0; i < 4; ++i) {
    WalkCategory c = static_cast<WalkCategory>(i);
    if (s == to_string(c)) return c;
  }
  throw StructuralError("unknown walk category '" + s + "'");
}

namespace {

int lookup(const std::map<std::string, int>& m, const std::string& id) {
  auto it = m.find(id);
  return it == m.end() ? -1 : it->second;
}

template <typename T>
std::map<std::string, int> index_ids(const std::vector<T>& v,
                                     const char* what) {
  std::map<std::string, int> m;
  for (size_t i = 0; i < v.size(); ++i) {
    if (v[i].id.empty())
      throw StructuralError(std::string(what) + " with empty id");
    if (!m.emplace(v[i].id, static_cast<int>(i)).second)
      throw StructuralError(std::string(what) + " duplicate id '" + v[i].id +
                            "'");
  }
  return m;
}

}  // namespace

int MultiModalNetwork::node_index(const std::string& id) const {
  return lookup(node_ids_, id);
}
int MultiModalNetwork::link_index(const std::string& id) const {
  return lookup(link_ids_, id);
}
int MultiModalNetwork::stop_index(const std::string& id) const {
  return lookup(stop_ids_, id);
}
int MultiModalNetwork::walk_index(const std::string& id) const {
  return lookup(walk_ids_, id);
}
int MultiModalNetwork::line_index(const std::string& id) const {
  return lookup(line_ids_, id);
}
int MultiModalNetwork::path_index(const std::string& id) const {
  return lookup(path_ids_, id);
}
int MultiModalNetwork::od_index(int origin, int destination) const {
  auto it = od_ids_.find({origin, destination});
  return it == od_ids_.end() ? -1 : it->second;
}

int MultiModalNetwork::stop_trip_index(int line, int trip, int stop_seq) const {
  if (line < 0 || line >= static_cast<int>(lines.size())) return -1;
  const auto& ln = lines[line];
  if (trip < 0 || trip >= static_cast<int>(ln.trip_departures.size()))
    return -1;
  if (stop_seq < 0 || stop_seq >= static_cast<int>(ln.stops.size())) return -1;
  return stop_trip_offsets_[line] +
         trip * static_cast<int>(ln.stops.size()) + stop_seq;
}

void MultiModalNetwork::finalize() {
  node_ids_ = index_ids(nodes, "node");
  link_ids_ = index_ids(links, "link");
  stop_ids_ = index_ids(stops, "stop");
  walk_ids_ = index_ids(walks, "walk link");
  line_ids_ = index_ids(lines, "line");
  path_ids_ = index_ids(paths, "path");

  std::vector<std::string> failures;
  auto fail = [&failures](const std::string& msg) { failures.push_back(msg); };

  if (links.empty()) throw StructuralError("network has no auto links");

  for (const auto& l : links) {
    if (l.from_node < 0 || l.from_node >= static_cast<int>(nodes.size()) ||
        l.to_node < 0 || l.to_node >= static_cast<int>(nodes.size()))
      throw StructuralError("link " + l.id + " references a missing node");
    if (l.length_miles <= 0) fail("link " + l.id + ": length must be > 0");
    if (l.speed_mph <= 0) fail("link " + l.id + ": speed limit must be > 0");
    if (l.cap_car_vph <= 0 || l.cap_bus_vph <= 0)
      fail("link " + l.id + ": capacities must be > 0");
    if (l.jam_car_per_mile <= 0 || l.jam_bus_per_mile <= 0)
      fail("link " + l.id + ": jam densities must be > 0");
    if (l.lanes < 1) fail("link " + l.id + ": lanes must be >= 1");
  }

  // Attach each virtual stop to its owning line first so stop checks can use
  // line membership.
  for (auto& s : stops) s.line = -1;
  for (size_t li = 0; li < lines.size(); ++li) {
    const auto& ln = lines[li];
    if (ln.stops.size() < 2)
      fail("line " + ln.id + ": stop sequence must have at least 2 stops");
    for (int si : ln.stops) {
      if (si < 0 || si >= static_cast<int>(stops.size()))
        throw StructuralError("line " + ln.id + " references a missing stop");
      auto& st = stops[si];
      if (!is_virtual(st.kind))
        fail("line " + ln.id + ": stop " + st.id + " is not virtual");
      if (is_metro(st.kind) != ln.is_metro)
        fail("line " + ln.id + ": stop " + st.id + " mode mismatch");
      if (st.line >= 0 && st.line != static_cast<int>(li))
        fail("stop " + st.id + " is claimed by two lines");
      st.line = static_cast<int>(li);
    }
    if (!std::is_sorted(ln.trip_departures.begin(), ln.trip_departures.end(),
                        std::less_equal<double>()))
      fail("line " + ln.id + ": trip departures must be strictly increasing");
    if (ln.is_metro) {
      if (ln.run_times_sec.size() + 1 != ln.stops.size())
        fail("line " + ln.id + ": metro run times must cover every segment");
      if (!ln.route_links.empty())
        fail("line " + ln.id + ": metro lines do not use auto links");
    } else {
      if (!ln.run_times_sec.empty())
        fail("line " + ln.id + ": bus lines carry no fixed time table");
      if (ln.route_links.empty()) {
        fail("line " + ln.id + ": bus line without a driven route");
      } else {
        for (size_t i = 0; i < ln.route_links.size(); ++i) {
          int l = ln.route_links[i];
          if (l < 0 || l >= static_cast<int>(links.size()))
            throw StructuralError("line " + ln.id +
                                  " route references a missing link");
          if (i > 0 &&
              links[ln.route_links[i - 1]].to_node != links[l].from_node)
            fail("line " + ln.id + ": route is not a connected link chain");
        }
      }
    }
  }

  for (const auto& s : stops) {
    if (is_virtual(s.kind)) {
      if (s.parent_physical < 0 ||
          s.parent_physical >= static_cast<int>(stops.size()))
        fail("virtual stop " + s.id + " lacks a parent physical stop");
      else if (is_virtual(stops[s.parent_physical].kind))
        fail("virtual stop " + s.id + " parent is not physical");
      else if (is_metro(stops[s.parent_physical].kind) != is_metro(s.kind))
        fail("virtual stop " + s.id + " parent mode mismatch");
    } else if (s.parent_physical >= 0) {
      fail("physical stop " + s.id + " must not have a parent");
    }
    if (s.kind == StopKind::VirtualBus) {
      if (s.host_link < 0 || s.host_link >= static_cast<int>(links.size()))
        fail("bus virtual stop " + s.id + " lacks a host link");
      else if (s.host_milepost < 0 ||
               s.host_milepost > links[s.host_link].length_miles)
        fail("bus virtual stop " + s.id + " milepost outside its host link");
    } else if (is_metro(s.kind) && s.host_link >= 0) {
      fail("metro stop " + s.id + " must not reference an auto link");
    }
  }

  for (const auto& w : walks) {
    auto check_end = [&](int node, int stop, const char* side) {
      if ((node < 0) == (stop < 0))
        throw StructuralError("walk link " + w.id + " " + side +
                              " endpoint must be exactly one of node/stop");
      if (node >= static_cast<int>(nodes.size()) ||
          stop >= static_cast<int>(stops.size()))
        throw StructuralError("walk link " + w.id + " references a missing " +
                              side + " endpoint");
    };
    check_end(w.from_node, w.from_stop, "from");
    check_end(w.to_node, w.to_stop, "to");
    if (w.length_miles < 0) fail("walk link " + w.id + ": negative length");
    if (w.category == WalkCategory::BoardAlight) {
      bool ok = w.from_stop >= 0 && w.to_stop >= 0;
      if (ok) {
        const auto& a = stops[w.from_stop];
        const auto& b = stops[w.to_stop];
        ok = (!is_virtual(a.kind) && is_virtual(b.kind) &&
              b.parent_physical == w.from_stop) ||
             (!is_virtual(b.kind) && is_virtual(a.kind) &&
              a.parent_physical == w.to_stop);
      }
      if (!ok)
        fail("board-alight walk " + w.id +
             " must connect a physical stop to one of its virtual stops");
    }
  }

  for (const auto& z : zones) {
    if (z.node < 0 || z.node >= static_cast<int>(nodes.size()))
      throw StructuralError("zone row references a missing node");
    if (z.median_income < 0 || z.pop_density < 0 || z.parking_fee < 0 ||
        z.pnr_parking_fee < 0)
      fail("zone at node " + nodes[z.node].id + ": negative attribute");
  }

  od_ids_.clear();
  for (size_t i = 0; i < od_pairs.size(); ++i) {
    const auto& od = od_pairs[i];
    if (od.origin < 0 || od.origin >= static_cast<int>(nodes.size()) ||
        od.destination < 0 ||
        od.destination >= static_cast<int>(nodes.size()))
      throw StructuralError("O-D pair references a missing node");
    if (!od_ids_.emplace(std::make_pair(od.origin, od.destination),
                         static_cast<int>(i))
             .second)
      throw StructuralError("duplicate O-D pair");
  }

  paths_by_od.assign(od_pairs.size(), {});
  for (size_t pi = 0; pi < paths.size(); ++pi) {
    const auto& p = paths[pi];
    if (p.od < 0 || p.od >= static_cast<int>(od_pairs.size()))
      throw StructuralError("path " + p.id + " references a missing O-D pair");
    paths_by_od[p.od].push_back(static_cast<int>(pi));
    validate_path_connectivity(p, fail);
    auto [xb, xm] = path_mode_indicators(p);
    bool has_car = false;
    for (const auto& leg : p.legs)
      if (leg.kind == PathLeg::Kind::Drive) has_car = true;
    if (xb != (involves_bus(p.mode) ? 1 : 0) ||
        xm != (involves_metro(p.mode) ? 1 : 0) ||
        has_car != involves_car(p.mode))
      fail("path " + p.id + ": mode tag inconsistent with legs");
    if (p.parking_fee < 0 || p.fare < 0)
      fail("path " + p.id + ": negative monetary attribute");
  }

  if (!failures.empty()) {
    std::ostringstream os;
    os << failures.size() << " validation failure(s):";
    for (const auto& f : failures) os << "\n  - " << f;
    throw ValidationError(os.str());
  }

  out_links.assign(nodes.size(), {});
  in_links.assign(nodes.size(), {});
  for (size_t li = 0; li < links.size(); ++li) {
    out_links[links[li].from_node].push_back(static_cast<int>(li));
    in_links[links[li].to_node].push_back(static_cast<int>(li));
  }

  stop_trips.clear();
  stop_trip_offsets_.assign(lines.size(), 0);
  for (size_t li = 0; li < lines.size(); ++li) {
    stop_trip_offsets_[li] = static_cast<int>(stop_trips.size());
    const auto& ln = lines[li];
    for (size_t trip = 0; trip < ln.trip_departures.size(); ++trip)
      for (size_t seq = 0; seq < ln.stops.size(); ++seq)
        stop_trips.push_back({static_cast<int>(li), static_cast<int>(trip),
                              ln.stops[seq], static_cast<int>(seq)});
  }

  // Bus stop positions along the driven route; metro lines have none.
  line_stop_mileposts.assign(lines.size(), {});
  std::vector<std::string> route_failures;
  for (size_t li = 0; li < lines.size(); ++li) {
    const auto& ln = lines[li];
    if (ln.is_metro) continue;
    std::vector<double> mp;
    double prev = -1;
    double cum_before = 0;
    size_t ri = 0;
    for (int si : ln.stops) {
      const auto& st = stops[si];
      while (ri < ln.route_links.size() && ln.route_links[ri] != st.host_link)
        cum_before += links[ln.route_links[ri++]].length_miles;
      if (ri == ln.route_links.size()) {
        route_failures.push_back("line " + ln.id + ": stop " + st.id +
                                 " is not hosted on the route in order");
        break;
      }
      double pos = cum_before + st.host_milepost;
      if (pos <= prev) {
        route_failures.push_back("line " + ln.id + ": stop " + st.id +
                                 " is out of order along the route");
        break;
      }
      prev = pos;
      mp.push_back(pos);
    }
    line_stop_mileposts[li] = std::move(mp);
  }
  if (!route_failures.empty()) {
    std::ostringstream os;
    os << route_failures.size() << " validation failure(s):";
    for (const auto& f : route_failures) os << "\n  - " << f;
    throw ValidationError(os.str());
  }

  car_paths.clear();
  pt_paths.clear();
  pnr_paths.clear();
  for (size_t pi = 0; pi < paths.size(); ++pi) {
    switch (top_mode_of(paths[pi].mode)) {
      case TopMode::Driving: car_paths.push_back(static_cast<int>(pi)); break;
      case TopMode::Transit: pt_paths.push_back(static_cast<int>(pi)); break;
      case TopMode::Pnr: pnr_paths.push_back(static_cast<int>(pi)); break;
    }
  }
}

// A leg sequence is connected when each leg starts where the previous one
// ended, tracking positions as either an auto node or a stop.
void MultiModalNetwork::validate_path_connectivity(
    const Path& p, const std::function<void(const std::string&)>& fail) const {
  if (p.legs.empty()) {
    fail("path " + p.id + ": no legs");
    return;
  }
  const auto& od = od_pairs[p.od];
  int at_node = od.origin;
  int at_stop = -1;
  auto where = [&]() {
    return at_stop >= 0 ? "stop " + stops[at_stop].id
                        : "node " + nodes[at_node].id;
  };
  for (const auto& leg : p.legs) {
    switch (leg.kind) {
      case PathLeg::Kind::Drive: {
        if (leg.link < 0 || leg.link >= static_cast<int>(links.size()))
          throw StructuralError("path " + p.id + " references a missing link");
        if (at_stop >= 0 || links[leg.link].from_node != at_node) {
          fail("path " + p.id + ": drive leg " + links[leg.link].id +
               " does not start at " + where());
          return;
        }
        at_node = links[leg.link].to_node;
        break;
      }
      case PathLeg::Kind::Walk: {
        if (leg.walk < 0 || leg.walk >= static_cast<int>(walks.size()))
          throw StructuralError("path " + p.id +
                                " references a missing walk link");
        const auto& w = walks[leg.walk];
        int fn = leg.walk_forward ? w.from_node : w.to_node;
        int fs = leg.walk_forward ? w.from_stop : w.to_stop;
        int tn = leg.walk_forward ? w.to_node : w.from_node;
        int ts = leg.walk_forward ? w.to_stop : w.from_stop;
        bool here = (fs >= 0 && fs == at_stop) ||
                    (fs < 0 && at_stop < 0 && fn == at_node);
        if (!here) {
          fail("path " + p.id + ": walk leg " + w.id + " does not start at " +
               where());
          return;
        }
        at_stop = ts;
        if (ts < 0) at_node = tn;
        break;
      }
      case PathLeg::Kind::Ride: {
        if (leg.line < 0 || leg.line >= static_cast<int>(lines.size()))
          throw StructuralError("path " + p.id + " references a missing line");
        const auto& ln = lines[leg.line];
        auto pos = [&](int stop) {
          auto it = std::find(ln.stops.begin(), ln.stops.end(), stop);
          return it == ln.stops.end()
                     ? -1
                     : static_cast<int>(it - ln.stops.begin());
        };
        int bi = pos(leg.board_stop), ai = pos(leg.alight_stop);
        if (bi < 0 || ai < 0) {
          fail("path " + p.id + ": line " + ln.id +
               " does not serve a boarded/alighted stop");
          return;
        }
        if (bi >= ai) {
          fail("path " + p.id + ": ride on line " + ln.id +
               " goes against the stop sequence");
          return;
        }
        if (at_stop != leg.board_stop) {
          fail("path " + p.id + ": ride does not start at " + where());
          return;
        }
        at_stop = leg.alight_stop;
        break;
      }
      case PathLeg::Kind::Park: {
        if (leg.park_node < 0 ||
            leg.park_node >= static_cast<int>(nodes.size()))
          throw StructuralError("path " + p.id +
                                " references a missing parking node");
        if (at_stop >= 0 || at_node != leg.park_node) {
          fail("path " + p.id + ": park leg is not at " +
               nodes[leg.park_node].id);
          return;
        }
        if (!nodes[leg.park_node].is_parking) {
          fail("path " + p.id + ": node " + nodes[leg.park_node].id +
               " is not a parking lot");
          return;
        }
        break;
      }
    }
  }
  int end_node = at_stop >= 0 ? -1 : at_node;
  if (end_node != od.destination) {
    // Transit paths end with a walk to the destination node.
    fail("path " + p.id + ": does not end at destination " +
         nodes[od.destination].id);
  }
}

std::pair<int, int> MultiModalNetwork::path_mode_indicators(
    const Path& p) const {
  int xb = 0, xm = 0;
  for (const auto& leg : p.legs) {
    if (leg.kind != PathLeg::Kind::Ride) continue;
    if (lines[leg.line].is_metro)
      xm = 1;
    else
      xb = 1;
  }
  return {xb, xm};
}

NetworkSummary MultiModalNetwork::summary() const {
  NetworkSummary s;
  s.nodes = static_cast<int>(nodes.size());
  s.links = static_cast<int>(links.size());
  s.od_pairs = static_cast<int>(od_pairs.size());
  for (const auto& ln : lines) (ln.is_metro ? s.metro_lines : s.bus_lines)++;
  for (const auto& st : stops)
    (is_virtual(st.kind) ? s.virtual_stops : s.physical_stops)++;
  s.stop_trip_pairs = static_cast<int>(stop_trips.size());
  s.walking_links = static_cast<int>(walks.size());
  for (const auto& p : paths) {
    switch (top_mode_of(p.mode)) {
      case TopMode::Driving: s.paths_driving++; break;
      case TopMode::Transit: s.paths_transit++; break;
      case TopMode::Pnr: s.paths_pnr++; break;
    }
  }
  for (const auto& n : nodes)
    if (n.is_parking) s.parking_lots++;
  return s;
}

namespace {

std::string endpoint_name(const MultiModalNetwork& net, int node, int stop) {
  return stop >= 0 ? net.stops[stop].id : net.nodes[node].id;
}

void resolve_endpoint(const MultiModalNetwork& net, const std::string& id,
                      int& node, int& stop, const std::string& ctx) {
  node = stop = -1;
  for (size_t i = 0; i < net.nodes.size(); ++i)
    if (net.nodes[i].id == id) node = static_cast<int>(i);
  for (size_t i = 0; i < net.stops.size(); ++i)
    if (net.stops[i].id == id) stop = static_cast<int>(i);
  if (node >= 0 && stop >= 0)
    throw StructuralError(ctx + ": id '" + id + "' names both node and stop");
  if (node < 0 && stop < 0)
    throw StructuralError(ctx + ": unknown endpoint '" + id + "'");
}

std::vector<double> parse_double_list(const std::string& s,
                                      const std::string& ctx) {
  std::vector<double> out;
  if (io::trim(s).empty()) return out;
  for (const auto& tok : io::split(s, ';'))
    out.push_back(io::parse_double(io::trim(tok), ctx));
  return out;
}

}  // namespace

MultiModalNetwork load_network(const std::string& dir) {
  MultiModalNetwork net;
  auto manifest = io::read_kv(dir + "/manifest");
  if (auto it = manifest.find("walk_speed_mph"); it != manifest.end())
    net.walk_speed_mph = io::parse_double(it->second, "manifest");
  if (auto it = manifest.find("name"); it != manifest.end())
    net.name = it->second;

  {
    auto t = io::read_tsv(dir + "/nodes.tsv");
    int c_id = t.require_col("id"), c_x = t.require_col("x"),
        c_y = t.require_col("y"), c_zone = t.require_col("zone"),
        c_park = t.require_col("parking");
    for (size_t r = 0; r < t.rows.size(); ++r) {
      Node n;
      n.id = t.cell(r, c_id);
      n.x = io::parse_double(t.cell(r, c_x), "nodes.tsv");
      n.y = io::parse_double(t.cell(r, c_y), "nodes.tsv");
      n.is_zone = t.cell(r, c_zone) == "1";
      n.is_parking = t.cell(r, c_park) == "1";
      net.nodes.push_back(n);
    }
  }
  // A provisional index is needed while links/stops resolve node ids.
  auto node_idx = [&net](const std::string& id, const std::string& ctx) {
    for (size_t i = 0; i < net.nodes.size(); ++i)
      if (net.nodes[i].id == id) return static_cast<int>(i);
    throw StructuralError(ctx + ": unknown node '" + id + "'");
  };

  {
    auto t = io::read_tsv(dir + "/links.tsv");
    int c_id = t.require_col("id"), c_from = t.require_col("from"),
        c_to = t.require_col("to"), c_len = t.require_col("length_miles"),
        c_spd = t.require_col("speed_mph"),
        c_cc = t.require_col("cap_car_vph"),
        c_cb = t.require_col("cap_bus_vph"),
        c_jc = t.require_col("jam_car_per_mile"),
        c_jb = t.require_col("jam_bus_per_mile"),
        c_lanes = t.require_col("lanes");
    for (size_t r = 0; r < t.rows.size(); ++r) {
      AutoLink l;
      l.id = t.cell(r, c_id);
      l.from_node = node_idx(t.cell(r, c_from), "links.tsv");
      l.to_node = node_idx(t.cell(r, c_to), "links.tsv");
      l.length_miles = io::parse_double(t.cell(r, c_len), "links.tsv");
      l.speed_mph = io::parse_double(t.cell(r, c_spd), "links.tsv");
      l.cap_car_vph = io::parse_double(t.cell(r, c_cc), "links.tsv");
      l.cap_bus_vph = io::parse_double(t.cell(r, c_cb), "links.tsv");
      l.jam_car_per_mile = io::parse_double(t.cell(r, c_jc), "links.tsv");
      l.jam_bus_per_mile = io::parse_double(t.cell(r, c_jb), "links.tsv");
      l.lanes = static_cast<int>(io::parse_long(t.cell(r, c_lanes), "links.tsv"));
      net.links.push_back(l);
    }
    if (net.links.empty()) throw StructuralError("links.tsv lists no links");
  }

  {
    auto t = io::read_tsv(dir + "/stops.tsv");
    int c_id = t.require_col("id"), c_kind = t.require_col("kind"),
        c_parent = t.require_col("parent"),
        c_host = t.require_col("host_link"),
        c_mp = t.require_col("host_milepost"), c_x = t.require_col("x"),
        c_y = t.require_col("y");
    // First pass creates stops, second pass resolves parents by id.
    std::vector<std::string> parents;
    for (size_t r = 0; r < t.rows.size(); ++r) {
      TransitStop s;
      s.id = t.cell(r, c_id);
      s.kind = stop_kind_from_string(t.cell(r, c_kind));
      parents.push_back(t.cell(r, c_parent));
      const std::string& host = t.cell(r, c_host);
      if (host != "-") {
        for (size_t i = 0; i < net.links.size(); ++i)
          if (net.links[i].id == host) s.host_link = static_cast<int>(i);
        if (s.host_link < 0)
          throw StructuralError("stops.tsv: unknown host link '" + host + "'");
        s.host_milepost = io::parse_double(t.cell(r, c_mp), "stops.tsv");
      }
      s.x = io::parse_double(t.cell(r, c_x), "stops.tsv");
      s.y = io::parse_double(t.cell(r, c_y), "stops.tsv");
      net.stops.push_back(s);
    }
    for (size_t r = 0; r < net.stops.size(); ++r) {
      if (parents[r] == "-") continue;
      int pi = -1;
      for (size_t i = 0; i < net.stops.size(); ++i)
        if (net.stops[i].id == parents[r]) pi = static_cast<int>(i);
      if (pi < 0)
        throw StructuralError("stops.tsv: stop " + net.stops[r].id +
                              " has unknown parent '" + parents[r] + "'");
      net.stops[r].parent_physical = pi;
    }
  }

  {
    auto t = io::read_tsv(dir + "/lines.tsv");
    int c_id = t.require_col("id"), c_mode = t.require_col("mode"),
        c_cap = t.require_col("capacity"), c_stops = t.require_col("stops"),
        c_dep = t.require_col("departures"),
        c_run = t.require_col("run_times_sec"),
        c_route = t.require_col("route");
    for (size_t r = 0; r < t.rows.size(); ++r) {
      TransitLine ln;
      ln.id = t.cell(r, c_id);
      const std::string& mode = t.cell(r, c_mode);
      if (mode != "bus" && mode != "metro")
        throw StructuralError("lines.tsv: bad mode '" + mode + "'");
      ln.is_metro = mode == "metro";
      ln.vehicle_capacity = io::parse_double(t.cell(r, c_cap), "lines.tsv");
      for (const auto& sid : io::split(t.cell(r, c_stops), ';')) {
        int si = -1;
        for (size_t i = 0; i < net.stops.size(); ++i)
          if (net.stops[i].id == io::trim(sid)) si = static_cast<int>(i);
        if (si < 0)
          throw StructuralError("lines.tsv: line " + ln.id +
                                " has unknown stop '" + sid + "'");
        ln.stops.push_back(si);
      }
      ln.trip_departures = parse_double_list(t.cell(r, c_dep), "lines.tsv");
      ln.run_times_sec = parse_double_list(t.cell(r, c_run), "lines.tsv");
      const std::string& route = io::trim(t.cell(r, c_route));
      if (route != "-" && !route.empty()) {
        for (const auto& lid : io::split(route, ';')) {
          int li = -1;
          for (size_t i = 0; i < net.links.size(); ++i)
            if (net.links[i].id == io::trim(lid)) li = static_cast<int>(i);
          if (li < 0)
            throw StructuralError("lines.tsv: line " + ln.id +
                                  " has unknown route link '" + lid + "'");
          ln.route_links.push_back(li);
        }
      }
      net.lines.push_back(ln);
    }
  }

  {
    auto t = io::read_tsv(dir + "/walks.tsv");
    int c_id = t.require_col("id"), c_from = t.require_col("from"),
        c_to = t.require_col("to"), c_cat = t.require_col("category"),
        c_len = t.require_col("length_miles");
    for (size_t r = 0; r < t.rows.size(); ++r) {
      WalkLink w;
      w.id = t.cell(r, c_id);
      w.category = walk_category_from_string(t.cell(r, c_cat));
      w.length_miles = io::parse_double(t.cell(r, c_len), "walks.tsv");
      net.walks.push_back(w);
    }
    // Endpoint resolution needs the final stop table; done below after ids
    // exist, using the raw strings kept here.
    for (size_t r = 0; r < t.rows.size(); ++r) {
      auto& w = net.walks[r];
      // temporary direct resolution (ids are unique across nodes and stops)
      int n = -1, s = -1;
      resolve_endpoint(net, t.cell(r, c_from), n, s, "walks.tsv " + w.id);
      w.from_node = n;
      w.from_stop = s;
      resolve_endpoint(net, t.cell(r, c_to), n, s, "walks.tsv " + w.id);
      w.to_node = n;
      w.to_stop = s;
    }
  }

  {
    auto t = io::read_tsv(dir + "/zones.tsv");
    int c_node = t.require_col("node"), c_inc = t.require_col("income"),
        c_dens = t.require_col("pop_density"),
        c_pf = t.require_col("parking_fee"),
        c_pnr = t.require_col("pnr_parking_fee");
    for (size_t r = 0; r < t.rows.size(); ++r) {
      ZoneAttributes z;
      z.node = node_idx(t.cell(r, c_node), "zones.tsv");
      z.median_income = io::parse_double(t.cell(r, c_inc), "zones.tsv");
      z.pop_density = io::parse_double(t.cell(r, c_dens), "zones.tsv");
      z.parking_fee = io::parse_double(t.cell(r, c_pf), "zones.tsv");
      z.pnr_parking_fee = io::parse_double(t.cell(r, c_pnr), "zones.tsv");
      net.zones.push_back(z);
    }
  }

  {
    auto t = io::read_tsv(dir + "/paths.tsv");
    int c_id = t.require_col("id"), c_o = t.require_col("origin"),
        c_d = t.require_col("destination"), c_mode = t.require_col("mode"),
        c_legs = t.require_col("legs"),
        c_tau = t.require_col("parking_fee"), c_fare = t.require_col("fare");

    // O-D pairs are implied by the path table, ordered by first appearance.
    auto zone_of = [&net](int node) -> const ZoneAttributes* {
      for (const auto& z : net.zones)
        if (z.node == node) return &z;
      return nullptr;
    };
    for (size_t r = 0; r < t.rows.size(); ++r) {
      Path p;
      p.id = t.cell(r, c_id);
      int o = node_idx(t.cell(r, c_o), "paths.tsv");
      int d = node_idx(t.cell(r, c_d), "paths.tsv");
      int od = -1;
      for (size_t i = 0; i < net.od_pairs.size(); ++i)
        if (net.od_pairs[i].origin == o && net.od_pairs[i].destination == d)
          od = static_cast<int>(i);
      if (od < 0) {
        OdPair pair;
        pair.origin = o;
        pair.destination = d;
        const ZoneAttributes* zo = zone_of(o);
        const ZoneAttributes* zd = zone_of(d);
        if (!zo || !zd)
          throw StructuralError("paths.tsv: O-D endpoints of " + p.id +
                                " missing from zones.tsv");
        pair.median_income = zo->median_income;
        pair.pop_density_o = zo->pop_density;
        pair.pop_density_d = zd->pop_density;
        od = static_cast<int>(net.od_pairs.size());
        net.od_pairs.push_back(pair);
      }
      p.od = od;
      p.mode = submode_from_string(t.cell(r, c_mode));
      p.parking_fee = io::parse_double(t.cell(r, c_tau), "paths.tsv");
      p.fare = io::parse_double(t.cell(r, c_fare), "paths.tsv");
      for (const auto& tok : io::split(t.cell(r, c_legs), ';')) {
        auto parts = io::split(io::trim(tok), ':');
        if (parts.empty()) throw StructuralError("paths.tsv: empty leg token");
        PathLeg leg;
        const std::string& kind = parts[0];
        auto want = [&](size_t n) {
          if (parts.size() != n)
            throw StructuralError("paths.tsv: bad leg token '" + tok + "'");
        };
        if (kind == "L") {
          want(2);
          leg.kind = PathLeg::Kind::Drive;
          leg.link = -1;
          for (size_t i = 0; i < net.links.size(); ++i)
            if (net.links[i].id == parts[1]) leg.link = static_cast<int>(i);
          if (leg.link < 0)
            throw StructuralError("paths.tsv: unknown link '" + parts[1] + "'");
        } else if (kind == "R") {
          want(4);
          leg.kind = PathLeg::Kind::Ride;
          for (size_t i = 0; i < net.lines.size(); ++i)
            if (net.lines[i].id == parts[1]) leg.line = static_cast<int>(i);
          if (leg.line < 0)
            throw StructuralError("paths.tsv: unknown line '" + parts[1] + "'");
          leg.board_stop = -1;
          leg.alight_stop = -1;
          for (size_t i = 0; i < net.stops.size(); ++i) {
            if (net.stops[i].id == parts[2]) leg.board_stop = static_cast<int>(i);
            if (net.stops[i].id == parts[3])
              leg.alight_stop = static_cast<int>(i);
          }
          if (leg.board_stop < 0 || leg.alight_stop < 0)
            throw StructuralError("paths.tsv: unknown ride stop in '" + tok +
                                  "'");
        } else if (kind == "W" || kind == "Wb") {
          want(2);
          leg.kind = PathLeg::Kind::Walk;
          leg.walk_forward = kind == "W";
          leg.walk = -1;
          for (size_t i = 0; i < net.walks.size(); ++i)
            if (net.walks[i].id == parts[1]) leg.walk = static_cast<int>(i);
          if (leg.walk < 0)
            throw StructuralError("paths.tsv: unknown walk link '" + parts[1] +
                                  "'");
        } else if (kind == "P") {
          want(2);
          leg.kind = PathLeg::Kind::Park;
          leg.park_node = node_idx(parts[1], "paths.tsv");
        } else {
          throw StructuralError("paths.tsv: bad leg kind '" + kind + "'");
        }
        p.legs.push_back(leg);
      }
      net.paths.push_back(std::move(p));
    }
  }

  net.finalize();
  return net;
}

void save_network(const MultiModalNetwork& net, const std::string& dir) {
  io::ensure_dir(dir);
  using Row = std::vector<std::string>;
  auto d = io::format_double;

  io::write_kv(dir + "/manifest",
               {{"name", net.name},
                {"walk_speed_mph", d(net.walk_speed_mph)},
                {"time_unit", "minutes"},
                {"money_unit", "dollars"}});

  {
    std::vector<Row> rows;
    for (const auto& n : net.nodes)
      rows.push_back({n.id, d(n.x), d(n.y), n.is_zone ? "1" : "0",
                      n.is_parking ? "1" : "0"});
    io::write_tsv(dir + "/nodes.tsv", {"id", "x", "y", "zone", "parking"},
                  rows);
  }
  {
    std::vector<Row> rows;
    for (const auto& l : net.links)
      rows.push_back({l.id, net.nodes[l.from_node].id, net.nodes[l.to_node].id,
                      d(l.length_miles), d(l.speed_mph), d(l.cap_car_vph),
                      d(l.cap_bus_vph), d(l.jam_car_per_mile),
                      d(l.jam_bus_per_mile), std::to_string(l.lanes)});
    io::write_tsv(dir + "/links.tsv",
                  {"id", "from", "to", "length_miles", "speed_mph",
                   "cap_car_vph", "cap_bus_vph", "jam_car_per_mile",
                   "jam_bus_per_mile", "lanes"},
                  rows);
  }
  {
    std::vector<Row> rows;
    for (const auto& s : net.stops)
      rows.push_back(
          {s.id, to_string(s.kind),
           s.parent_physical >= 0 ? net.stops[s.parent_physical].id : "-",
           s.host_link >= 0 ? net.links[s.host_link].id : "-",
           d(s.host_milepost), d(s.x), d(s.y)});
    io::write_tsv(dir + "/stops.tsv",
                  {"id", "kind", "parent", "host_link", "host_milepost", "x",
                   "y"},
                  rows);
  }
  {
    std::vector<Row> rows;
    for (const auto& ln : net.lines) {
      std::string stops, deps, runs, route;
      for (size_t i = 0; i < ln.stops.size(); ++i)
        stops += (i ? ";" : "") + net.stops[ln.stops[i]].id;
      for (size_t i = 0; i < ln.trip_departures.size(); ++i)
        deps += (i ? ";" : "") + d(ln.trip_departures[i]);
      for (size_t i = 0; i < ln.run_times_sec.size(); ++i)
        runs += (i ? ";" : "") + d(ln.run_times_sec[i]);
      for (size_t i = 0; i < ln.route_links.size(); ++i)
        route += (i ? ";" : "") + net.links[ln.route_links[i]].id;
      if (route.empty()) route = "-";
      rows.push_back({ln.id, ln.is_metro ? "metro" : "bus",
                      d(ln.vehicle_capacity), stops, deps, runs, route});
    }
    io::write_tsv(dir + "/lines.tsv",
                  {"id", "mode", "capacity", "stops", "departures",
                   "run_times_sec", "route"},
                  rows);
  }
  {
    std::vector<Row> rows;
    for (const auto& w : net.walks)
      rows.push_back({w.id, endpoint_name(net, w.from_node, w.from_stop),
                      endpoint_name(net, w.to_node, w.to_stop),
                      to_string(w.category), d(w.length_miles)});
    io::write_tsv(dir + "/walks.tsv",
                  {"id", "from", "to", "category", "length_miles"}, rows);
  }
  {
    std::vector<Row> rows;
    for (const auto& z : net.zones)
      rows.push_back({net.nodes[z.node].id, d(z.median_income),
                      d(z.pop_density), d(z.parking_fee),
                      d(z.pnr_parking_fee)});
    io::write_tsv(dir + "/zones.tsv",
                  {"node", "income", "pop_density", "parking_fee",
                   "pnr_parking_fee"},
                  rows);
  }
  {
    std::vector<Row> rows;
    for (const auto& p : net.paths) {
      std::string legs;
      for (size_t i = 0; i < p.legs.size(); ++i) {
        const auto& leg = p.legs[i];
        std::string tok;
        switch (leg.kind) {
          case PathLeg::Kind::Drive:
            tok = "L:" + net.links[leg.link].id;
            break;
          case PathLeg::Kind::Ride:
            tok = "R:" + net.lines[leg.line].id + ":" +
                  net.stops[leg.board_stop].id + ":" +
                  net.stops[leg.alight_stop].id;
            break;
          case PathLeg::Kind::Walk:
            tok = (leg.walk_forward ? "W:" : "Wb:") + net.walks[leg.walk].id;
            break;
          case PathLeg::Kind::Park:
            tok = "P:" + net.nodes[leg.park_node].id;
            break;
        }
        legs += (i ? ";" : "") + tok;
      }
      const auto& od = net.od_pairs[p.od];
      rows.push_back({p.id, net.nodes[od.origin].id,
                      net.nodes[od.destination].id, to_string(p.mode), legs,
                      d(p.parking_fee), d(p.fare)});
    }
    io::write_tsv(dir + "/paths.tsv",
                  {"id", "origin", "destination", "mode", "legs",
                   "parking_fee", "fare"},
                  rows);
  }
}

}  // namespace mmcal
