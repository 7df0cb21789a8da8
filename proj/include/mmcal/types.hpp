#ifndef MMCAL_TYPES_HPP
#define MMCAL_TYPES_HPP

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmcal {

// First-level mode choice: drive all the way, ride transit all the way,
// or park-and-ride.
enum class TopMode : int { Driving = 0, Transit = 1, Pnr = 2 };

// Second-level mode choice nested under the first level.
enum class SubMode : int {
  Car = 0,
  Bus = 1,
  Metro = 2,
  BusMetro = 3,
  CarBus = 4,
  CarMetro = 5,
  CarBusMetro = 6
};

constexpr int kNumSubModes = 7;

constexpr TopMode top_mode_of(SubMode g) {
  switch (g) {
    case SubMode::Car:
      return TopMode::Driving;
    case SubMode::Bus:
    case SubMode::Metro:
    case SubMode::BusMetro:
      return TopMode::Transit;
    default:
      return TopMode::Pnr;
  }
}

constexpr bool involves_bus(SubMode g) {
  return g == SubMode::Bus || g == SubMode::BusMetro || g == SubMode::CarBus ||
         g == SubMode::CarBusMetro;
}

constexpr bool involves_metro(SubMode g) {
  return g == SubMode::Metro || g == SubMode::BusMetro ||
         g == SubMode::CarMetro || g == SubMode::CarBusMetro;
}

constexpr bool involves_car(SubMode g) {
  return g == SubMode::Car || g == SubMode::CarBus || g == SubMode::CarMetro ||
         g == SubMode::CarBusMetro;
}

const char* to_string(TopMode m);
const char* to_string(SubMode g);
SubMode submode_from_string(const std::string& s);

enum class StopKind : int {
  PhysicalBus = 0,
  VirtualBus = 1,
  PhysicalMetro = 2,
  VirtualMetro = 3
};

constexpr bool is_virtual(StopKind k) {
  return k == StopKind::VirtualBus || k == StopKind::VirtualMetro;
}
constexpr bool is_metro(StopKind k) {
  return k == StopKind::PhysicalMetro || k == StopKind::VirtualMetro;
}

const char* to_string(StopKind k);
StopKind stop_kind_from_string(const std::string& s);

enum class WalkCategory : int {
  OriginAccess = 0,
  Transfer = 1,
  ParkingAccess = 2,
  BoardAlight = 3
};

const char* to_string(WalkCategory c);
WalkCategory walk_category_from_string(const std::string& s);

// Errors raised by bundle loading and cross-reference checks. `structural`
// means a dangling reference, `validation` a violated invariant.
class StructuralError : public std::runtime_error {
 public:
  explicit StructuralError(const std::string& what)
      : std::runtime_error(what) {}
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what)
      : std::runtime_error(what) {}
};

class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Unit conventions used throughout: lengths in miles, speeds in mph,
// clock times and durations in seconds unless a field says otherwise.
// Traveler-facing times (disutility inputs, link travel-time outputs)
// are in minutes.
constexpr double kSecondsPerHour = 3600.0;
constexpr double kMinutesPerHour = 60.0;

inline double mph_to_miles_per_sec(double mph) { return mph / kSecondsPerHour; }

}  // namespace mmcal

#endif  // MMCAL_TYPES_HPP
