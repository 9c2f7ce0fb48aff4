#pragma once

#include <string>
#include <vector>

#include "csunet/gradcheck.hpp"

namespace csunet {

enum class BatteryKind { op, block, network };

struct BatteryItem {
  std::string name;
  BatteryKind kind = BatteryKind::op;
  double tol = 0;
  GradCheckReport report;
  double seconds = 0;
};

struct BatteryOptions {
  /// Tolerance for composite items; linear, conv and pool use tol / 10.
  double tol = 1e-4;
  std::uint64_t seed = 7;
};

std::string to_string(BatteryKind k);

/// Central-difference checks over every primitive op, every block and a tiny
/// network (extent 16, channels 4/8/16/32), in 64-bit precision.
std::vector<BatteryItem> run_gradcheck_battery(const BatteryOptions& opt = {});

}  // namespace csunet
