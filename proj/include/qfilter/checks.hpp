#pragma once

// The twelve acceptance criteria as runnable checks with pinned parameters.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

namespace qfilter {

struct CheckResult {
  int id = 0;
  std::string title;
  bool passed = false;
  nlohmann::json detail;
};

struct CheckContext;

// Holds ensembles shared between criteria (growth bounds reuse the norm and
// trace martingale runs).
class AcceptanceSuite {
 public:
  explicit AcceptanceSuite(std::uint64_t seed = 20240601, int parallelism = 1);
  ~AcceptanceSuite();

  static constexpr int kCount = 12;
  static std::string title(int id);

  // Throws InvalidArgument for id outside 1..12.
  CheckResult run(int id);
  std::vector<CheckResult> run_all(const std::function<void(const CheckResult&)>& on_result = {});

 private:
  std::unique_ptr<CheckContext> ctx_;
};

}  // namespace qfilter
