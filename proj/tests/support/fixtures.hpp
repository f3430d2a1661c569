#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <unistd.h>

#include "tdamc/model.hpp"
#include "tdamc/noise.hpp"
#include "tdamc/topdown.hpp"

namespace fixtures {

inline std::shared_ptr<const tdamc::Schema> desk_schema() {
  return std::make_shared<const tdamc::Schema>(
      tdamc::Universe::person, std::vector<tdamc::Attribute>{{"sex", 2}, {"age", 4}, {"hisp", 2}});
}

inline std::shared_ptr<const tdamc::Schema> small_schema() {
  return std::make_shared<const tdamc::Schema>(tdamc::Universe::person,
                                               std::vector<tdamc::Attribute>{{"a", 2}, {"b", 2}});
}

inline tdamc::Histogram small_cef(std::vector<std::uint32_t> fanouts = {2, 2}, std::uint64_t seed = 1,
                                  std::shared_ptr<const tdamc::Schema> schema = small_schema()) {
  tdamc::SynthConfig c;
  c.schema = std::move(schema);
  c.fanouts = std::move(fanouts);
  c.level_names = {"root"};
  for (std::size_t i = 1; i < c.fanouts.size(); ++i) c.level_names.push_back("level" + std::to_string(i));
  c.level_names.push_back("block");
  c.zero_inflation = 0.3;
  return tdamc::synth_cef(c, seed);
}

// Uniform level shares, uniform groups, default strategy.
inline tdamc::TdaParams params_for(const tdamc::Histogram& h, double total_rho, bool level1 = true) {
  tdamc::TdaParams p;
  p.strategy = tdamc::default_strategy(h.schema(), h.hierarchy());
  std::map<std::string, double> shares;
  for (const auto& n : h.hierarchy().level_names()) {
    shares[n] = 1.0 / static_cast<double>(h.hierarchy().depth());
  }
  p.alloc = tdamc::BudgetAllocation::uniform_groups(total_rho, shares, h.hierarchy(), p.strategy);
  p.invariants.level1_totals = level1 && h.hierarchy().depth() > 2;
  return p;
}

/// Temporary directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("tdamc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
