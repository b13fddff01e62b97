#ifndef QCAPS_REPORT_HPP_
#define QCAPS_REPORT_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include <json.hpp>

#include "qcaps/search.hpp"

namespace qcaps {

/// Run-level values echoed at the top of a report.
struct ReportContext
{
  std::string architecture;
  double acc_fp32 = 0.0;
  double acc_tol = 0.0;
  std::uint64_t memory_budget_bits = 0;
  std::uint64_t fp32_weight_bits = 0;
  std::uint64_t fp32_activation_bits = 0;
  std::uint64_t seed = 0;
  std::size_t eval_samples = 0;
  int floor_bits = 1;
};

nlohmann::json report_json(std::span<const SearchOutcome> outcomes, const Selection& selection, const ReportContext& ctx);
/// One row per returned config:
/// scheme,path,role,accuracy,weight_memory_bits,activation_memory_bits,w_mem_reduction,a_mem_reduction,q_w,q_a,q_dr
std::string report_csv(std::span<const SearchOutcome> outcomes);

/// JSON at `path`, CSV next to it with the extension replaced by ".csv".
void write_report(std::span<const SearchOutcome> outcomes, const Selection& selection, const ReportContext& ctx,
                  const std::filesystem::path& path);
std::filesystem::path csv_path_for(const std::filesystem::path& report_path);

} // namespace qcaps

#endif // QCAPS_REPORT_HPP_
