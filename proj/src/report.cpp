#include "qcaps/report.hpp"

#include <sstream>

#include "qcaps/model_io.hpp"

namespace qcaps {

using nlohmann::json;

namespace {

json metrics_json(const ConfigMetrics& m)
{
  return json{{"accuracy", m.accuracy},
              {"weight_memory_bits", m.weight_memory_bits},
              {"activation_memory_bits", m.activation_memory_bits},
              {"w_mem_reduction", m.weight_reduction},
              {"a_mem_reduction", m.activation_reduction}};
}

json config_entry(const std::string& role, const ScoredConfig& sc)
{
  json j = to_json(sc.config);
  j["role"] = role;
  j["metrics"] = metrics_json(sc.metrics);
  return j;
}

// The configs an outcome returns, in report order.
std::vector<std::pair<std::string, const ScoredConfig*>> returned_configs(const SearchOutcome& o)
{
  std::vector<std::pair<std::string, const ScoredConfig*>> out;
  if (o.path == SearchPath::A && o.satisfied) out.emplace_back("model_satisfied", &*o.satisfied);
  if (o.path == SearchPath::B) {
    if (o.memory) out.emplace_back("model_memory", &*o.memory);
    if (o.accuracy) out.emplace_back("model_accuracy", &*o.accuracy);
  }
  return out;
}

std::string join_bits(const std::vector<int>& v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
  return s;
}

std::string join_bits(const std::vector<std::optional<int>>& v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + (v[i] ? std::to_string(*v[i]) : std::string("-"));
  return s;
}

} // namespace

json report_json(std::span<const SearchOutcome> outcomes, const Selection& selection, const ReportContext& ctx)
{
  json schemes = json::array();
  for (const auto& o : outcomes) {
    json configs = json::array();
    for (const auto& [role, sc] : returned_configs(o)) configs.push_back(config_entry(role, *sc));
    json entry{{"scheme", std::string(to_string(o.scheme))},
               {"path", std::string(to_string(o.path))},
               {"step1_bits", o.step1_bits},
               {"acc_mm", o.acc_mm ? json(*o.acc_mm) : json(nullptr)},
               {"oracle_calls", o.oracle_calls},
               {"configs", configs}};
    if (!o.note.empty()) entry["note"] = o.note;
    schemes.push_back(std::move(entry));
  }

  json sel = json{{"path", std::string(to_string(selection.path))}, {"configs", json::array()}};
  for (const auto& c : selection.configs) {
    json e = config_entry(c.role, c.scored);
    e["selected_scheme"] = std::string(to_string(c.scheme));
    sel["configs"].push_back(std::move(e));
  }

  return json{{"architecture", ctx.architecture},
              {"acc_fp32", ctx.acc_fp32},
              {"acc_tol", ctx.acc_tol},
              {"acc_target", target_accuracy(ctx.acc_fp32, ctx.acc_tol)},
              {"acc_step1", step1_threshold(ctx.acc_fp32, ctx.acc_tol)},
              {"mem_budget_bits", ctx.memory_budget_bits},
              {"fp32_weight_bits", ctx.fp32_weight_bits},
              {"fp32_activation_bits", ctx.fp32_activation_bits},
              {"seed", ctx.seed},
              {"eval_samples", ctx.eval_samples},
              {"floor_bits", ctx.floor_bits},
              {"schemes", schemes},
              {"selection", sel}};
}

std::string report_csv(std::span<const SearchOutcome> outcomes)
{
  std::ostringstream out;
  out.precision(17);
  out << "scheme,path,role,accuracy,weight_memory_bits,activation_memory_bits,w_mem_reduction,a_mem_reduction,q_w,q_a,q_dr\n";
  for (const auto& o : outcomes)
    for (const auto& [role, sc] : returned_configs(o)) {
      const auto& m = sc->metrics;
      out << to_string(o.scheme) << ',' << to_string(o.path) << ',' << role << ',' << m.accuracy << ','
          << m.weight_memory_bits << ',' << m.activation_memory_bits << ',' << m.weight_reduction << ','
          << m.activation_reduction << ',' << join_bits(sc->config.weight_bits) << ','
          << join_bits(sc->config.activation_bits) << ',' << join_bits(sc->config.routing_bits) << '\n';
    }
  return out.str();
}

std::filesystem::path csv_path_for(const std::filesystem::path& report_path)
{
  auto p = report_path;
  return p.replace_extension(".csv");
}

void write_report(std::span<const SearchOutcome> outcomes, const Selection& selection, const ReportContext& ctx,
                  const std::filesystem::path& path)
{
  if (outcomes.empty()) throw std::invalid_argument("write_report: no outcomes");
  write_json_file(path, report_json(outcomes, selection, ctx));
  write_text_file(csv_path_for(path), report_csv(outcomes));
}

} // namespace qcaps
