#include "qcaps/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "qcaps/inference.hpp"
#include "qcaps/model_io.hpp"
#include "qcaps/report.hpp"
#include "qcaps/search.hpp"

namespace qcaps::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunSpec
{
  std::string manifest, blob, arch, images, labels, out, config;
  double acc_tol = 0.0;
  std::uint64_t mem_budget_bits = 0;
  double mem_budget_frac = 0.0;
  std::string rounding = "all";
  std::uint64_t seed = 0;
  std::size_t eval_subset = 0;
  int floor_bits = 1;
  int routing_iters = 0;
  int threads = 0;
  std::vector<int> grid{2, 4, 8, 16};
  // synth
  std::size_t samples = 100;
  double gain = 1.0;
};

std::vector<RoundingScheme> parse_schemes(const std::string& text)
{
  if (text == "all") return {RoundingScheme::TRN, RoundingScheme::RTN, RoundingScheme::SR};
  std::vector<RoundingScheme> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto s = parse_rounding_scheme(item);
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  }
  if (out.empty()) throw std::invalid_argument("--rounding: no scheme given");
  std::sort(out.begin(), out.end());
  return out;
}

void require_file(const std::string& flag, const std::string& path)
{
  if (path.empty()) throw std::invalid_argument(flag + " is required");
  if (!fs::exists(path)) throw IoError(flag + ": file not found: " + path);
}

CapsModel load_architecture(const RunSpec& spec)
{
  if (spec.arch.empty()) throw std::invalid_argument("--arch is required");
  CapsModel arch = resolve_architecture(spec.arch);
  if (spec.routing_iters > 0) {
    std::vector<LayerSpec> layers = arch.layers();
    for (auto& l : layers)
      if (l.uses_dynamic_routing) l.routing_iterations = spec.routing_iters;
    arch = CapsModel(arch.input_shape(), arch.num_classes(), std::move(layers), arch.architecture());
  }
  return arch;
}

CapsModel load_model_from(const RunSpec& spec)
{
  require_file("--manifest", spec.manifest);
  require_file("--blob", spec.blob);
  return load_model(spec.manifest, spec.blob, load_architecture(spec));
}

LabeledDataset load_data(const RunSpec& spec)
{
  require_file("--images", spec.images);
  require_file("--labels", spec.labels);
  return load_idx(spec.images, spec.labels).head(spec.eval_subset);
}

std::uint64_t total(const std::vector<std::uint64_t>& v)
{
  std::uint64_t t = 0;
  for (auto x : v) t += x;
  return t;
}

std::string fmt_acc(double a)
{
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << a;
  return s.str();
}

int cmd_eval(const RunSpec& spec, std::ostream& out)
{
  const CapsModel model = load_model_from(spec);
  const LabeledDataset data = load_data(spec);
  std::optional<QuantConfig> cfg;
  if (!spec.config.empty()) {
    require_file("--config", spec.config);
    cfg = quant_config_from_json(read_json_file(spec.config));
    validate(*cfg, model);
  }
  const double acc = evaluate(model, data, cfg, spec.seed);
  out << (cfg ? "quantized" : "fp32") << " accuracy: " << fmt_acc(acc) << " (" << data.size() << " samples)\n";

  if (!spec.out.empty()) {
    json j{{"architecture", model.architecture()}, {"samples", data.size()}, {"seed", spec.seed}, {"accuracy", acc}};
    const auto profile = profile_of(model);
    if (cfg) {
      const auto m = measure(profile, *cfg, acc);
      j["config"] = to_json(*cfg);
      j["weight_memory_bits"] = m.weight_memory_bits;
      j["activation_memory_bits"] = m.activation_memory_bits;
      j["w_mem_reduction"] = m.weight_reduction;
      j["a_mem_reduction"] = m.activation_reduction;
    } else {
      j["weight_memory_bits"] = 32 * total(profile.params);
      j["activation_memory_bits"] = 32 * total(profile.activations);
    }
    write_json_file(spec.out, j);
  }
  return 0;
}

int cmd_quantize(const RunSpec& spec, std::ostream& out)
{
  if (spec.out.empty()) throw std::invalid_argument("--out is required");
  if (!(spec.acc_tol >= 0.0 && spec.acc_tol < 1.0)) throw std::invalid_argument("--acc-tol must be in [0, 1)");
  if (spec.floor_bits < 0) throw std::invalid_argument("--floor-bits must be >= 0");

  const CapsModel model = load_model_from(spec);
  const LabeledDataset data = load_data(spec);
  const ModelProfile profile = profile_of(model);
  const std::uint64_t fp32_weight_bits = 32 * total(profile.params);

  FrameworkInputs in;
  in.profile = profile;
  in.acc_tol = spec.acc_tol;
  in.schemes = parse_schemes(spec.rounding);
  in.floor_bits = spec.floor_bits;
  if (spec.mem_budget_bits > 0)
    in.memory_budget_bits = spec.mem_budget_bits;
  else if (spec.mem_budget_frac > 0.0)
    in.memory_budget_bits = static_cast<std::uint64_t>(std::floor(spec.mem_budget_frac * static_cast<double>(fp32_weight_bits)));
  else
    throw std::invalid_argument("--mem-budget-bits (or --mem-budget-frac) is required");
  if (in.memory_budget_bits == 0) throw std::invalid_argument("memory budget must be > 0 bits");

  in.acc_fp32 = evaluate(model, data, std::nullopt, spec.seed);
  out << "fp32 accuracy: " << fmt_acc(in.acc_fp32) << " (" << data.size() << " samples), target "
      << fmt_acc(target_accuracy(in.acc_fp32, in.acc_tol)) << ", budget " << in.memory_budget_bits << " bits\n";

  const auto outcomes = run_framework(in, make_model_oracle(model, data, spec.seed));
  Selection selection;
  try {
    selection = select_rounding_scheme(outcomes);
  } catch (const std::invalid_argument&) {
    selection.path = SearchPath::Infeasible;
  }

  for (const auto& o : outcomes) {
    out << to_string(o.scheme) << ": path " << to_string(o.path);
    const ScoredConfig* shown = o.path == SearchPath::A ? &*o.satisfied : o.path == SearchPath::B ? &*o.accuracy : nullptr;
    if (shown)
      out << ", accuracy " << fmt_acc(shown->metrics.accuracy) << ", W-mem " << shown->metrics.weight_memory_bits
          << " bits (" << std::setprecision(3) << shown->metrics.weight_reduction << "x), A-mem reduction "
          << shown->metrics.activation_reduction << "x" << std::setprecision(6);
    if (!o.note.empty()) out << " [" << o.note << "]";
    out << "\n";
  }
  if (!selection.configs.empty())
    out << "selected: " << to_string(selection.configs.front().scheme) << " (path " << to_string(selection.path) << ")\n";
  else
    out << "selected: none (no feasible outcome)\n";

  ReportContext ctx;
  ctx.architecture = model.architecture();
  ctx.acc_fp32 = in.acc_fp32;
  ctx.acc_tol = in.acc_tol;
  ctx.memory_budget_bits = in.memory_budget_bits;
  ctx.fp32_weight_bits = fp32_weight_bits;
  ctx.fp32_activation_bits = 32 * total(profile.activations);
  ctx.seed = spec.seed;
  ctx.eval_samples = data.size();
  ctx.floor_bits = spec.floor_bits;
  write_report(outcomes, selection, ctx, spec.out);
  out << "report: " << spec.out << ", " << csv_path_for(spec.out).string() << "\n";
  return 0;
}

int cmd_compare_roundings(const RunSpec& spec, std::ostream& out)
{
  if (spec.out.empty()) throw std::invalid_argument("--out is required");
  if (spec.grid.empty()) throw std::invalid_argument("--grid must list at least one wordlength");
  const CapsModel model = load_model_from(spec);
  const LabeledDataset data = load_data(spec);
  const ModelProfile profile = profile_of(model);
  const auto schemes = parse_schemes(spec.rounding);

  const double fp32 = evaluate(model, data, std::nullopt, spec.seed);
  out << "fp32 accuracy: " << fmt_acc(fp32) << " (" << data.size() << " samples)\n";

  std::ostringstream csv;
  csv.precision(17);
  csv << "scheme,fractional_bits,wordlength,accuracy,weight_memory_bits,activation_memory_bits\n";
  for (RoundingScheme s : schemes)
    for (int q : spec.grid) {
      if (q < 0 || q > 52) throw std::invalid_argument("--grid entries must be in [0, 52]");
      const QuantConfig cfg = QuantConfig::uniform(s, profile.routing, q);
      const double acc = evaluate(model, data, cfg, spec.seed);
      const auto m = measure(profile, cfg, acc);
      csv << to_string(s) << ',' << q << ',' << q + kIntegerBits << ',' << acc << ',' << m.weight_memory_bits << ','
          << m.activation_memory_bits << '\n';
      out << to_string(s) << " Q=" << q << ": " << fmt_acc(acc) << "\n";
    }
  write_text_file(spec.out, csv.str());
  out << "csv: " << spec.out << "\n";
  return 0;
}

int cmd_synth(const RunSpec& spec, std::ostream& out)
{
  for (const auto* p : {&spec.manifest, &spec.blob, &spec.images, &spec.labels})
    if (p->empty()) throw std::invalid_argument("synth needs --manifest, --blob, --images and --labels");
  CapsModel model = load_architecture(spec);
  model.randomize(spec.seed, spec.gain);
  const Shape in = model.input_shape();
  if (in[0] != 1) throw std::invalid_argument("synth: IDX output needs a single input channel");

  LabeledDataset data;
  std::mt19937_64 gen(spec.seed ^ 0xD1B54A32D192ED03ULL);
  std::uniform_int_distribution<int> pixel(0, 255);
  std::vector<double> px(spec.samples * shape_size(in));
  for (double& v : px) v = pixel(gen) / 255.0;
  data.images = Tensor({spec.samples, in[0], in[1], in[2]}, std::move(px));
  // Labels are the FP32 model's own predictions, so FP32 accuracy is 1.
  for (std::size_t i = 0; i < spec.samples; ++i) {
    RandomStream rng(spec.seed, i);
    data.labels.push_back(static_cast<std::uint32_t>(predict_class(forward(model, data.sample(i), std::nullopt, rng))));
  }
  save_model(model, spec.manifest, spec.blob);
  save_idx(data, spec.images, spec.labels);
  out << "wrote " << model.architecture() << " model (" << total(model.param_counts()) << " parameters) and "
      << spec.samples << " teacher-labelled samples\n";
  return 0;
}

void add_model_flags(CLI::App* app, RunSpec& spec)
{
  app->add_option("--manifest", spec.manifest, "weight manifest (JSON)");
  app->add_option("--blob", spec.blob, "weight blob (float32 little-endian)");
  app->add_option("--arch", spec.arch, "architecture JSON file or preset (shallowcaps[:width], deepcaps_like)");
  app->add_option("--routing-iters", spec.routing_iters, "override routing iterations (0 = keep)")->check(CLI::NonNegativeNumber);
  app->add_option("--seed", spec.seed, "seed for stochastic rounding");
  app->add_option("--threads", spec.threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
}

void add_data_flags(CLI::App* app, RunSpec& spec)
{
  app->add_option("--images", spec.images, "IDX images file");
  app->add_option("--labels", spec.labels, "IDX labels file");
  app->add_option("--eval-subset", spec.eval_subset, "evaluate on the first N samples (0 = all)");
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  RunSpec spec;
  CLI::App app{"Fixed-point quantization search for capsule networks", "qcaps"};
  app.require_subcommand(1);

  auto* eval = app.add_subcommand("eval", "measure FP32 or quantized accuracy");
  add_model_flags(eval, spec);
  add_data_flags(eval, spec);
  eval->add_option("--config", spec.config, "quantization config JSON");
  eval->add_option("--out", spec.out, "metrics JSON");

  auto* quantize = app.add_subcommand("quantize", "search per-layer wordlengths under accuracy and memory constraints");
  add_model_flags(quantize, spec);
  add_data_flags(quantize, spec);
  quantize->add_option("--acc-tol", spec.acc_tol, "tolerated relative accuracy loss")->required();
  quantize->add_option("--mem-budget-bits", spec.mem_budget_bits, "weight memory budget in bits");
  quantize->add_option("--mem-budget-frac", spec.mem_budget_frac, "budget as a fraction of the 32-bit weight memory");
  quantize->add_option("--rounding", spec.rounding, "trn, rtn, sr, a comma list, or all");
  quantize->add_option("--floor-bits", spec.floor_bits, "minimum fractional bits");
  quantize->add_option("--out", spec.out, "report JSON (CSV written alongside)");

  auto* compare = app.add_subcommand("compare-roundings", "accuracy per scheme over a uniform wordlength grid");
  add_model_flags(compare, spec);
  add_data_flags(compare, spec);
  compare->add_option("--rounding", spec.rounding, "trn, rtn, sr, a comma list, or all");
  compare->add_option("--grid", spec.grid, "fractional bit counts")->delimiter(',');
  compare->add_option("--out", spec.out, "CSV output");

  auto* synth = app.add_subcommand("synth", "random-init model plus a dataset labelled by its own FP32 predictions");
  add_model_flags(synth, spec);
  synth->add_option("--images", spec.images, "IDX images output");
  synth->add_option("--labels", spec.labels, "IDX labels output");
  synth->add_option("--samples", spec.samples, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--gain", spec.gain, "weight init scale")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

#ifdef _OPENMP
  if (spec.threads > 0) omp_set_num_threads(spec.threads);
#endif

  try {
    if (*eval) return cmd_eval(spec, out);
    if (*quantize) return cmd_quantize(spec, out);
    if (*compare) return cmd_compare_roundings(spec, out);
    if (*synth) return cmd_synth(spec, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

} // namespace qcaps::cli
