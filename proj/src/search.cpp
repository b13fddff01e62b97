#include "qcaps/search.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

namespace qcaps {

ModelProfile profile_of(const CapsModel& model)
{
  return ModelProfile{model.param_counts(), model.activation_counts(), model.routing_layers()};
}

AccuracyOracle make_model_oracle(const CapsModel& model, const LabeledDataset& data, std::uint64_t seed)
{
  return [&model, &data, seed](const QuantConfig& cfg) { return evaluate(model, data, cfg, seed); };
}

double target_accuracy(double acc_fp32, double acc_tol) noexcept
{
  return acc_fp32 * (1.0 - acc_tol);
}

double step1_threshold(double acc_fp32, double acc_tol) noexcept
{
  return acc_fp32 * (1.0 - acc_tol * 0.05);
}

void set_bits(QuantConfig& cfg, SearchTarget target, std::size_t l, int bits)
{
  if (target != SearchTarget::Activations) cfg.weight_bits.at(l) = bits;
  if (target != SearchTarget::Weights) {
    cfg.activation_bits.at(l) = bits;
    if (cfg.routing_bits.at(l)) cfg.routing_bits[l] = bits;
  }
}

int get_bits(const QuantConfig& cfg, SearchTarget target, std::size_t l)
{
  return target == SearchTarget::Weights ? cfg.weight_bits.at(l) : cfg.activation_bits.at(l);
}

namespace {

QuantConfig with_uniform(const QuantConfig& base, SearchTarget target, int bits)
{
  QuantConfig cfg = base;
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) set_bits(cfg, target, l, bits);
  return cfg;
}

} // namespace

UniformSearchResult binary_search_uniform(const AccuracyOracle& oracle, SearchTarget target, const QuantConfig& base,
                                          int q_init, double acc_min)
{
  if (q_init < 1) throw std::invalid_argument("binary_search_uniform: q_init must be >= 1");

  UniformSearchResult res;
  std::optional<QuantConfig> best;
  double best_acc = -1.0;
  std::optional<double> hi_acc;

  auto probe = [&](int q) {
    QuantConfig cfg = with_uniform(base, target, q);
    const double acc = oracle(cfg);
    ++res.oracle_calls;
    if (acc > best_acc) {
      best_acc = acc;
      best = cfg;
    }
    return acc;
  };

  int lo = 1, hi = q_init;
  while (lo < hi) {
    const int mid = lo + (hi - lo) / 2;
    const double acc = probe(mid);
    if (acc >= acc_min) {
      hi = mid;
      hi_acc = acc;
    } else {
      lo = mid + 1;
    }
  }
  if (!hi_acc) {
    // hi == q_init was never probed.
    const double acc = probe(hi);
    if (acc < acc_min)
      throw SearchInfeasible("binary search: no wordlength in [1, " + std::to_string(q_init) + "] reaches accuracy " +
                                 std::to_string(acc_min),
                             best, best_acc);
    hi_acc = acc;
  }
  res.bits = hi;
  res.config = with_uniform(base, target, hi);
  res.accuracy = *hi_acc;
  return res;
}

std::vector<int> memory_budget_wordlengths(std::span<const std::uint64_t> params, std::uint64_t budget, int floor,
                                           std::optional<int> ceiling)
{
  if (params.empty()) throw std::invalid_argument("memory_budget_wordlengths: no layers");
  if (floor < 0) throw std::invalid_argument("memory_budget_wordlengths: floor must be >= 0");
  for (auto p : params)
    if (p == 0) throw std::invalid_argument("memory_budget_wordlengths: every layer needs P^l > 0");

  using wide = unsigned __int128;
  auto cost = [&](std::uint64_t q0) {
    wide total = 0;
    for (std::size_t l = 0; l < params.size(); ++l) {
      const std::uint64_t q = q0 >= l + static_cast<std::uint64_t>(floor) ? q0 - l : static_cast<std::uint64_t>(floor);
      total += static_cast<wide>(params[l]) * q;
    }
    return total;
  };

  const auto fl = static_cast<std::uint64_t>(floor);
  if (cost(fl) > budget)
    throw BudgetInfeasible("memory budget of " + std::to_string(budget) + " bits is below the all-floor cost");

  // cost(q0) >= P^0 * q0, so q0 <= budget / P^0.
  std::uint64_t lo = fl, hi = std::max(fl, budget / params[0]);
  while (lo < hi) {
    const std::uint64_t mid = lo + (hi - lo + 1) / 2;
    if (cost(mid) <= budget)
      lo = mid;
    else
      hi = mid - 1;
  }
  std::uint64_t q0 = lo;
  if (ceiling) q0 = std::max(fl, std::min<std::uint64_t>(q0, static_cast<std::uint64_t>(std::max(*ceiling, 0))));

  std::vector<int> out;
  for (std::size_t l = 0; l < params.size(); ++l)
    out.push_back(static_cast<int>(q0 >= l + fl ? q0 - l : fl));
  return out;
}

LayerwiseResult layerwise_quantization(const AccuracyOracle& oracle, SearchTarget target, const QuantConfig& base,
                                       std::span<const int> q_init, double acc_min, int floor)
{
  const std::size_t L = base.num_layers();
  if (q_init.size() != L) throw std::invalid_argument("layerwise_quantization: q_init has wrong length");

  LayerwiseResult res;
  res.bits.assign(q_init.begin(), q_init.end());
  res.config = base;
  for (std::size_t l = 0; l < L; ++l) set_bits(res.config, target, l, res.bits[l]);

  double acc = oracle(res.config);
  ++res.oracle_calls;
  if (acc < acc_min)
    throw SearchInfeasible("layer-wise search: initial wordlengths already below accuracy " + std::to_string(acc_min),
                           res.config, acc);

  auto shift_suffix = [&](std::size_t start, int delta) {
    for (std::size_t l = start; l < L; ++l) {
      res.bits[l] += delta;
      set_bits(res.config, target, l, res.bits[l]);
    }
  };

  for (std::size_t start = 1; start < L; ++start) {
    for (;;) {
      if (std::any_of(res.bits.begin() + static_cast<std::ptrdiff_t>(start), res.bits.end(),
                      [floor](int b) { return b - 1 < floor; })) {
        res.floor_reached = true;
        break;
      }
      shift_suffix(start, -1);
      const double a = oracle(res.config);
      ++res.oracle_calls;
      if (a < acc_min) {
        shift_suffix(start, +1);
        break;
      }
      acc = a;
    }
  }
  res.accuracy = acc;
  return res;
}

DrQuantResult dr_quantization(const AccuracyOracle& oracle, const QuantConfig& base, std::size_t layer, int q_init,
                              double acc_min, int floor)
{
  if (layer >= base.num_layers() || !base.routing_bits[layer])
    throw std::invalid_argument("dr_quantization: layer " + std::to_string(layer) + " does not use dynamic routing");

  DrQuantResult res;
  res.config = base;
  res.bits = q_init;
  res.config.routing_bits[layer] = q_init;
  res.accuracy = oracle(res.config);
  ++res.oracle_calls;
  if (res.accuracy < acc_min)
    throw SearchInfeasible("routing search: initial Q_DR already below accuracy " + std::to_string(acc_min), res.config,
                           res.accuracy);

  while (res.bits - 1 >= floor) {
    QuantConfig trial = res.config;
    trial.routing_bits[layer] = res.bits - 1;
    const double acc = oracle(trial);
    ++res.oracle_calls;
    if (acc < acc_min) break;
    res.config = std::move(trial);
    res.accuracy = acc;
    --res.bits;
  }
  return res;
}

std::uint64_t weight_memory_bits(std::span<const std::uint64_t> params, std::span<const int> weight_bits)
{
  if (params.size() != weight_bits.size()) throw std::invalid_argument("weight_memory_bits: per-layer entries incomplete");
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < params.size(); ++l)
    total += params[l] * static_cast<std::uint64_t>(kIntegerBits + weight_bits[l]);
  return total;
}

std::uint64_t activation_memory_bits(std::span<const std::uint64_t> activations, std::span<const int> activation_bits)
{
  if (activations.size() != activation_bits.size())
    throw std::invalid_argument("activation_memory_bits: per-layer entries incomplete");
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < activations.size(); ++l)
    total += activations[l] * static_cast<std::uint64_t>(kIntegerBits + activation_bits[l]);
  return total;
}

std::uint64_t weight_memory_bits(const CapsModel& model, std::span<const int> weight_bits)
{
  const auto p = model.param_counts();
  return weight_memory_bits(p, weight_bits);
}

std::uint64_t activation_memory_bits(const CapsModel& model, std::span<const int> activation_bits)
{
  const auto a = model.activation_counts();
  return activation_memory_bits(a, activation_bits);
}

ConfigMetrics measure(const ModelProfile& profile, const QuantConfig& cfg, double accuracy)
{
  ConfigMetrics m;
  m.accuracy = accuracy;
  m.weight_memory_bits = weight_memory_bits(profile.params, cfg.weight_bits);
  m.activation_memory_bits = activation_memory_bits(profile.activations, cfg.activation_bits);
  std::uint64_t pw = 0, pa = 0;
  for (auto p : profile.params) pw += p;
  for (auto a : profile.activations) pa += a;
  m.weight_reduction = m.weight_memory_bits ? 32.0 * static_cast<double>(pw) / static_cast<double>(m.weight_memory_bits) : 0.0;
  m.activation_reduction =
      m.activation_memory_bits ? 32.0 * static_cast<double>(pa) / static_cast<double>(m.activation_memory_bits) : 0.0;
  return m;
}

std::string_view to_string(SearchPath p) noexcept
{
  switch (p) {
  case SearchPath::A: return "A";
  case SearchPath::B: return "B";
  case SearchPath::Infeasible: return "infeasible";
  }
  return "?";
}

SearchOutcome run_framework(const FrameworkInputs& in, RoundingScheme scheme, const AccuracyOracle& oracle)
{
  SearchOutcome out;
  out.scheme = scheme;
  const std::size_t L = in.profile.num_layers();
  if (L == 0) throw std::invalid_argument("run_framework: empty model profile");
  if (!(in.acc_tol >= 0.0 && in.acc_tol < 1.0)) throw std::invalid_argument("run_framework: acc_TOL must be in [0, 1)");
  if (in.memory_budget_bits == 0) throw std::invalid_argument("run_framework: memory budget must be > 0");

  std::map<QuantConfig, double> cache;
  const AccuracyOracle memo = [&](const QuantConfig& cfg) {
    if (auto it = cache.find(cfg); it != cache.end()) return it->second;
    const double acc = oracle(cfg);
    ++out.oracle_calls;
    cache.emplace(cfg, acc);
    return acc;
  };
  auto scored = [&](const QuantConfig& cfg) { return ScoredConfig{cfg, measure(in.profile, cfg, memo(cfg))}; };

  const double acc_target = target_accuracy(in.acc_fp32, in.acc_tol);
  const QuantConfig start = QuantConfig::uniform(scheme, in.profile.routing, in.q_init);

  // Step 1: uniform weights + activations.
  UniformSearchResult s1;
  try {
    s1 = binary_search_uniform(memo, SearchTarget::WeightsAndActivations, start, in.q_init,
                               step1_threshold(in.acc_fp32, in.acc_tol));
  } catch (const SearchInfeasible& e) {
    out.note = std::string("step 1: ") + e.what();
    return out;
  }
  out.step1_bits = s1.bits;

  // Step 2: weights from the memory budget, one bit less per layer.
  std::vector<int> wordlengths;
  try {
    wordlengths = memory_budget_wordlengths(in.profile.params, in.memory_budget_bits, kIntegerBits + in.floor_bits,
                                            kIntegerBits + s1.bits);
  } catch (const BudgetInfeasible& e) {
    out.note = std::string("step 2: ") + e.what();
    return out;
  }
  QuantConfig mm = s1.config;
  for (std::size_t l = 0; l < L; ++l) mm.weight_bits[l] = wordlengths[l] - kIntegerBits;
  out.memory = scored(mm);
  const double acc_mm = out.memory->metrics.accuracy;
  out.acc_mm = acc_mm;

  try {
    if (acc_mm > acc_target) {
      // Step 3A: layer-wise activations.
      const std::vector<int> qa(L, s1.bits);
      const auto lw = layerwise_quantization(memo, SearchTarget::Activations, mm, qa,
                                             acc_target + 0.5 * (acc_mm - acc_target), in.floor_bits);
      // Step 4A: routing internals, one layer at a time.
      QuantConfig cfg = lw.config;
      for (std::size_t l = 0; l < L; ++l) {
        if (!in.profile.routing[l]) continue;
        cfg = dr_quantization(memo, cfg, l, cfg.activation_bits[l], acc_target, in.floor_bits).config;
      }
      out.path = SearchPath::A;
      out.satisfied = scored(cfg);
    } else {
      // Step 3B: weights only, uniform then layer-wise.
      const auto uw = binary_search_uniform(memo, SearchTarget::Weights, s1.config, s1.bits, acc_target);
      const auto lw = layerwise_quantization(memo, SearchTarget::Weights, uw.config, uw.config.weight_bits, acc_target,
                                             in.floor_bits);
      out.path = SearchPath::B;
      out.accuracy = scored(lw.config);
    }
  } catch (const SearchInfeasible& e) {
    out.path = SearchPath::Infeasible;
    out.satisfied.reset();
    out.accuracy.reset();
    out.note = e.what();
  }
  return out;
}

std::vector<SearchOutcome> run_framework(const FrameworkInputs& in, const AccuracyOracle& oracle)
{
  std::vector<SearchOutcome> out;
  for (RoundingScheme s : in.schemes) out.push_back(run_framework(in, s, oracle));
  return out;
}

Selection select_rounding_scheme(std::span<const SearchOutcome> outcomes)
{
  if (outcomes.empty()) throw std::invalid_argument("select_rounding_scheme: no outcomes");

  const SearchOutcome* best_a = nullptr;
  auto key_a = [](const SearchOutcome& o) {
    const auto& m = o.satisfied->metrics;
    return std::tie(m.weight_memory_bits, m.activation_memory_bits, o.scheme, o.satisfied->config);
  };
  for (const auto& o : outcomes)
    if (o.path == SearchPath::A && o.satisfied && (!best_a || key_a(o) < key_a(*best_a))) best_a = &o;

  Selection sel;
  if (best_a) {
    sel.path = SearchPath::A;
    sel.configs.push_back({"model_satisfied", best_a->scheme, *best_a->satisfied});
    return sel;
  }

  const SearchOutcome* best_mem = nullptr;
  const SearchOutcome* best_acc = nullptr;
  auto key_mem = [](const SearchOutcome& o) {
    return std::tuple<double, RoundingScheme, const QuantConfig&>(-o.memory->metrics.accuracy, o.scheme, o.memory->config);
  };
  auto key_acc = [](const SearchOutcome& o) {
    return std::tuple<std::uint64_t, RoundingScheme, const QuantConfig&>(o.accuracy->metrics.weight_memory_bits, o.scheme,
                                                                      o.accuracy->config);
  };
  for (const auto& o : outcomes) {
    if (o.path != SearchPath::B || !o.memory || !o.accuracy) continue;
    if (!best_mem || key_mem(o) < key_mem(*best_mem)) best_mem = &o;
    if (!best_acc || key_acc(o) < key_acc(*best_acc)) best_acc = &o;
  }
  if (!best_mem) throw std::invalid_argument("select_rounding_scheme: no feasible outcome");
  sel.path = SearchPath::B;
  sel.configs.push_back({"model_memory", best_mem->scheme, *best_mem->memory});
  sel.configs.push_back({"model_accuracy", best_acc->scheme, *best_acc->accuracy});
  return sel;
}

} // namespace qcaps
