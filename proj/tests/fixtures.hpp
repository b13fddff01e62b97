// Synthetic accuracy models shared by the search tests.
#ifndef QCAPS_TESTS_FIXTURES_HPP_
#define QCAPS_TESTS_FIXTURES_HPP_

#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <random>
#include <vector>

#include "qcaps/inference.hpp"

namespace fixture {

/// acc = top - sum_l (w_l 2^-Qw_l + a_l 2^-Qa_l + d_l 2^-Qdr_l).
/// Non-decreasing in every wordlength; deterministic.
struct SmoothAccuracy
{
  double top = 1.0;
  std::vector<double> w, a, d;

  static SmoothAccuracy random(std::size_t layers, std::mt19937_64& gen)
  {
    std::uniform_real_distribution<double> ud(0.0, 4.0);
    SmoothAccuracy s;
    std::uniform_real_distribution<double> top(0.6, 1.0);
    s.top = top(gen);
    for (std::size_t l = 0; l < layers; ++l) {
      s.w.push_back(ud(gen));
      s.a.push_back(ud(gen));
      s.d.push_back(ud(gen) / 4);
    }
    return s;
  }

  double operator()(const qcaps::QuantConfig& cfg) const
  {
    double loss = 0.0;
    for (std::size_t l = 0; l < w.size(); ++l) {
      loss += w[l] * std::ldexp(1.0, -cfg.weight_bits[l]);
      loss += a[l] * std::ldexp(1.0, -cfg.activation_bits[l]);
      if (cfg.routing_bits[l]) loss += d[l] * std::ldexp(1.0, -*cfg.routing_bits[l]);
    }
    return std::max(0.0, top - loss);
  }
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir
{
public:
  TempDir()
  {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("qcaps-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir()
  {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

} // namespace fixture

#endif // QCAPS_TESTS_FIXTURES_HPP_
