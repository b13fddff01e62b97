#include <doctest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "fixtures.hpp"
#include "qcaps/dataset.hpp"
#include "qcaps/model_io.hpp"
#include "qcaps/report.hpp"

using namespace qcaps;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::string& bytes)
{
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string be32(std::uint32_t v)
{
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

std::string idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w, const std::string& pixels)
{
  return be32(0x803) + be32(n) + be32(h) + be32(w) + pixels;
}

std::string idx_labels(const std::string& labels)
{
  return be32(0x801) + be32(static_cast<std::uint32_t>(labels.size())) + labels;
}

CapsModel small_model()
{
  CapsModel m = build_shallowcaps(10, {1, 28, 28}, 1.0 / 8);
  m.randomize(31);
  // A bias that is not zero so bias round trips are exercised.
  Tensor b = m.bias(0);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<float>(0.01 * static_cast<double>(i) - 0.1);
  m.set_bias(0, b);
  return m;
}

} // namespace

TEST_CASE("save/load round trip is bit-identical")
{
  fixture::TempDir dir;
  const CapsModel m = small_model();
  save_model(m, dir / "m.json", dir / "m.bin");
  const CapsModel back = load_model(dir / "m.json", dir / "m.bin", build_shallowcaps(10, {1, 28, 28}, 1.0 / 8));
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    CHECK(back.weight(l) == m.weight(l));
    CHECK(back.bias(l) == m.bias(l));
  }
  std::uint64_t params = 0;
  for (auto p : m.param_counts()) params += p;
  CHECK(std::filesystem::file_size(dir / "m.bin") == 4 * params);

  // Saving again reproduces the same bytes.
  save_model(back, dir / "m2.json", dir / "m2.bin");
  CHECK(slurp(dir / "m.bin") == slurp(dir / "m2.bin"));
  CHECK(slurp(dir / "m.json") == slurp(dir / "m2.json"));
}

TEST_CASE("blob is little-endian float32 in manifest order")
{
  fixture::TempDir dir;
  const CapsModel m = small_model();
  save_model(m, dir / "m.json", dir / "m.bin");
  const std::string blob = slurp(dir / "m.bin");
  const WeightManifest man = manifest_from_json(read_json_file(dir / "m.json"));
  REQUIRE(man.tensors.size() == 5);
  CHECK(man.tensors[0].name == "conv1.weight");
  CHECK(man.tensors[1].name == "conv1.bias");
  CHECK(man.tensors[4].name == "digitcaps.weight");
  const auto& rec = man.tensors[1];
  const auto* p = reinterpret_cast<const unsigned char*>(blob.data() + rec.offset + 4 * 3);
  const std::uint32_t bits = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  float f;
  std::memcpy(&f, &bits, 4);
  CHECK(static_cast<double>(f) == m.bias(0)[3]);
}

TEST_CASE("load rejects malformed manifests and blobs")
{
  fixture::TempDir dir;
  const CapsModel m = small_model();
  save_model(m, dir / "m.json", dir / "m.bin");
  const json good = read_json_file(dir / "m.json");
  const CapsModel arch = build_shallowcaps(10, {1, 28, 28}, 1.0 / 8);
  auto load_with = [&](const json& j) {
    write_json_file(dir / "bad.json", j);
    return load_model(dir / "bad.json", dir / "m.bin", arch);
  };

  json j = good;
  j["magic"] = "QCAPS-MANIFESX";
  CHECK_THROWS_AS(load_with(j), FormatError);
  j = good;
  j["version"] = 2;
  CHECK_THROWS_AS(load_with(j), FormatError);
  j = good;
  j["tensors"][2]["length"] = j["tensors"][2]["length"].get<std::uint64_t>() - 4;
  CHECK_THROWS_AS(load_with(j), FormatError);
  j = good;
  j["tensors"].erase(j["tensors"].begin() + 1);
  CHECK_THROWS_AS(load_with(j), FormatError);
  j = good;
  j["tensors"][1]["name"] = j["tensors"][0]["name"];
  CHECK_THROWS_AS(load_with(j), FormatError);
  j = good;
  j["tensors"][1]["offset"] = 0;
  CHECK_THROWS_AS(load_with(j), FormatError);
  j = good;
  j["architecture"] = "deepcaps_like";
  CHECK_THROWS_AS(load_with(j), FormatError);

  // Wrong architecture shape: the width-1/4 model expects larger tensors.
  CHECK_THROWS_AS(load_model(dir / "m.json", dir / "m.bin", build_shallowcaps(10, {1, 28, 28}, 0.25)), FormatError);

  std::string blob = slurp(dir / "m.bin");
  spit(dir / "short.bin", blob.substr(0, blob.size() - 1));
  try {
    load_model(dir / "m.json", dir / "short.bin", arch);
    FAIL("truncated blob accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }

  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(blob.data(), &nan, 4);
  spit(dir / "nan.bin", blob);
  CHECK_THROWS_AS(load_model(dir / "m.json", dir / "nan.bin", arch), FormatError);

  CHECK_THROWS_AS(load_model(dir / "missing.json", dir / "m.bin", arch), IoError);
}

TEST_CASE("manifest with zero tensors is valid")
{
  WeightManifest empty;
  empty.architecture = "none";
  const WeightManifest back = manifest_from_json(to_json(empty));
  CHECK(back.tensors.empty());
  CHECK(back.architecture == "none");
  CHECK(to_json(back) == to_json(empty));
}

TEST_CASE("architecture documents round-trip")
{
  for (const CapsModel& m : {build_shallowcaps(10, {1, 28, 28}, 1.0 / 8), build_deepcaps_like()}) {
    const CapsModel back = architecture_from_json(architecture_to_json(m));
    CHECK(back.architecture() == m.architecture());
    CHECK(back.param_counts() == m.param_counts());
    CHECK(back.activation_counts() == m.activation_counts());
    CHECK(back.routing_layers() == m.routing_layers());
  }
  CHECK(resolve_architecture("shallowcaps:0.125").layer(0).channels == 32);
  CHECK(resolve_architecture("deepcaps_like").num_layers() == 18);
  CHECK_THROWS(resolve_architecture("no-such-thing"));
  CHECK_THROWS_AS(architecture_from_json(json{{"preset", "resnet"}}), FormatError);
}

TEST_CASE("quant config JSON round trip")
{
  QuantConfig c = QuantConfig::uniform(RoundingScheme::SR, {false, true}, 7);
  c.weight_bits[1] = 3;
  c.routing_bits[1] = 4;
  const json j = to_json(c);
  CHECK(j["routing_bits"][0].is_null());
  CHECK(quant_config_from_json(j) == c);
}

TEST_CASE("IDX loading")
{
  fixture::TempDir dir;
  spit(dir / "zi", idx_images(1, 28, 28, std::string(784, '\0')));
  spit(dir / "zl", idx_labels(std::string(1, '\3')));
  const auto zero = load_idx(dir / "zi", dir / "zl");
  CHECK(zero.images == Tensor({1, 1, 28, 28}));
  CHECK(zero.labels == std::vector<std::uint32_t>{3});

  // Hand-decoded 2 x 2x3 fixture.
  const std::string px{'\x00', '\xff', '\x33', '\x80', '\x01', '\x7f', '\xff', '\x00', '\x00', '\x00', '\x00', '\x66'};
  spit(dir / "fi", idx_images(2, 2, 3, px));
  spit(dir / "fl", idx_labels(std::string{'\x07', '\x00'}));
  const auto fx = load_idx(dir / "fi", dir / "fl");
  CHECK(fx.images.shape() == Shape{2, 1, 2, 3});
  CHECK(fx.images[1] == 1.0);
  CHECK(fx.images[2] == 51.0 / 255.0);
  CHECK(fx.images[3] == 128.0 / 255.0);
  CHECK(fx.images[11] == 0.4);
  CHECK(fx.labels == std::vector<std::uint32_t>{7, 0});

  spit(dir / "ti", idx_images(10, 2, 2, std::string(40, '\1')));
  spit(dir / "tl", idx_labels(std::string(9, '\0')));
  CHECK_THROWS_AS(load_idx(dir / "ti", dir / "tl"), FormatError);

  spit(dir / "bad", be32(0x802) + be32(1) + be32(1) + be32(1) + "x");
  CHECK_THROWS_AS(load_idx(dir / "bad", dir / "zl"), FormatError);
  spit(dir / "short", idx_images(2, 2, 2, std::string(7, '\0')));
  CHECK_THROWS_AS(load_idx(dir / "short", dir / "fl"), FormatError);

  // save_idx is the inverse on byte-valued data.
  save_idx(fx, dir / "si", dir / "sl");
  CHECK(slurp(dir / "si") == slurp(dir / "fi"));
  CHECK(slurp(dir / "sl") == slurp(dir / "fl"));
}

TEST_CASE("reports: entries per path and JSON re-read")
{
  FrameworkInputs in;
  in.profile = {{1000, 5000, 2000}, {400, 300, 160}, {false, false, true}};
  in.acc_fp32 = 1.0;
  in.acc_tol = 0.01;
  in.memory_budget_bits = 8000 * 5;
  in.schemes = {RoundingScheme::TRN, RoundingScheme::SR};
  const AccuracyOracle oracle = [](const QuantConfig& c) {
    // SR needs more weight bits than the budget allows; TRN does not.
    const int need = c.scheme == RoundingScheme::SR ? 6 : 3;
    if (c.weight_bits[0] < need || c.activation_bits[0] < 2) return 0.9;
    return 1.0 - 0.001 / (1 + c.weight_bits[0]);
  };
  const auto outs = run_framework(in, oracle);
  REQUIRE(outs.size() == 2);
  REQUIRE(outs[0].path == SearchPath::A);
  REQUIRE(outs[1].path == SearchPath::B);
  const Selection sel = select_rounding_scheme(outs);
  ReportContext ctx{.architecture = "synthetic", .acc_fp32 = 1.0, .acc_tol = 0.01, .memory_budget_bits = in.memory_budget_bits};

  fixture::TempDir dir;
  write_report(outs, sel, ctx, dir / "report.json");
  const json r = read_json_file(dir / "report.json");
  REQUIRE(r["schemes"].size() == 2);
  CHECK(r["schemes"][0]["configs"].size() == 1);
  CHECK(r["schemes"][0]["configs"][0]["role"] == "model_satisfied");
  CHECK(r["schemes"][1]["configs"].size() == 2);
  CHECK(r["schemes"][1]["configs"][0]["role"] == "model_memory");
  CHECK(r["schemes"][1]["configs"][1]["role"] == "model_accuracy");
  CHECK(r["acc_target"].get<double>() == target_accuracy(1.0, 0.01));

  const auto& m = outs[0].satisfied->metrics;
  const json& e = r["schemes"][0]["configs"][0];
  CHECK(e["metrics"]["accuracy"].get<double>() == m.accuracy);
  CHECK(e["metrics"]["weight_memory_bits"].get<std::uint64_t>() == m.weight_memory_bits);
  CHECK(e["metrics"]["w_mem_reduction"].get<double>() == m.weight_reduction);
  CHECK(e["metrics"]["a_mem_reduction"].get<double>() == m.activation_reduction);
  CHECK(quant_config_from_json(e) == outs[0].satisfied->config);
  CHECK(r["selection"]["configs"][0]["selected_scheme"] == "TRN");

  const std::string csv = slurp(dir / "report.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 1 + 2);
  CHECK(csv.rfind("scheme,path,role,", 0) == 0);
}
