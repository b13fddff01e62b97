#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "fixtures.hpp"
#include "qcaps/cli.hpp"
#include "qcaps/model_io.hpp"
#include "qcaps/report.hpp"

namespace {

struct CliResult
{
  int code;
  std::string out, err;
};

CliResult run_cli(const std::vector<std::string>& args)
{
  std::ostringstream out, err;
  const int code = qcaps::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// A synthesized width-1/8 ShallowCaps with a teacher-labelled dataset.
struct Workspace
{
  fixture::TempDir dir;
  std::vector<std::string> model_flags() const
  {
    return {"--arch", "shallowcaps:0.125", "--manifest", (dir / "m.json").string(), "--blob", (dir / "m.bin").string(),
            "--images", (dir / "i.idx").string(), "--labels", (dir / "l.idx").string()};
  }
  explicit Workspace(int samples = 16)
  {
    std::vector<std::string> args{"synth", "--samples", std::to_string(samples), "--seed", "5"};
    for (const auto& a : model_flags()) args.push_back(a);
    const auto r = run_cli(args);
    REQUIRE(r.code == 0);
  }
  std::vector<std::string> with(std::vector<std::string> head) const
  {
    for (const auto& a : model_flags()) head.push_back(a);
    return head;
  }
};

} // namespace

TEST_CASE("cli eval on a synthesized model")
{
  Workspace ws;
  const auto r = run_cli(ws.with({"eval"}));
  CHECK(r.code == 0);
  CHECK(r.out.find("fp32 accuracy: 1.0000 (16 samples)") != std::string::npos);

  const auto again = run_cli(ws.with({"eval"}));
  CHECK(again.out == r.out);

  qcaps::write_json_file(ws.dir / "cfg.json",
                         qcaps::to_json(qcaps::QuantConfig::uniform(qcaps::RoundingScheme::SR, {false, false, true}, 20)));
  const auto q = run_cli(ws.with({"eval", "--config", (ws.dir / "cfg.json").string(), "--out", (ws.dir / "e.json").string()}));
  CHECK(q.code == 0);
  CHECK(q.out.find("quantized accuracy") != std::string::npos);
  CHECK(std::filesystem::exists(ws.dir / "e.json"));
}

TEST_CASE("cli errors name the missing path")
{
  Workspace ws;
  auto args = ws.with({"eval"});
  const std::string missing = (ws.dir / "nope.idx").string();
  for (std::size_t i = 0; i + 1 < args.size(); ++i)
    if (args[i] == "--images") args[i + 1] = missing;
  const auto r = run_cli(args);
  CHECK(r.code != 0);
  CHECK(r.err.find(missing) != std::string::npos);
  CHECK(r.err.find("--images") != std::string::npos);

  CHECK(run_cli({"eval"}).code != 0);
  CHECK(run_cli({"frobnicate"}).code != 0);
  CHECK(run_cli(ws.with({"quantize", "--out", (ws.dir / "r.json").string()})).code != 0); // --acc-tol missing
}

TEST_CASE("cli quantize writes one entry per scheme and is deterministic")
{
  Workspace ws;
  const std::string r1 = (ws.dir / "r1.json").string(), r2 = (ws.dir / "r2.json").string();
  const auto a = run_cli(ws.with({"quantize", "--acc-tol", "0.1", "--mem-budget-frac", "0.3", "--rounding", "all", "--seed",
                                  "9", "--threads", "1", "--out", r1}));
  REQUIRE(a.code == 0);
  const auto b = run_cli(ws.with({"quantize", "--acc-tol", "0.1", "--mem-budget-frac", "0.3", "--rounding", "all", "--seed",
                                  "9", "--threads", "3", "--out", r2}));
  REQUIRE(b.code == 0);
  CHECK(slurp(r1) == slurp(r2));
  CHECK(slurp(qcaps::csv_path_for(r1)) == slurp(qcaps::csv_path_for(r2)));

  const auto report = qcaps::read_json_file(r1);
  CHECK(report["schemes"].size() == 3);
  CHECK(report["acc_target"].get<double>() == doctest::Approx(0.9));
  CHECK(report["acc_fp32"].get<double>() == 1.0);
}

TEST_CASE("cli compare-roundings grid")
{
  Workspace ws;
  const std::string csv = (ws.dir / "c.csv").string();
  const auto r = run_cli(ws.with({"compare-roundings", "--out", csv}));
  REQUIRE(r.code == 0);
  const std::string text = slurp(csv);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 12);
  CHECK(text.rfind("scheme,fractional_bits,wordlength,accuracy", 0) == 0);

  const auto narrow = run_cli(ws.with({"compare-roundings", "--rounding", "sr", "--grid", "3,5", "--out", csv}));
  REQUIRE(narrow.code == 0);
  const std::string t2 = slurp(csv);
  CHECK(std::count(t2.begin(), t2.end(), '\n') == 1 + 2);
}
