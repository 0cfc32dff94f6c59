#include <doctest.h>

#include "cli.hpp"
#include "postapprox/fit.hpp"
#include "postapprox/io.hpp"
#include "test_util.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace postapprox;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "postapprox");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = postapprox::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string dir() {
  const auto d = fs::temp_directory_path() / "postapprox_cli_test";
  fs::create_directories(d);
  return d.string();
}

std::string path(const std::string& name) { return dir() + "/" + name; }

std::string slurp(const std::string& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

// standard normal samples with exact log densities
void write_samples(const std::string& p, std::size_t n, std::uint64_t seed) {
  const Matrix x = testutil::normal_matrix(static_cast<Eigen::Index>(n), 2, seed);
  Vector lp(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) lp(i) = -0.5 * x.row(i).squaredNorm() - std::log(2 * M_PI);
  write_samples_csv(p, SampleSet::validate(x, lp, std::nullopt, {"a", "b"}));
}

}  // namespace

TEST_CASE("fit then pdf") {
  write_samples(path("s.csv"), 600, 1);
  Table pts{{"a", "b"}, testutil::normal_matrix(20, 2, 2)};
  write_csv(path("p.csv"), pts);
  const auto f = invoke({"fit", "--method", "gmm", "--input", path("s.csv"), "--output", path("m.json")});
  REQUIRE(f.code == 0);
  const auto p = invoke({"pdf", "--model", path("m.json"), "--points", path("p.csv"), "--output", path("d.csv")});
  REQUIRE(p.code == 0);
  const Table d = read_csv(path("d.csv"));
  CHECK(d.names == std::vector<std::string>{"a", "b", "density"});
  REQUIRE(d.values.rows() == 20);
  const LoadedModel m = load_model(path("m.json"));
  for (Eigen::Index i = 0; i < 20; ++i) {
    const double direct = std::exp(m.model->log_pdf(pts.values.row(i).transpose()));
    CHECK(std::abs(d.values(i, 2) - direct) <= 1e-12 * std::max(1.0, direct));
    CHECK(d.values(i, 0) == pts.values(i, 0));
  }
  // stdout when no --output is given
  const auto s = invoke({"pdf", "--model", path("m.json"), "--points", path("p.csv")});
  CHECK(s.out == slurp(path("d.csv")));
}

TEST_CASE("serialized models reproduce the fitted density for every method") {
  write_samples(path("s400.csv"), 400, 3);
  const SampleSet s = read_samples_csv(path("s400.csv"));
  const Matrix q = testutil::normal_matrix(100, 2, 4);
  for (const auto& method : fit_methods()) {
    INFO(method);
    const auto f = invoke({"fit", "--method", method, "--input", path("s400.csv"), "--output", path("r.json"),
                        "--bic-patience", "1", "--seed", "7"});
    REQUIRE(f.code == 0);
    FitSpec spec;
    spec.method = method;
    spec.em.bic_patience = 1;
    spec.seed = 7;
    spec.gp.seed = 7;
    const DensityPtr direct = fit_model(s, Bounds::unbounded(2), spec);
    const Vector a = direct->log_pdf_batch(q);
    const Vector b = load_model(path("r.json")).model->log_pdf_batch(q);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      if (std::isinf(a(i))) {
        CHECK(b(i) == a(i));
      } else {
        CHECK(std::abs(std::exp(a(i)) - std::exp(b(i))) <= 1e-12 * std::max(1.0, std::exp(a(i))));
      }
    }
  }
}

TEST_CASE("failures leave no output and use the documented exit codes") {
  fs::remove(path("none.csv"));
  const auto missing = invoke({"pdf", "--model", path("absent.json"), "--points", path("p.csv"), "--output", path("none.csv")});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("error") != std::string::npos);
  CHECK(missing.out.empty());
  CHECK_FALSE(fs::exists(path("none.csv")));
  CHECK_FALSE(fs::exists(path("none.csv.tmp")));

  const auto missing_in = invoke({"fit", "--input", path("absent.csv"), "--output", path("none.json")});
  CHECK(missing_in.code == 1);
  CHECK_FALSE(fs::exists(path("none.json")));

  CHECK(invoke({}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({"fit", "--method", "bogus", "--input", "x", "--output", "y"}).code == 2);
  CHECK(invoke({"fit", "--input", "x"}).code == 2);
  CHECK(invoke({"--help"}).code == 0);
  CHECK(invoke({"fit", "--help"}).code == 0);

  // wrong bound count is a runtime error
  write_samples(path("s.csv"), 600, 1);
  CHECK(invoke({"fit", "--input", path("s.csv"), "--output", path("b.json"), "--lower", "0"}).code == 1);
  // GP models cannot be sampled
  REQUIRE(invoke({"fit", "--method", "gp-se", "--input", path("s.csv"), "--output", path("gp.json")}).code == 0);
  CHECK(invoke({"sample", "--model", path("gp.json")}).code == 1);
}

TEST_CASE("seeded commands are reproducible and MVD_SEED is the default seed") {
  write_samples(path("s.csv"), 600, 1);
  REQUIRE(invoke({"fit", "--input", path("s.csv"), "--output", path("m.json")}).code == 0);
  const auto a = invoke({"sample", "--model", path("m.json"), "-n", "50", "--seed", "11"});
  const auto b = invoke({"sample", "--model", path("m.json"), "-n", "50", "--seed", "11"});
  const auto c = invoke({"sample", "--model", path("m.json"), "-n", "50", "--seed", "12"});
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out != c.out);

  ::setenv("MVD_SEED", "11", 1);
  const auto e = invoke({"sample", "--model", path("m.json"), "-n", "50"});
  ::setenv("MVD_SEED", "12", 1);
  const auto flag = invoke({"sample", "--model", path("m.json"), "-n", "50", "--seed", "11"});
  ::unsetenv("MVD_SEED");
  CHECK(e.out == a.out);
  CHECK(flag.out == a.out);

  const auto fit1 = invoke({"fit", "--method", "vine-mixture", "--input", path("s.csv"), "--output", path("v1.json"), "--seed", "3"});
  const auto fit2 = invoke({"fit", "--method", "vine-mixture", "--input", path("s.csv"), "--output", path("v2.json"), "--seed", "3"});
  REQUIRE(fit1.code == 0);
  CHECK(slurp(path("v1.json")) == slurp(path("v2.json")));

  const auto cv1 = invoke({"cv", "--input", path("s.csv"), "--train-size", "200", "--test-size", "100", "--repeats", "3"});
  const auto cv2 = invoke({"cv", "--input", path("s.csv"), "--train-size", "200", "--test-size", "100", "--repeats", "3"});
  REQUIRE(cv1.code == 0);
  CHECK(cv1.out == cv2.out);
  CHECK(std::count(cv1.out.begin(), cv1.out.end(), '\n') == 4);
}

TEST_CASE("config file values apply unless a flag overrides them") {
  write_samples(path("s.csv"), 600, 1);
  {
    std::ofstream c(path("c.toml"));
    c << "# fit settings\nfit.method=kde\n";
  }
  REQUIRE(invoke({"--config", path("c.toml"), "fit", "--input", path("s.csv"), "--output", path("c1.json")}).code == 0);
  CHECK(load_model(path("c1.json")).model->method() == "kde");
  REQUIRE(invoke({"--config", path("c.toml"), "fit", "--method", "gmm", "--input", path("s.csv"), "--output", path("c2.json")})
              .code == 0);
  CHECK(load_model(path("c2.json")).model->method() == "gmm");
  CHECK(invoke({"--config", path("missing.toml"), "fit", "--input", path("s.csv"), "--output", path("c3.json")}).code == 2);
}

TEST_CASE("evidence on exact normal samples") {
  write_samples(path("s.csv"), 600, 1);
  const auto r = invoke({"evidence", "--input", path("s.csv"), "--method", "gmm"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  // log_post is normalized, so the evidence is 1
  CHECK(std::abs(j["fixed_slope_log_z"].get<double>()) < 0.05);
  CHECK(j["used"] == 600);
  const auto bad = invoke({"evidence", "--input", path("p.csv")});
  CHECK(bad.code == 1);
}

TEST_CASE("two-stage workflow through the command line") {
  const auto s1 = invoke({"seqinf", "--model", "lv", "--stage", "1", "--samples", "300", "--burn-in", "3000", "--thin", "5",
                       "--output", path("st1.csv")});
  REQUIRE(s1.code == 0);
  const SampleSet st1 = read_samples_csv(path("st1.csv"));
  CHECK(st1.size() == 300);
  CHECK(st1.dim() == 7);
  CHECK(st1.dim_names()[5] == "x0");
  REQUIRE(invoke({"fit", "--input", path("st1.csv"), "--columns", "alpha,beta_kill,beta_stress,delta,gamma", "--output",
               path("prior.json"), "--bic-patience", "1"})
              .code == 0);
  CHECK(load_model(path("prior.json")).model->dim() == 5);
  CHECK(invoke({"seqinf", "--model", "lv", "--stage", "2", "--output", path("st2.csv")}).code == 1);
  const auto s2 = invoke({"seqinf", "--model", "lv", "--stage", "2", "--prior-model", path("prior.json"), "--samples", "200",
                       "--burn-in", "2000", "--thin", "2", "--output", path("st2.csv")});
  REQUIRE(s2.code == 0);
  CHECK(read_samples_csv(path("st2.csv")).size() == 200);
  // a prior of the wrong dimension is rejected
  CHECK(invoke({"seqinf", "--model", "signaling", "--stage", "2", "--prior-model", path("prior.json"), "--output",
             path("bad.csv")})
            .code == 1);

  const auto rw = invoke({"reweight", "--model", "lv", "--input", path("st1.csv"), "--output", path("w.csv")});
  REQUIRE(rw.code == 0);
  CHECK(rw.out.rfind("ess=", 0) == 0);
  const SampleSet w = read_samples_csv(path("w.csv"));
  REQUIRE(w.weights().has_value());
  CHECK(w.weights()->sum() == doctest::Approx(1.0));
}

TEST_CASE("experiment suites run from the command line") {
  const auto r = invoke({"experiment", "conjugate-evidence", "--seeds", "2"});
  REQUIRE(r.code == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 3);
  const auto g = invoke({"experiment", "gm-recovery", "--repeats", "2", "--methods", "gmm"});
  REQUIRE(g.code == 0);
  CHECK(g.out.rfind("method,train_size", 0) == 0);
  CHECK(invoke({"experiment", "nonsense"}).code == 2);
  CHECK(invoke({"experiment", "signaling-split", "--methods", "nope"}).code == 1);
}
