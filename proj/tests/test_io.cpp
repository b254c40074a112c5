#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "slowfast/benchmarks.hpp"
#include "slowfast/io.hpp"

using namespace slowfast;

namespace {

std::filesystem::path temp_file(const std::string &name) {
  return std::filesystem::temp_directory_path() / ("slowfast_test_io_" + name);
}

json linear_doc() {
  return json::parse(R"({
    "name": "linear", "dimension": 1, "epsilon": 0.01,
    "A": [[-1]], "B": -2,
    "f": {"kind": "linear", "My": [[1]], "lipschitz": 1},
    "g": {"kind": "zero"},
    "fast_noise": {"sigma": [[1]]},
    "x0": [1], "y0": 0
  })");
}

} // namespace

TEST(ModelJson, ParsesDocument) {
  const SlowFastModel m = model_from_json(linear_doc());
  EXPECT_EQ(m.dim(), 1);
  EXPECT_EQ(m.A(0, 0), -1.0);
  EXPECT_EQ(m.B(0, 0), -2.0);
  EXPECT_EQ(m.slow.sigma(0, 0), 0.0);
  EXPECT_EQ(*m.f.constants.lipschitz, 1.0);
  EXPECT_DOUBLE_EQ(m.f(Vector::Constant(1, 5.0), Vector::Constant(1, 0.75))[0], 0.75);
}

TEST(ModelJson, RoundTripPreservesEvaluation) {
  SlowFastModel m = tanh_benchmark(0.02);
  m.slow.jumps.intensity = 2.0;
  m.slow.jumps.size = UniformJumps{-0.5, 0.5};
  DiscreteJumps d;
  d.atoms = {{Vector::Constant(1, 0.5), 0.25}, {Vector::Constant(1, -0.5), 0.75}};
  m.fast.jumps.intensity = 0.5;
  m.fast.jumps.size = d;
  m.gamma_A_prime = 1.5;
  const SlowFastModel r = model_from_json(json::parse(model_to_json(m).dump()));
  EXPECT_EQ(model_to_json(r), model_to_json(m));
  const Vector x = Vector::Constant(1, 0.3), y = Vector::Constant(1, -1.2);
  EXPECT_EQ(r.f(x, y), m.f(x, y));
  EXPECT_EQ(r.g(x, y), m.g(x, y));
  EXPECT_EQ(*r.gamma_A_prime, 1.5);
}

TEST(ModelJson, ExpressionDrifts) {
  json j = linear_doc();
  j["f"] = "sin(x1) + y1";
  j["g"] = json::array({"0.5*tanh(x1)"});
  const SlowFastModel m = model_from_json(j);
  EXPECT_NEAR(m.f(Vector::Constant(1, 0.5), Vector::Constant(1, 2.0))[0], std::sin(0.5) + 2.0, 1e-15);
  const SlowFastModel r = model_from_json(model_to_json(m));
  EXPECT_EQ(model_to_json(r)["f"], model_to_json(m)["f"]);
}

TEST(ModelJson, ShapeErrors) {
  json j = linear_doc();
  j["A"] = json::array({json::array({-1, 0})});
  EXPECT_THROW((void)model_from_json(j), IoError);
  j = linear_doc();
  j.erase("B");
  EXPECT_THROW((void)model_from_json(j), IoError);
  j = linear_doc();
  j["f"] = {{"kind", "cubic"}};
  EXPECT_THROW((void)model_from_json(j), IoError);
  j = linear_doc();
  j["x0"] = "one";
  EXPECT_THROW((void)model_from_json(j), IoError);
  EXPECT_THROW((void)model_from_json(json::array()), IoError);
}

TEST(Files, SaveAndLoad) {
  const auto path = temp_file("model.json");
  save_model(linear_benchmark(), path.string());
  const SlowFastModel m = load_model(path.string());
  EXPECT_EQ(model_to_json(m), model_to_json(linear_benchmark()));
  std::filesystem::remove(path);
}

TEST(Files, MissingAndMalformed) {
  EXPECT_THROW((void)load_model("/nonexistent/model.json"), IoError);
  const auto path = temp_file("bad.json");
  std::ofstream(path) << "{ \"A\": ";
  EXPECT_THROW((void)read_json_file(path.string()), IoError);
  std::filesystem::remove(path);
}

TEST(Csv, KernelLayout) {
  KernelEstimate k;
  k.lags = {0.0, 0.5};
  k.H = {Matrix::Constant(1, 1, 0.25), Matrix::Constant(1, 1, 0.125)};
  k.stderr_ = {Matrix::Constant(1, 1, 0.0078125), Matrix::Constant(1, 1, 0.015625)};
  std::ostringstream os;
  write_kernel_csv(os, k);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "s,H_11,stderr_11");
  std::getline(is, line);
  EXPECT_EQ(line, "0,0.25,0.0078125");
}

TEST(Csv, RateLayoutIsDeterministic) {
  RateReport r;
  r.points.push_back({0.1, 0.2, 0.5, 0.3, 0.01, 100, 0, false});
  std::ostringstream a, b;
  write_rate_csv(a, r);
  write_rate_csv(b, r);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "epsilon,error,stderr");
}

TEST(Reports, DeviationModelJson) {
  const SlowFastModel m = linear_benchmark();
  DeviationOptions o;
  o.mode = DeviationOptions::HtildeMode::Override;
  o.override_ = Matrix::Constant(1, 1, 0.25);
  const json j = to_json(build_deviation_model(m, build_averaged_model(m), o));
  EXPECT_TRUE(j.at("htilde_constant").get<bool>());
  EXPECT_FALSE(j.at("literal_drift").get<bool>());
}
