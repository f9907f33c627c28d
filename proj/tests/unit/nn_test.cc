// Copyright 2026 The Dexscope Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dexscope/nn.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <unistd.h>

#include "dexscope/errors.h"
#include "gtest/gtest.h"

namespace dexscope {
namespace {

using MlpD = Mlp<double>;

// Max relative error between analytic and central-difference gradients of
// L = sum(c .* f(params)) for a random fixed c.
template <typename F>
double GradCheck(Eigen::VectorXd* params, const Eigen::VectorXd& analytic,
                 F loss) {
  const double h = 1e-5;
  double worst = 0.0;
  for (int i = 0; i < params->size(); ++i) {
    const double keep = (*params)[i];
    (*params)[i] = keep + h;
    const double up = loss();
    (*params)[i] = keep - h;
    const double down = loss();
    (*params)[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

TEST(MlpTest, ZeroWeightsGiveBias) {
  MlpD net({3, 2}, Activation::kTanh, Activation::kIdentity);
  net.Bias(0) << 0.5, -1.25;
  const Eigen::MatrixXd y = net.Forward(Eigen::MatrixXd::Random(3, 4));
  for (int j = 0; j < 4; ++j) {
    EXPECT_EQ(y(0, j), 0.5);
    EXPECT_EQ(y(1, j), -1.25);
  }
}

TEST(MlpTest, LinearLayerGradient) {
  MlpD net({3, 2});
  Rng rng(1);
  net.Init(&rng);
  Eigen::MatrixXd x(3, 1);
  x << 0.3, -0.7, 1.1;
  MlpD::Cache cache;
  const Eigen::MatrixXd y = net.Forward(x, &cache);
  Eigen::VectorXd grad;
  net.Backward(cache, y, &grad);  // loss = 0.5 |y|^2
  const Eigen::MatrixXd expect = y * x.transpose();
  const Eigen::Map<const Eigen::MatrixXd> gw(grad.data(), 2, 3);
  EXPECT_LT((gw - expect).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((grad.tail(2) - y.col(0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MlpTest, ShapeMismatchThrows) {
  MlpD net({3, 4, 2});
  EXPECT_THROW(net.Forward(Eigen::MatrixXd::Zero(2, 1)), ConfigError);
  MlpD::Cache cache;
  net.Forward(Eigen::MatrixXd::Zero(3, 2), &cache);
  Eigen::VectorXd g;
  EXPECT_THROW(net.Backward(cache, Eigen::MatrixXd::Zero(2, 3), &g),
               ConfigError);
  EXPECT_THROW(MlpD({3}), ConfigError);
  EXPECT_THROW(MlpD({3, 0}), ConfigError);
}

class MlpGradTest
    : public ::testing::TestWithParam<std::tuple<std::vector<int>, bool>> {};

TEST_P(MlpGradTest, MatchesFiniteDifferences) {
  const auto& [sizes, out_bias] = GetParam();
  MlpD net(sizes, Activation::kTanh, Activation::kIdentity, out_bias);
  Rng rng(7);
  net.Init(&rng, 1.0);
  for (int i = 0; i < net.num_params(); ++i) {
    net.params()[i] += 0.1 * rng.Uniform(-1, 1);
  }
  Eigen::MatrixXd x(sizes.front(), 3);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.Uniform(-1, 1);
  Eigen::MatrixXd c(sizes.back(), 3);
  for (int i = 0; i < c.size(); ++i) c.data()[i] = rng.Uniform(-1, 1);
  MlpD::Cache cache;
  net.Forward(x, &cache);
  Eigen::VectorXd grad;
  const Eigen::MatrixXd dx = net.Backward(cache, c, &grad);
  auto loss = [&] { return net.Forward(x).cwiseProduct(c).sum(); };
  EXPECT_LT(GradCheck(&net.params(), grad, loss), 1e-4);
  // Input gradient too.
  Eigen::VectorXd xv = Eigen::Map<Eigen::VectorXd>(x.data(), x.size());
  Eigen::VectorXd gx = Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size());
  auto loss_x = [&] {
    const Eigen::MatrixXd xm =
        Eigen::Map<Eigen::MatrixXd>(xv.data(), x.rows(), x.cols());
    return net.Forward(xm).cwiseProduct(c).sum();
  };
  EXPECT_LT(GradCheck(&xv, gx, loss_x), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(
    Architectures, MlpGradTest,
    ::testing::Values(std::make_tuple(std::vector<int>{4, 6, 3}, true),
                      std::make_tuple(std::vector<int>{5, 8, 8, 8, 2}, true),
                      std::make_tuple(std::vector<int>{3, 7, 7, 4}, false)));

TEST(MlpTest, CastAndTensorsRoundTrip) {
  MlpD net({4, 5, 3}, Activation::kTanh, Activation::kIdentity, false);
  Rng rng(3);
  net.Init(&rng);
  TensorMap t;
  net.ToTensors("policy", &t);
  EXPECT_FALSE(t.count("policy.layer1.bias"));
  const MlpD back = MlpD::FromTensors(t, "policy");
  EXPECT_EQ(back.params(), net.params());
  EXPECT_EQ(back.sizes(), net.sizes());
  EXPECT_FALSE(back.has_bias(1));
  const Mlp<float> f = net.Cast<float>();
  const MlpD again = f.Cast<double>();
  EXPECT_LT((again.params() - net.params()).cwiseAbs().maxCoeff(), 1e-7);
  // Float parameters survive the double-valued tensors exactly.
  TensorMap tf;
  f.ToTensors("p", &tf);
  EXPECT_EQ(Mlp<float>::FromTensors(tf, "p").params(), f.params());
  EXPECT_THROW(MlpD::FromTensors(t, "value"), ConfigError);
}

TEST(DiagGaussianTest, ClosedForms) {
  for (int d : {1, 3, 7}) {
    DiagGaussian g(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d));
    EXPECT_NEAR(g.LogProb(Eigen::VectorXd::Zero(d)),
                -0.5 * d * std::log(2 * std::numbers::pi), 1e-14);
  }
  DiagGaussian one(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
  EXPECT_NEAR(one.Entropy(), 1.4189385332046727, 1e-14);
  Eigen::VectorXd mu(2);
  mu << 0.3, -2.0;
  DiagGaussian g(mu, Eigen::VectorXd::Constant(2, 0.4));
  EXPECT_EQ(g.Sample(Eigen::VectorXd::Zero(2)), mu);
}

TEST(DiagGaussianTest, LogStdIsClamped) {
  Eigen::VectorXd ls(3);
  ls << -9.0, 0.0, 5.0;
  DiagGaussian g(Eigen::VectorXd::Zero(3), ls);
  EXPECT_EQ(g.log_std[0], -5.0);
  EXPECT_EQ(g.log_std[2], 2.0);
}

TEST(DiagGaussianTest, SampleMoments) {
  Eigen::VectorXd mu(2), ls(2);
  mu << 1.0, -1.0;
  ls << std::log(0.5), std::log(2.0);
  DiagGaussian g(mu, ls);
  Rng rng(4);
  const int n = 200000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(2), sq = sum;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd s = g.Sample(&rng);
    sum += s;
    sq += s.cwiseAbs2();
  }
  const Eigen::VectorXd mean = sum / n;
  const Eigen::VectorXd var = sq / n - mean.cwiseAbs2();
  EXPECT_NEAR(mean[0], 1.0, 0.01);
  EXPECT_NEAR(mean[1], -1.0, 0.02);
  EXPECT_NEAR(var[0], 0.25, 0.01);
  EXPECT_NEAR(var[1], 4.0, 0.1);
}

TEST(AdamTest, ZeroGradientKeepsParams) {
  Eigen::VectorXd p(3);
  p << 1, 2, 3;
  AdamState<double> st;
  st.m = Eigen::VectorXd::Constant(3, 0.5);
  st.v = Eigen::VectorXd::Constant(3, 0.25);
  st.step = 4;
  const Eigen::VectorXd keep = p;
  AdamStep(AdamConfig{}, Eigen::VectorXd::Zero(3), &p, &st);
  EXPECT_EQ(st.m, Eigen::VectorXd::Constant(3, 0.45));
  EXPECT_EQ(st.v, Eigen::VectorXd::Constant(3, 0.25 * 0.999));
  // Momentum still moves parameters; only the gradient was zero.
  EXPECT_LT((p - keep).maxCoeff(), 0.0);
  AdamState<double> fresh;
  Eigen::VectorXd q = keep;
  AdamStep(AdamConfig{}, Eigen::VectorXd::Zero(3), &q, &fresh);
  EXPECT_EQ(q, keep);
}

TEST(AdamTest, FirstStepIsSignedLearningRate) {
  AdamConfig cfg;
  cfg.lr = 0.01;
  for (double g : {3.0, -0.002, 1e-3}) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
    AdamState<double> st;
    AdamStep(cfg, Eigen::VectorXd::Constant(1, g), &p, &st);
    EXPECT_NEAR(p[0], -cfg.lr * (g > 0 ? 1 : -1), cfg.lr * 1e-4);
    EXPECT_EQ(st.step, 1);
  }
}

TEST(AdamTest, Deterministic) {
  auto run = [] {
    Rng rng(9);
    Eigen::VectorXf p = Eigen::VectorXf::Zero(50);
    AdamState<float> st;
    for (int i = 0; i < 100; ++i) {
      Eigen::VectorXf g(50);
      for (int k = 0; k < 50; ++k) g[k] = static_cast<float>(rng.Normal());
      AdamStep(AdamConfig{}, g, &p, &st);
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamTest, MinimizesQuadratic) {
  AdamConfig cfg;
  cfg.lr = 0.05;
  Eigen::VectorXd p = Eigen::VectorXd::Constant(4, 3.0);
  AdamState<double> st;
  for (int i = 0; i < 2000; ++i) AdamStep(cfg, 2.0 * p, &p, &st);
  EXPECT_LT(p.norm(), 1e-2);
}

PointSetEncoder<double> SmallEncoder(uint64_t seed) {
  PointSetEncoder<double> enc(3, {8, 8}, {6});
  Rng rng(seed);
  enc.Init(&rng);
  return enc;
}

TEST(PointSetEncoderTest, PermutationAndDuplicationInvariance) {
  const auto enc = SmallEncoder(1);
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.UniformInt(30));
    Eigen::MatrixXd pts(3, n);
    for (int i = 0; i < pts.size(); ++i) pts.data()[i] = rng.Uniform(-1, 1);
    const Eigen::VectorXd y = enc.Forward(pts);
    Eigen::MatrixXd perm(3, n);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[i], order[rng.UniformInt(i + 1)]);
    }
    for (int i = 0; i < n; ++i) perm.col(i) = pts.col(order[i]);
    EXPECT_EQ(enc.Forward(perm), y);
    Eigen::MatrixXd dup(3, 2 * n);
    dup << pts, perm;
    EXPECT_EQ(enc.Forward(dup), y);
    EXPECT_EQ(y.size(), 6);
  }
}

TEST(PointSetEncoderTest, EmptySetGivesDefault) {
  auto enc = SmallEncoder(1);
  enc.default_vector() << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(enc.Forward(Eigen::MatrixXd(3, 0)), enc.default_vector());
  PointSetEncoder<double>::Cache cache;
  enc.Forward(Eigen::MatrixXd(3, 0), &cache);
  Eigen::VectorXd g;
  enc.Backward(cache, Eigen::VectorXd::Ones(6), &g);
  EXPECT_EQ(g.head(g.size() - 6).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.tail(6), Eigen::VectorXd::Ones(6));
}

TEST(PointSetEncoderTest, GradientMatchesFiniteDifferences) {
  auto enc = SmallEncoder(5);
  Rng rng(6);
  Eigen::MatrixXd pts(3, 9);
  for (int i = 0; i < pts.size(); ++i) pts.data()[i] = rng.Uniform(-1, 1);
  Eigen::VectorXd c(6);
  for (int i = 0; i < 6; ++i) c[i] = rng.Uniform(-1, 1);
  PointSetEncoder<double>::Cache cache;
  enc.Forward(pts, &cache);
  Eigen::VectorXd grad;
  enc.Backward(cache, c, &grad);
  Eigen::VectorXd p = enc.GetParams();
  auto loss = [&] {
    enc.SetParams(p);
    return enc.Forward(pts).dot(c);
  };
  EXPECT_LT(GradCheck(&p, grad, loss), 1e-4);
}

TEST(PointSetEncoderTest, TensorsRoundTrip) {
  const auto enc = SmallEncoder(8);
  TensorMap t;
  enc.ToTensors("points", &t);
  const auto back = PointSetEncoder<double>::FromTensors(t, "points");
  EXPECT_EQ(back.GetParams(), enc.GetParams());
}

std::string TempPath(const std::string& name) {
  return (std::filesystem::temp_directory_path() /
          ("dexscope_nn_" + name + "_" + std::to_string(::getpid())))
      .string();
}

PolicyCheckpoint SampleCheckpoint() {
  PolicyCheckpoint c;
  c.kind = "tracker";
  c.config = {{"hidden", 256}};
  Rng rng(12);
  rng.Normal();
  c.rng_state = rng.SaveState();
  MlpD net({3, 4, 2});
  net.Init(&rng);
  net.ToTensors("policy", &c.tensors);
  c.tensors["log_std"] = Tensor{{2}, {-0.5, 0.1 + 1e-17}};
  return c;
}

TEST(CheckpointTest, RoundTripIsExact) {
  const PolicyCheckpoint c = SampleCheckpoint();
  const std::string path = TempPath("ok");
  c.Save(path);
  EXPECT_EQ(PolicyCheckpoint::Load(path), c);
  std::remove(path.c_str());
}

TEST(CheckpointTest, DistinctErrors) {
  const std::string path = TempPath("bad");
  EXPECT_THROW(PolicyCheckpoint::Load(path + ".missing"), IoError);
  nlohmann::json j = SampleCheckpoint().ToJson();
  const std::string text = j.dump();
  {
    std::ofstream(path) << text.substr(0, text.size() / 2);
  }
  EXPECT_THROW(PolicyCheckpoint::Load(path), TruncatedFileError);
  {
    std::ofstream(path) << "{\"schema_version\": 1, oops}";
  }
  EXPECT_THROW(PolicyCheckpoint::Load(path), MalformedRecordError);
  j["schema_version"] = 7;
  {
    std::ofstream(path) << j.dump();
  }
  EXPECT_THROW(PolicyCheckpoint::Load(path), VersionError);
  j = SampleCheckpoint().ToJson();
  j["tensors"]["log_std"]["shape"] = {3};
  {
    std::ofstream(path) << j.dump();
  }
  EXPECT_THROW(PolicyCheckpoint::Load(path), MalformedRecordError);
  std::remove(path.c_str());
}

}  // namespace
}  // namespace dexscope
