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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dexscope/errors.h"

namespace dexscope {
namespace {

std::string LayerName(const std::string& prefix, int layer,
                      const char* what) {
  return prefix + ".layer" + std::to_string(layer) + "." + what;
}

template <typename Scalar>
void ApplyActivation(Activation a,
                     Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>* z) {
  if (a == Activation::kTanh) *z = z->array().tanh().matrix();
}

}  // namespace

template <typename Scalar>
Mlp<Scalar>::Mlp(std::vector<int> sizes, Activation hidden, Activation output,
                 bool output_bias)
    : sizes_(std::move(sizes)),
      hidden_(hidden),
      output_(output),
      output_bias_(output_bias) {
  if (sizes_.size() < 2) throw ConfigError("mlp needs at least one layer");
  for (int s : sizes_) {
    if (s < 1) throw ConfigError("mlp layer sizes must be positive");
  }
  Layout();
  params_.setZero();
}

template <typename Scalar>
void Mlp<Scalar>::Layout() {
  weight_offset_.clear();
  bias_offset_.clear();
  int n = 0;
  for (int l = 0; l < num_layers(); ++l) {
    weight_offset_.push_back(n);
    n += sizes_[l] * sizes_[l + 1];
    bias_offset_.push_back(n);
    if (has_bias(l)) n += sizes_[l + 1];
  }
  params_.resize(n);
}

template <typename Scalar>
void Mlp<Scalar>::Init(Rng* rng, double output_gain) {
  for (int l = 0; l < num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / (sizes_[l] + sizes_[l + 1])) *
                         (l == num_layers() - 1 ? output_gain : 1.0);
    auto w = Weight(l);
    for (int j = 0; j < w.cols(); ++j) {
      for (int i = 0; i < w.rows(); ++i) {
        w(i, j) = static_cast<Scalar>(rng->Uniform(-limit, limit));
      }
    }
    if (has_bias(l)) Bias(l).setZero();
  }
}

template <typename Scalar>
Eigen::Map<const typename Mlp<Scalar>::Matrix> Mlp<Scalar>::Weight(
    int layer) const {
  return Eigen::Map<const Matrix>(params_.data() + weight_offset_[layer],
                                  sizes_[layer + 1], sizes_[layer]);
}

template <typename Scalar>
Eigen::Map<typename Mlp<Scalar>::Matrix> Mlp<Scalar>::Weight(int layer) {
  return Eigen::Map<Matrix>(params_.data() + weight_offset_[layer],
                            sizes_[layer + 1], sizes_[layer]);
}

template <typename Scalar>
Eigen::Map<const typename Mlp<Scalar>::Vector> Mlp<Scalar>::Bias(
    int layer) const {
  return Eigen::Map<const Vector>(params_.data() + bias_offset_[layer],
                                  has_bias(layer) ? sizes_[layer + 1] : 0);
}

template <typename Scalar>
Eigen::Map<typename Mlp<Scalar>::Vector> Mlp<Scalar>::Bias(int layer) {
  return Eigen::Map<Vector>(params_.data() + bias_offset_[layer],
                            has_bias(layer) ? sizes_[layer + 1] : 0);
}

template <typename Scalar>
typename Mlp<Scalar>::Matrix Mlp<Scalar>::Forward(const Matrix& x) const {
  if (x.rows() != input_size()) {
    throw ConfigError("mlp input has " + std::to_string(x.rows()) +
                      " rows, expected " + std::to_string(input_size()));
  }
  Matrix h = x;
  for (int l = 0; l < num_layers(); ++l) {
    Matrix z = Weight(l) * h;
    if (has_bias(l)) z.colwise() += Bias(l);
    ApplyActivation(l == num_layers() - 1 ? output_ : hidden_, &z);
    h = std::move(z);
  }
  return h;
}

template <typename Scalar>
typename Mlp<Scalar>::Matrix Mlp<Scalar>::Forward(const Matrix& x,
                                                  Cache* cache) const {
  if (x.rows() != input_size()) {
    throw ConfigError("mlp input has " + std::to_string(x.rows()) +
                      " rows, expected " + std::to_string(input_size()));
  }
  cache->outputs.resize(num_layers() + 1);
  cache->outputs[0] = x;
  for (int l = 0; l < num_layers(); ++l) {
    Matrix& z = cache->outputs[l + 1];
    z.noalias() = Weight(l) * cache->outputs[l];
    if (has_bias(l)) z.colwise() += Bias(l);
    ApplyActivation(l == num_layers() - 1 ? output_ : hidden_, &z);
  }
  return cache->outputs.back();
}

template <typename Scalar>
typename Mlp<Scalar>::Matrix Mlp<Scalar>::Backward(const Cache& cache,
                                                   const Matrix& dy,
                                                   Vector* grad) const {
  if (dy.rows() != output_size() ||
      dy.cols() != cache.outputs.back().cols()) {
    throw ConfigError("mlp upstream gradient has the wrong shape");
  }
  if (grad->size() != num_params()) grad->setZero(num_params());
  Matrix d = dy;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const Activation a = l == num_layers() - 1 ? output_ : hidden_;
    if (a == Activation::kTanh) {
      d.array() *= (Scalar(1) - cache.outputs[l + 1].array().square());
    }
    Eigen::Map<Matrix> gw(grad->data() + weight_offset_[l], sizes_[l + 1],
                          sizes_[l]);
    gw.noalias() += d * cache.outputs[l].transpose();
    if (has_bias(l)) {
      Eigen::Map<Vector>(grad->data() + bias_offset_[l], sizes_[l + 1]) +=
          d.rowwise().sum();
    }
    Matrix next = Weight(l).transpose() * d;
    d = std::move(next);
  }
  return d;
}

template <typename Scalar>
template <typename Other>
Mlp<Other> Mlp<Scalar>::Cast() const {
  Mlp<Other> out;
  out.sizes_ = sizes_;
  out.hidden_ = hidden_;
  out.output_ = output_;
  out.output_bias_ = output_bias_;
  out.weight_offset_ = weight_offset_;
  out.bias_offset_ = bias_offset_;
  out.params_ = params_.template cast<Other>();
  return out;
}

template <typename Scalar>
void Mlp<Scalar>::ToTensors(const std::string& prefix, TensorMap* out) const {
  for (int l = 0; l < num_layers(); ++l) {
    const auto w = Weight(l);
    Tensor tw{{static_cast<int>(w.rows()), static_cast<int>(w.cols())}, {}};
    tw.data.reserve(w.size());
    for (int i = 0; i < w.rows(); ++i) {
      for (int j = 0; j < w.cols(); ++j) tw.data.push_back(w(i, j));
    }
    (*out)[LayerName(prefix, l, "weight")] = std::move(tw);
    if (has_bias(l)) {
      const auto b = Bias(l);
      (*out)[LayerName(prefix, l, "bias")] =
          Tensor{{static_cast<int>(b.size())},
                 std::vector<double>(b.data(), b.data() + b.size())};
    }
  }
}

template <typename Scalar>
Mlp<Scalar> Mlp<Scalar>::FromTensors(const TensorMap& in,
                                     const std::string& prefix,
                                     Activation hidden, Activation output) {
  std::vector<int> sizes;
  int layers = 0;
  while (in.count(LayerName(prefix, layers, "weight"))) {
    const Tensor& w = in.at(LayerName(prefix, layers, "weight"));
    if (w.shape.size() != 2) throw ConfigError(prefix + ": bad weight shape");
    if (layers == 0) sizes.push_back(w.shape[1]);
    if (w.shape[1] != sizes.back()) {
      throw ConfigError(prefix + ": layer shapes do not chain");
    }
    sizes.push_back(w.shape[0]);
    ++layers;
  }
  if (layers == 0) throw ConfigError("missing network '" + prefix + "'");
  const bool out_bias = in.count(LayerName(prefix, layers - 1, "bias")) > 0;
  Mlp net(sizes, hidden, output, out_bias);
  for (int l = 0; l < layers; ++l) {
    const Tensor& w = in.at(LayerName(prefix, l, "weight"));
    if (static_cast<int>(w.data.size()) != sizes[l] * sizes[l + 1]) {
      throw ConfigError(prefix + ": weight data size mismatch");
    }
    auto wm = net.Weight(l);
    for (int i = 0; i < wm.rows(); ++i) {
      for (int j = 0; j < wm.cols(); ++j) {
        wm(i, j) = static_cast<Scalar>(w.data[i * wm.cols() + j]);
      }
    }
    if (net.has_bias(l)) {
      const auto it = in.find(LayerName(prefix, l, "bias"));
      if (it == in.end() ||
          static_cast<int>(it->second.data.size()) != sizes[l + 1]) {
        throw ConfigError(prefix + ": missing or mis-sized bias");
      }
      auto b = net.Bias(l);
      for (int i = 0; i < b.size(); ++i) {
        b[i] = static_cast<Scalar>(it->second.data[i]);
      }
    }
  }
  return net;
}

template class Mlp<float>;
template class Mlp<double>;
template Mlp<float> Mlp<double>::Cast<float>() const;
template Mlp<double> Mlp<float>::Cast<double>() const;
template Mlp<double> Mlp<double>::Cast<double>() const;
template Mlp<float> Mlp<float>::Cast<float>() const;

DiagGaussian::DiagGaussian(Eigen::VectorXd m, Eigen::VectorXd ls)
    : mean(std::move(m)),
      log_std(ls.cwiseMax(kMinLogStd).cwiseMin(kMaxLogStd)) {}

double DiagGaussian::LogProb(const Eigen::VectorXd& a) const {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  for (int i = 0; i < mean.size(); ++i) {
    const double z = (a[i] - mean[i]) * std::exp(-log_std[i]);
    lp -= 0.5 * z * z + log_std[i] + half_log_2pi;
  }
  return lp;
}

Eigen::VectorXd DiagGaussian::Sample(const Eigen::VectorXd& eps) const {
  return mean + log_std.array().exp().matrix().cwiseProduct(eps);
}

Eigen::VectorXd DiagGaussian::Sample(Rng* rng) const {
  return Sample(StandardNormal(static_cast<int>(mean.size()), rng));
}

double DiagGaussian::Entropy() const {
  const double c = 0.5 * (1.0 + std::log(2.0 * std::numbers::pi));
  return log_std.size() * c + log_std.sum();
}

Eigen::VectorXd StandardNormal(int n, Rng* rng) {
  Eigen::VectorXd e(n);
  for (int i = 0; i < n; ++i) e[i] = rng->Normal();
  return e;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> CanonicalPoints(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& points) {
  std::vector<int> order(points.cols());
  std::iota(order.begin(), order.end(), 0);
  auto less = [&points](int a, int b) {
    for (int r = 0; r < points.rows(); ++r) {
      if (points(r, a) != points(r, b)) return points(r, a) < points(r, b);
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  std::vector<int> kept;
  for (int i : order) {
    if (kept.empty() || less(kept.back(), i)) kept.push_back(i);
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(points.rows(),
                                                           kept.size());
  for (size_t j = 0; j < kept.size(); ++j) out.col(j) = points.col(kept[j]);
  return out;
}

template Eigen::MatrixXf CanonicalPoints<float>(const Eigen::MatrixXf&);
template Eigen::MatrixXd CanonicalPoints<double>(const Eigen::MatrixXd&);

template <typename Scalar>
PointSetEncoder<Scalar>::PointSetEncoder(int point_dim,
                                         std::vector<int> point_hidden,
                                         std::vector<int> post_sizes) {
  std::vector<int> ps = {point_dim};
  ps.insert(ps.end(), point_hidden.begin(), point_hidden.end());
  point_ = Mlp<Scalar>(ps, Activation::kTanh, Activation::kTanh);
  std::vector<int> qs = {ps.back()};
  qs.insert(qs.end(), post_sizes.begin(), post_sizes.end());
  post_ = Mlp<Scalar>(qs, Activation::kTanh, Activation::kTanh);
  default_ = Vector::Zero(post_.output_size());
}

template <typename Scalar>
void PointSetEncoder<Scalar>::Init(Rng* rng) {
  point_.Init(rng);
  post_.Init(rng);
  default_.setZero();
}

template <typename Scalar>
typename PointSetEncoder<Scalar>::Vector PointSetEncoder<Scalar>::Forward(
    const Matrix& points) const {
  Cache cache;
  return Forward(points, &cache);
}

template <typename Scalar>
typename PointSetEncoder<Scalar>::Vector PointSetEncoder<Scalar>::Forward(
    const Matrix& points, Cache* cache) const {
  if (points.rows() != point_dim()) {
    throw ConfigError("point set has the wrong point dimension");
  }
  const Matrix canon = CanonicalPoints<Scalar>(points);
  cache->empty = canon.cols() == 0;
  if (cache->empty) return default_;
  const Matrix h = point_.Forward(canon, &cache->point);
  Matrix pooled(h.rows(), 1);
  cache->argmax.assign(h.rows(), 0);
  for (int c = 0; c < h.rows(); ++c) {
    Eigen::Index j;
    pooled(c, 0) = h.row(c).maxCoeff(&j);
    cache->argmax[c] = static_cast<int>(j);
  }
  return post_.Forward(pooled, &cache->post);
}

template <typename Scalar>
void PointSetEncoder<Scalar>::Backward(const Cache& cache, const Vector& dy,
                                       Vector* grad) const {
  if (grad->size() != num_params()) grad->setZero(num_params());
  const int np = point_.num_params(), nq = post_.num_params();
  if (cache.empty) {
    grad->tail(default_.size()) += dy;
    return;
  }
  Vector gq = Vector::Zero(nq);
  const Matrix dpool = post_.Backward(cache.post, dy, &gq);
  grad->segment(np, nq) += gq;
  const int n = static_cast<int>(cache.point.outputs.back().cols());
  Matrix dh = Matrix::Zero(dpool.rows(), n);
  for (int c = 0; c < dpool.rows(); ++c) dh(c, cache.argmax[c]) = dpool(c, 0);
  Vector gp = Vector::Zero(np);
  point_.Backward(cache.point, dh, &gp);
  grad->head(np) += gp;
}

template <typename Scalar>
typename PointSetEncoder<Scalar>::Vector PointSetEncoder<Scalar>::GetParams()
    const {
  Vector p(num_params());
  p << point_.params(), post_.params(), default_;
  return p;
}

template <typename Scalar>
void PointSetEncoder<Scalar>::SetParams(const Vector& p) {
  const int np = point_.num_params(), nq = post_.num_params();
  point_.params() = p.head(np);
  post_.params() = p.segment(np, nq);
  default_ = p.tail(default_.size());
}

template <typename Scalar>
template <typename Other>
PointSetEncoder<Other> PointSetEncoder<Scalar>::Cast() const {
  PointSetEncoder<Other> out;
  out.point_ = point_.template Cast<Other>();
  out.post_ = post_.template Cast<Other>();
  out.default_ = default_.template cast<Other>();
  return out;
}

template <typename Scalar>
void PointSetEncoder<Scalar>::ToTensors(const std::string& prefix,
                                        TensorMap* out) const {
  point_.ToTensors(prefix + ".point", out);
  post_.ToTensors(prefix + ".post", out);
  (*out)[prefix + ".default"] =
      Tensor{{static_cast<int>(default_.size())},
             std::vector<double>(default_.data(),
                                 default_.data() + default_.size())};
}

template <typename Scalar>
PointSetEncoder<Scalar> PointSetEncoder<Scalar>::FromTensors(
    const TensorMap& in, const std::string& prefix) {
  PointSetEncoder enc;
  enc.point_ = Mlp<Scalar>::FromTensors(in, prefix + ".point",
                                        Activation::kTanh, Activation::kTanh);
  enc.post_ = Mlp<Scalar>::FromTensors(in, prefix + ".post", Activation::kTanh,
                                       Activation::kTanh);
  const auto it = in.find(prefix + ".default");
  if (it == in.end() ||
      static_cast<int>(it->second.data.size()) != enc.post_.output_size()) {
    throw ConfigError(prefix + ": missing default vector");
  }
  enc.default_ = Eigen::Map<const Eigen::VectorXd>(it->second.data.data(),
                                                   it->second.data.size())
                     .cast<Scalar>();
  return enc;
}

template class PointSetEncoder<float>;
template class PointSetEncoder<double>;
template PointSetEncoder<float> PointSetEncoder<double>::Cast<float>() const;
template PointSetEncoder<double> PointSetEncoder<float>::Cast<double>() const;

template <typename Scalar>
void AdamStep(
    const AdamConfig& cfg,
    const std::type_identity_t<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& grad,
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* params,
    AdamState<Scalar>* state) {
  if (grad.size() != params->size()) {
    throw ConfigError("adam: gradient and parameter sizes differ");
  }
  if (state->m.size() != params->size()) {
    state->m.setZero(params->size());
    state->v.setZero(params->size());
  }
  ++state->step;
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  state->m = b1 * state->m + (Scalar(1) - b1) * grad;
  state->v = b2 * state->v + (Scalar(1) - b2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state->step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state->step));
  const Scalar lr = static_cast<Scalar>(cfg.lr);
  const Scalar eps = static_cast<Scalar>(cfg.eps);
  params->array() -=
      lr * (state->m.array() / static_cast<Scalar>(c1)) /
      ((state->v.array() / static_cast<Scalar>(c2)).sqrt() + eps);
}

template void AdamStep<float>(const AdamConfig&, const Eigen::VectorXf&,
                              Eigen::VectorXf*, AdamState<float>*);
template void AdamStep<double>(const AdamConfig&, const Eigen::VectorXd&,
                               Eigen::VectorXd*, AdamState<double>*);

nlohmann::json PolicyCheckpoint::ToJson() const {
  nlohmann::json ts = nlohmann::json::object();
  for (const auto& [name, t] : tensors) {
    ts[name] = {{"shape", t.shape}, {"data", t.data}};
  }
  return {{"schema_version", kSchemaVersion},
          {"kind", kind},
          {"config", config},
          {"rng_state", rng_state},
          {"tensors", ts},
          {"state", state}};
}

PolicyCheckpoint PolicyCheckpoint::FromJson(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema_version")) {
    throw MalformedRecordError("checkpoint lacks a schema version", -1);
  }
  if (!j["schema_version"].is_number_integer() ||
      j["schema_version"].get<int>() != kSchemaVersion) {
    throw VersionError("unsupported checkpoint schema " +
                       j["schema_version"].dump());
  }
  PolicyCheckpoint c;
  try {
    c.kind = j.at("kind").get<std::string>();
    c.config = j.at("config");
    c.rng_state = j.at("rng_state").get<std::string>();
    c.state = j.at("state");
    for (const auto& [name, t] : j.at("tensors").items()) {
      Tensor tensor{t.at("shape").get<std::vector<int>>(),
                    t.at("data").get<std::vector<double>>()};
      size_t n = 1;
      for (int d : tensor.shape) {
        if (d < 0) throw std::runtime_error("negative dimension");
        n *= static_cast<size_t>(d);
      }
      if (n != tensor.data.size()) {
        throw std::runtime_error("tensor '" + name +
                                 "' data does not match its shape");
      }
      c.tensors.emplace(name, std::move(tensor));
    }
  } catch (const std::exception& e) {
    throw MalformedRecordError(std::string("bad checkpoint: ") + e.what(), -1);
  }
  return c;
}

void PolicyCheckpoint::Save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << ToJson().dump() << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

PolicyCheckpoint PolicyCheckpoint::Load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // An error at the very end of the input means the document was cut off.
    if (e.byte >= text.size()) {
      throw TruncatedFileError("checkpoint '" + path + "' is truncated");
    }
    throw MalformedRecordError("checkpoint '" + path + "' is not valid JSON",
                               -1);
  }
  return FromJson(j);
}

}  // namespace dexscope
