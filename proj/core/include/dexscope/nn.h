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

#ifndef DEXSCOPE_NN_H_
#define DEXSCOPE_NN_H_

#include <cstdint>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dexscope/rng.h"

namespace dexscope {

enum class Activation { kTanh, kIdentity };

// Flat named tensor used by checkpoints.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  bool operator==(const Tensor&) const = default;
};
using TensorMap = std::map<std::string, Tensor>;

// Dense network y = f_L(W_L ... f_1(W_1 x + b_1) ... + b_L). All parameters
// live in one flat vector (weights column-major, then bias, per layer) so
// optimizers and gradient buffers are plain vectors.
template <typename Scalar>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  // Activations recorded by a forward pass, consumed by Backward.
  struct Cache {
    std::vector<Matrix> outputs;  // input, then every layer output
  };

  Mlp() = default;
  // sizes = {input, hidden..., output}. Hidden layers use `hidden`, the
  // last layer `output`.
  explicit Mlp(std::vector<int> sizes, Activation hidden = Activation::kTanh,
               Activation output = Activation::kIdentity,
               bool output_bias = true);

  // Uniform Glorot initialization; the last layer is scaled by output_gain.
  // Biases start at zero.
  void Init(Rng* rng, double output_gain = 1.0);

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  const std::vector<int>& sizes() const { return sizes_; }
  int num_params() const { return static_cast<int>(params_.size()); }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  bool has_bias(int layer) const {
    return layer < num_layers() - 1 || output_bias_;
  }

  Eigen::Map<const Matrix> Weight(int layer) const;
  Eigen::Map<Matrix> Weight(int layer);
  Eigen::Map<const Vector> Bias(int layer) const;
  Eigen::Map<Vector> Bias(int layer);

  // Columns of x are samples. Throws ConfigError on a size mismatch.
  Matrix Forward(const Matrix& x) const;
  Matrix Forward(const Matrix& x, Cache* cache) const;
  // Adds dL/dparams to *grad (size num_params) and returns dL/dx.
  Matrix Backward(const Cache& cache, const Matrix& dy, Vector* grad) const;

  template <typename Other>
  Mlp<Other> Cast() const;

  void ToTensors(const std::string& prefix, TensorMap* out) const;
  // Rebuilds from tensors; activations as given.
  static Mlp FromTensors(const TensorMap& in, const std::string& prefix,
                         Activation hidden = Activation::kTanh,
                         Activation output = Activation::kIdentity);

 private:
  template <typename>
  friend class Mlp;

  void Layout();

  std::vector<int> sizes_;
  Activation hidden_ = Activation::kTanh;
  Activation output_ = Activation::kIdentity;
  bool output_bias_ = true;
  std::vector<int> weight_offset_;
  std::vector<int> bias_offset_;
  Vector params_;
};

// Diagonal Gaussian with log standard deviation clamped to [-5, 2].
struct DiagGaussian {
  static constexpr double kMinLogStd = -5.0;
  static constexpr double kMaxLogStd = 2.0;

  Eigen::VectorXd mean;
  Eigen::VectorXd log_std;

  DiagGaussian() = default;
  DiagGaussian(Eigen::VectorXd mean, Eigen::VectorXd log_std);

  double LogProb(const Eigen::VectorXd& a) const;
  // mean + std * eps.
  Eigen::VectorXd Sample(const Eigen::VectorXd& eps) const;
  Eigen::VectorXd Sample(Rng* rng) const;
  double Entropy() const;
};

Eigen::VectorXd StandardNormal(int n, Rng* rng);

// Per-point Mlp, coordinatewise max-pool, post-pool Mlp. Points are sorted
// and deduplicated first, so the output is exactly invariant to order and
// repetition; an empty set maps to a learned default vector.
template <typename Scalar>
class PointSetEncoder {
 public:
  using Matrix = typename Mlp<Scalar>::Matrix;
  using Vector = typename Mlp<Scalar>::Vector;

  struct Cache {
    bool empty = true;
    typename Mlp<Scalar>::Cache point;
    typename Mlp<Scalar>::Cache post;
    std::vector<int> argmax;  // per pooled channel, winning point column
  };

  PointSetEncoder() = default;
  PointSetEncoder(int point_dim, std::vector<int> point_hidden,
                  std::vector<int> post_sizes);
  void Init(Rng* rng);

  int point_dim() const { return point_.input_size(); }
  int output_size() const { return post_.output_size(); }
  int num_params() const {
    return point_.num_params() + post_.num_params() +
           static_cast<int>(default_.size());
  }

  // Columns of `points` are points.
  Vector Forward(const Matrix& points) const;
  Vector Forward(const Matrix& points, Cache* cache) const;
  // Gradients laid out as [point mlp, post mlp, default vector].
  void Backward(const Cache& cache, const Vector& dy, Vector* grad) const;

  // Flat view of all parameters in gradient order.
  Vector GetParams() const;
  void SetParams(const Vector& p);

  Mlp<Scalar>& point_mlp() { return point_; }
  Mlp<Scalar>& post_mlp() { return post_; }
  Vector& default_vector() { return default_; }

  template <typename Other>
  PointSetEncoder<Other> Cast() const;

  void ToTensors(const std::string& prefix, TensorMap* out) const;
  static PointSetEncoder FromTensors(const TensorMap& in,
                                     const std::string& prefix);

 private:
  template <typename>
  friend class PointSetEncoder;

  Mlp<Scalar> point_;
  Mlp<Scalar> post_;
  Vector default_;
};

// Sorts point columns lexicographically and removes exact duplicates.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> CanonicalPoints(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& points);

template <typename Scalar>
struct AdamState {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> m;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v;
  int64_t step = 0;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update; increments state->step first.
template <typename Scalar>
void AdamStep(
    const AdamConfig& cfg,
    const std::type_identity_t<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& grad,
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* params,
    AdamState<Scalar>* state);

// JSON checkpoint: schema version, kind, config block, rng state, named
// tensors and a training-state block. Load errors: IoError (unreadable),
// TruncatedFileError (document cut off), MalformedRecordError (bad JSON or
// fields), VersionError.
struct PolicyCheckpoint {
  static constexpr int kSchemaVersion = 1;

  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  std::string rng_state;
  TensorMap tensors;
  // Training bookkeeping that is not a tensor (e.g. termination envelopes).
  nlohmann::json state = nlohmann::json::object();

  void Save(const std::string& path) const;
  static PolicyCheckpoint Load(const std::string& path);
  nlohmann::json ToJson() const;
  static PolicyCheckpoint FromJson(const nlohmann::json& j);
  bool operator==(const PolicyCheckpoint&) const = default;
};

}  // namespace dexscope

#endif  // DEXSCOPE_NN_H_
