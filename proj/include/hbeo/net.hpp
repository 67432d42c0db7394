#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hbeo/depth.hpp"
#include "hbeo/kernels.hpp"
#include "hbeo/rotation.hpp"
#include "hbeo/subspace.hpp"
#include "hbeo/voxel.hpp"

namespace hbeo {

struct ConvLayerSpec {
  int out_channels = 8;
  int kernel = 5;
  bool operator==(const ConvLayerSpec&) const = default;
};

/// Four stride-2 convolutions (no pooling), three fully connected layers, and
/// three linear heads: class logits, axis-angle pose, subspace projection.
/// Every hidden layer is rectified.
struct NetworkSpec {
  static constexpr int kConvLayers = 4;
  static constexpr int kFcLayers = 3;
  static constexpr int kStride = 2;

  int input_width = 64;
  int input_height = 48;
  std::vector<ConvLayerSpec> conv = {{8, 5}, {16, 5}, {32, 5}, {64, 5}};
  std::vector<int> fc = {256, 128, 64};
  int num_classes = 3;
  int pose_dim = 3;
  int projection_dim = 16;

  static NetworkSpec desk(int num_classes, int projection_dim);
  /// Full-size layout for 320x240 input (about 15M parameters).
  static NetworkSpec full_scale(int num_classes, int projection_dim);

  void validate() const;
  std::vector<kernels::ConvShape> conv_shapes() const;
  int flattened_size() const;
  std::size_t parameter_count() const;
  /// One line per layer: name, shape, parameter count.
  std::string layer_table() const;

  bool operator==(const NetworkSpec&) const = default;
};

struct JointPrediction {
  Eigen::VectorXd class_logits;
  Eigen::Vector3d pose;
  Eigen::VectorXd projection;
};

/// Parameters live in one flat vector; per-layer offsets are derived from the spec.
class JointNetwork {
 public:
  struct LayerView {
    std::size_t weight_offset;
    std::size_t weight_count;
    std::size_t bias_offset;
    std::size_t bias_count;
  };

  JointNetwork() = default;
  JointNetwork(NetworkSpec spec, std::vector<double> params, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<double>& parameters() const { return params_; }
  std::vector<double>& parameters() { return params_; }

  // Layer order: conv[0..3], fc[0..2], class head, pose head, projection head.
  const std::vector<LayerView>& layers() const { return layers_; }

  /// Rounds every parameter to the nearest float32 (the stored precision).
  void round_to_storage_precision();

 private:
  NetworkSpec spec_;
  std::vector<double> params_;
  std::uint64_t seed_ = 0;
  std::vector<LayerView> layers_;
};

/// Fan-in-scaled uniform weights, zero biases; deterministic in `seed`.
JointNetwork init_network(const NetworkSpec& spec, std::uint64_t seed);

/// Object pixels standardized to zero mean / unit variance; background stays 0.
std::vector<float> normalize_depth(const DepthImage& depth);

JointPrediction forward(const JointNetwork& net, std::span<const float> input);
JointPrediction forward(const JointNetwork& net, const DepthImage& depth);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

struct LossWeights {
  double classification = 1.0;
  double orientation = 1.0;
  double projection = 1.0;
  void validate() const;
};

struct TrainSample {
  std::vector<float> input;  // normalized depth, row-major H x W
  int label = 0;             // class index
  Eigen::Vector3d pose = Eigen::Vector3d::Zero();
  Eigen::VectorXd target_projection;
};

struct LossBreakdown {
  double total = 0.0;
  double classification = 0.0;  // mean cross-entropy
  double orientation = 0.0;     // mean Euclidean pose distance
  double projection = 0.0;      // mean Euclidean projection distance
};

struct LossAndGradient {
  LossBreakdown loss;
  std::vector<double> gradient;  // same layout as the parameters
};

/// Weighted three-term loss and its gradient by reverse-mode accumulation.
/// Per-sample gradients may run concurrently; they are reduced in sample order.
LossAndGradient loss_and_gradients(const JointNetwork& net, std::span<const TrainSample> batch,
                                   const LossWeights& weights, bool parallel = true);

struct OptimizerConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  int batch_size = 32;
  int epochs = 20;
  std::uint64_t seed = 1;
  std::vector<double> decay_at = {0.6, 0.8};  // fractions of training where lr is scaled
  double decay_factor = 0.1;
  void validate() const;
};

struct TrainProgress {
  int epoch;
  double mean_loss;
  LossBreakdown terms;  // per-term epoch means
  double learning_rate;
};

struct TrainResult {
  JointNetwork network;
  std::vector<double> loss_curve;  // mean total loss per epoch
};

TrainResult train(JointNetwork net, std::span<const TrainSample> dataset, const LossWeights& weights,
                  const OptimizerConfig& opt, const std::function<void(const TrainProgress&)>& on_epoch = {});

struct JointInference {
  std::size_t class_index = 0;
  Eigen::VectorXd posterior;
  Rotation pose;
  Eigen::VectorXd coefficients;
  VoxelGrid completion;
};

/// Single forward pass: class, canonical pose, and binarized completion.
JointInference infer_joint(const JointNetwork& net, const DepthImage& depth, const SharedBasis& basis);
JointInference infer_joint(const JointNetwork& net, std::span<const float> input, const SharedBasis& basis);

}  // namespace hbeo
