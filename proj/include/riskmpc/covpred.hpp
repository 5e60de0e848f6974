#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "riskmpc/geometry.hpp"

namespace riskmpc {

/// Recurrent layers (ReLU), then dense layers (ReLU), then a linear output.
struct NetSpec {
  int input_width = 18;
  int output_width = 4;
  std::vector<int> recurrent_widths = std::vector<int>(5, 64);
  std::vector<int> dense_widths = std::vector<int>(2, 64);

  bool operator==(const NetSpec&) const = default;
};

/// Where one layer's weights live inside the flat parameter vector.  Weight
/// matrices are stored column-major.
struct LayerShape {
  int in = 0;
  int out = 0;
  bool recurrent = false;
  bool relu = true;
  Eigen::Index w_in = 0;
  Eigen::Index w_rec = 0;
  Eigen::Index bias = 0;
};

std::vector<LayerShape> layer_shapes(const NetSpec& spec);
Eigen::Index parameter_count(const NetSpec& spec);
/// Throws std::invalid_argument for non-positive widths.
void validate(const NetSpec& spec);

struct NetParams {
  NetSpec spec;
  Eigen::VectorXd values;

  NetParams() = default;
  /// All-zero parameters for `spec`.
  explicit NetParams(NetSpec s);

  Eigen::Map<const Eigen::MatrixXd> input_weights(int layer) const;
  Eigen::Map<const Eigen::MatrixXd> recurrent_weights(int layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
  Eigen::Map<Eigen::MatrixXd> input_weights(int layer);
  Eigen::Map<Eigen::MatrixXd> recurrent_weights(int layer);
  Eigen::Map<Eigen::VectorXd> bias(int layer);
};

/// Uniform initialization scaled by fan-in; recurrent matrices are scaled
/// down so that long sequences do not blow up at the start of training.
NetParams init_params(const NetSpec& spec, std::uint64_t seed);

/// Hidden state of every recurrent layer.
using HiddenState = std::vector<Eigen::VectorXd>;

HiddenState zero_hidden(const NetSpec& spec);

struct ForwardResult {
  Eigen::MatrixXd outputs;  // output_width x T
  HiddenState final_hidden;
};

/// Runs the network over one sequence (input_width x T), starting from
/// `initial` or from zeros.  Throws std::invalid_argument on shape mismatch.
ForwardResult forward(const NetParams& params, const Eigen::MatrixXd& inputs, const HiddenState* initial = nullptr);

/// One training sequence: inputs and targets column-aligned in time.
struct Sequence {
  Eigen::MatrixXd inputs;   // input_width x T
  Eigen::MatrixXd targets;  // output_width x T
};

/// Mean squared error over every output entry of every timestep of every
/// sequence.
double mse(const NetParams& params, const std::vector<Sequence>& batch);

struct Gradient {
  double loss = 0.0;
  Eigen::VectorXd values;
};

/// Exact gradient of `mse` by backpropagation through time.  The parallel
/// version computes one buffer per sequence concurrently and sums them in
/// sequence order, so it is bit-identical to the serial one.
Gradient bptt_grad_serial(const NetParams& params, const std::vector<Sequence>& batch);
Gradient bptt_grad(const NetParams& params, const std::vector<Sequence>& batch);

/// Smallest |pre-activation| of any ReLU unit over the batch; finite
/// differences are meaningful only away from zero.
double min_abs_preactivation(const NetParams& params, const std::vector<Sequence>& batch);

/// Affine maps between raw units and the units the network works in.
struct Normalization {
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;
  Eigen::VectorXd output_mean;
  Eigen::VectorXd output_scale;

  static Normalization identity(const NetSpec& spec);
  /// Per-component mean and standard deviation over all timesteps; a
  /// component with (near) zero spread keeps scale 1.
  static Normalization fit(const std::vector<Sequence>& data);
  Sequence apply(const Sequence& raw) const;
  Eigen::VectorXd normalize_input(const Eigen::VectorXd& raw) const;
  Eigen::VectorXd denormalize_output(const Eigen::VectorXd& net) const;
};

struct CovarianceModel {
  NetParams params;
  Normalization norm;
};

struct TrainOptions {
  int epochs = 100;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double clip_norm = 5.0;
  int batch_size = 1;
  double validation_fraction = 0.25;
  std::uint64_t seed = 1;
  bool parallel = true;
};

struct EpochLoss {
  int epoch = 0;
  double train_mse = 0.0;
  double validation_mse = 0.0;
};

struct TrainResult {
  /// Parameters of the epoch with the lowest validation loss.
  CovarianceModel model;
  CovarianceModel final_model;
  /// history[0] is the loss before the first update.
  std::vector<EpochLoss> history;
  int best_epoch = 0;
  std::vector<int> train_indices;
  std::vector<int> validation_indices;
};

/// Momentum gradient descent on normalized data with gradient-norm clipping.
/// Sequences are split into training and validation sets by a seeded
/// shuffle.  Throws std::runtime_error naming the epoch if the loss becomes
/// non-finite, std::invalid_argument for an empty or inconsistent dataset.
TrainResult train(const std::vector<Sequence>& data, const NetSpec& spec, const TrainOptions& options);

/// Network input for a robot at `robot` (x, y, z) seeing `features`:
/// the five nearest by Euclidean distance (stable on ties), padded by
/// repeating the farthest one, or by a point `sentinel_range` ahead along
/// `heading` when none are given.
Eigen::VectorXd make_input(const Eigen::Vector3d& robot, double heading, const std::vector<Eigen::Vector3d>& features,
                           double sentinel_range);

struct HorizonPrediction {
  std::vector<Covariance2> covariances;
  /// Hidden state after the first planned pose; the caller keeps it as the
  /// state carried into the next cycle.
  HiddenState after_first_step;
};

/// Rolls the network over planned poses with the current feature set, one
/// recurrent step per pose starting from `carry_in`.  Outputs are mapped
/// back to raw units and made valid covariances with psd_correct.
HorizonPrediction predict_horizon(const CovarianceModel& model, const std::vector<State2>& planned, double height,
                                  double heading, const std::vector<Eigen::Vector3d>& features,
                                  double sentinel_range, const HiddenState& carry_in);

/// First line is a schema tag, the rest a JSON document.
void save_checkpoint(std::ostream& os, const CovarianceModel& model);
/// Throws std::runtime_error for an unknown schema or inconsistent sizes.
CovarianceModel load_checkpoint(std::istream& is);

}  // namespace riskmpc
