#include "riskmpc/covpred.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace riskmpc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<LayerShape> layer_shapes(const NetSpec& spec) {
  std::vector<LayerShape> shapes;
  Index offset = 0;
  int in = spec.input_width;
  auto add = [&](int out, bool recurrent, bool relu) {
    LayerShape s;
    s.in = in;
    s.out = out;
    s.recurrent = recurrent;
    s.relu = relu;
    s.w_in = offset;
    offset += static_cast<Index>(in) * out;
    if (recurrent) {
      s.w_rec = offset;
      offset += static_cast<Index>(out) * out;
    }
    s.bias = offset;
    offset += out;
    shapes.push_back(s);
    in = out;
  };
  for (int w : spec.recurrent_widths) add(w, true, true);
  for (int w : spec.dense_widths) add(w, false, true);
  add(spec.output_width, false, false);
  return shapes;
}

Index parameter_count(const NetSpec& spec) {
  const auto s = layer_shapes(spec);
  return s.back().bias + s.back().out;
}

void validate(const NetSpec& spec) {
  if (spec.input_width < 1 || spec.output_width < 1) throw std::invalid_argument("network widths must be >= 1");
  for (int w : spec.recurrent_widths)
    if (w < 1) throw std::invalid_argument("recurrent widths must be >= 1");
  for (int w : spec.dense_widths)
    if (w < 1) throw std::invalid_argument("dense widths must be >= 1");
}

NetParams::NetParams(NetSpec s) : spec(std::move(s)) {
  validate(spec);
  values = VectorXd::Zero(parameter_count(spec));
}

namespace {

LayerShape shape_of(const NetSpec& spec, int layer) {
  const auto shapes = layer_shapes(spec);
  if (layer < 0 || layer >= static_cast<int>(shapes.size())) throw std::out_of_range("layer index");
  return shapes[static_cast<std::size_t>(layer)];
}

}  // namespace

Eigen::Map<const MatrixXd> NetParams::input_weights(int layer) const {
  const auto s = shape_of(spec, layer);
  return {values.data() + s.w_in, s.out, s.in};
}
Eigen::Map<const MatrixXd> NetParams::recurrent_weights(int layer) const {
  const auto s = shape_of(spec, layer);
  if (!s.recurrent) throw std::logic_error("layer has no recurrent weights");
  return {values.data() + s.w_rec, s.out, s.out};
}
Eigen::Map<const VectorXd> NetParams::bias(int layer) const {
  const auto s = shape_of(spec, layer);
  return {values.data() + s.bias, s.out};
}
Eigen::Map<MatrixXd> NetParams::input_weights(int layer) {
  const auto s = shape_of(spec, layer);
  return {values.data() + s.w_in, s.out, s.in};
}
Eigen::Map<MatrixXd> NetParams::recurrent_weights(int layer) {
  const auto s = shape_of(spec, layer);
  if (!s.recurrent) throw std::logic_error("layer has no recurrent weights");
  return {values.data() + s.w_rec, s.out, s.out};
}
Eigen::Map<VectorXd> NetParams::bias(int layer) {
  const auto s = shape_of(spec, layer);
  return {values.data() + s.bias, s.out};
}

namespace {

// uniform on [-a, a] from the raw 64-bit stream, independent of the
// standard library's distribution implementations
double uniform_symmetric(std::mt19937_64& rng, double a) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return (2.0 * u - 1.0) * a;
}

void shuffle(std::vector<int>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

NetParams init_params(const NetSpec& spec, std::uint64_t seed) {
  NetParams p(spec);
  std::mt19937_64 rng(seed);
  const auto shapes = layer_shapes(spec);
  for (const auto& s : shapes) {
    const double a_in = s.relu ? std::sqrt(6.0 / s.in) : std::sqrt(6.0 / (s.in + s.out));
    for (Index i = 0; i < static_cast<Index>(s.in) * s.out; ++i) p.values[s.w_in + i] = uniform_symmetric(rng, a_in);
    if (s.recurrent) {
      const double a_rec = 0.5 * std::sqrt(3.0 / s.out);
      for (Index i = 0; i < static_cast<Index>(s.out) * s.out; ++i)
        p.values[s.w_rec + i] = uniform_symmetric(rng, a_rec);
    }
  }
  return p;
}

HiddenState zero_hidden(const NetSpec& spec) {
  HiddenState h;
  for (int w : spec.recurrent_widths) h.push_back(VectorXd::Zero(w));
  return h;
}

namespace {

struct LayerTrace {
  MatrixXd pre;  // pre-activations, out x T
  MatrixXd out;  // activations, out x T
  VectorXd initial_hidden;
};

void check_shapes(const NetParams& params, const MatrixXd& inputs, const HiddenState* initial) {
  if (params.values.size() != parameter_count(params.spec))
    throw std::invalid_argument("parameter vector does not match the network spec");
  if (inputs.rows() != params.spec.input_width) throw std::invalid_argument("input width mismatch");
  if (initial) {
    if (initial->size() != params.spec.recurrent_widths.size())
      throw std::invalid_argument("hidden state has the wrong number of layers");
    for (std::size_t l = 0; l < initial->size(); ++l)
      if ((*initial)[l].size() != params.spec.recurrent_widths[l])
        throw std::invalid_argument("hidden state width mismatch");
  }
}

std::vector<LayerTrace> run_layers(const NetParams& params, const MatrixXd& inputs, const HiddenState* initial) {
  const auto shapes = layer_shapes(params.spec);
  const Index steps = inputs.cols();
  std::vector<LayerTrace> trace(shapes.size());
  const MatrixXd* x = &inputs;
  int recurrent_index = 0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    const int li = static_cast<int>(l);
    LayerTrace& tr = trace[l];
    tr.pre.noalias() = params.input_weights(li) * (*x);
    tr.pre.colwise() += params.bias(li);
    if (s.recurrent) {
      tr.initial_hidden = initial ? (*initial)[static_cast<std::size_t>(recurrent_index)] : VectorXd::Zero(s.out);
      ++recurrent_index;
      const auto wr = params.recurrent_weights(li);
      tr.out.resize(s.out, steps);
      VectorXd h = tr.initial_hidden;
      for (Index t = 0; t < steps; ++t) {
        tr.pre.col(t).noalias() += wr * h;
        h = tr.pre.col(t).cwiseMax(0.0);
        tr.out.col(t) = h;
      }
    } else if (s.relu) {
      tr.out = tr.pre.cwiseMax(0.0);
    } else {
      tr.out = tr.pre;
    }
    x = &tr.out;
  }
  return trace;
}

// Adds the gradient of sum over the sequence of scale * |y - target|^2 into
// `grad` and returns the sum of squared errors.
double accumulate_sequence(const NetParams& params, const Sequence& seq, double scale, VectorXd& grad) {
  const auto shapes = layer_shapes(params.spec);
  const auto trace = run_layers(params, seq.inputs, nullptr);
  const MatrixXd err = trace.back().out - seq.targets;
  const double sse = err.squaredNorm();

  MatrixXd upstream = (2.0 * scale) * err;
  for (int l = static_cast<int>(shapes.size()) - 1; l >= 0; --l) {
    const auto& s = shapes[static_cast<std::size_t>(l)];
    const LayerTrace& tr = trace[static_cast<std::size_t>(l)];
    const MatrixXd& x = l == 0 ? seq.inputs : trace[static_cast<std::size_t>(l - 1)].out;
    MatrixXd dpre;
    if (s.recurrent) {
      const auto wr = params.recurrent_weights(l);
      dpre.resize(s.out, upstream.cols());
      VectorXd carry = VectorXd::Zero(s.out);
      for (Index t = upstream.cols() - 1; t >= 0; --t) {
        const VectorXd g = upstream.col(t) + carry;
        dpre.col(t) = (tr.pre.col(t).array() > 0.0).select(g, 0.0);
        carry.noalias() = wr.transpose() * dpre.col(t);
      }
      Eigen::Map<MatrixXd> gr(grad.data() + s.w_rec, s.out, s.out);
      if (upstream.cols() > 0) {
        gr.noalias() += dpre.col(0) * tr.initial_hidden.transpose();
        const Index rest = upstream.cols() - 1;
        if (rest > 0) gr.noalias() += dpre.rightCols(rest) * tr.out.leftCols(rest).transpose();
      }
    } else if (s.relu) {
      dpre = (tr.pre.array() > 0.0).select(upstream, 0.0);
    } else {
      dpre = upstream;
    }
    Eigen::Map<MatrixXd> gw(grad.data() + s.w_in, s.out, s.in);
    gw.noalias() += dpre * x.transpose();
    Eigen::Map<VectorXd>(grad.data() + s.bias, s.out) += dpre.rowwise().sum();
    if (l > 0) upstream.noalias() = params.input_weights(l).transpose() * dpre;
  }
  return sse;
}

Index total_entries(const std::vector<Sequence>& batch, int output_width) {
  Index n = 0;
  for (const auto& s : batch) n += s.targets.cols() * output_width;
  return n;
}

void check_batch(const NetParams& params, const std::vector<Sequence>& batch) {
  for (const auto& s : batch) {
    check_shapes(params, s.inputs, nullptr);
    if (s.targets.rows() != params.spec.output_width || s.targets.cols() != s.inputs.cols())
      throw std::invalid_argument("targets are not aligned with inputs");
  }
}

}  // namespace

ForwardResult forward(const NetParams& params, const MatrixXd& inputs, const HiddenState* initial) {
  check_shapes(params, inputs, initial);
  const auto shapes = layer_shapes(params.spec);
  auto trace = run_layers(params, inputs, initial);
  ForwardResult r;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    if (!shapes[l].recurrent) continue;
    r.final_hidden.push_back(inputs.cols() > 0 ? VectorXd(trace[l].out.col(inputs.cols() - 1))
                                               : trace[l].initial_hidden);
  }
  r.outputs = std::move(trace.back().out);
  return r;
}

double mse(const NetParams& params, const std::vector<Sequence>& batch) {
  check_batch(params, batch);
  const Index n = total_entries(batch, params.spec.output_width);
  if (n == 0) return 0.0;
  double sse = 0.0;
  for (const auto& s : batch) sse += (forward(params, s.inputs).outputs - s.targets).squaredNorm();
  return sse / static_cast<double>(n);
}

Gradient bptt_grad_serial(const NetParams& params, const std::vector<Sequence>& batch) {
  check_batch(params, batch);
  const Index n = total_entries(batch, params.spec.output_width);
  Gradient g;
  g.values = VectorXd::Zero(params.values.size());
  if (n == 0) return g;
  const double scale = 1.0 / static_cast<double>(n);
  double sse = 0.0;
  for (const auto& s : batch) {
    VectorXd buffer = VectorXd::Zero(params.values.size());
    sse += accumulate_sequence(params, s, scale, buffer);
    g.values += buffer;
  }
  g.loss = sse * scale;
  return g;
}

Gradient bptt_grad(const NetParams& params, const std::vector<Sequence>& batch) {
  check_batch(params, batch);
  const Index n = total_entries(batch, params.spec.output_width);
  Gradient g;
  g.values = VectorXd::Zero(params.values.size());
  if (n == 0) return g;
  const double scale = 1.0 / static_cast<double>(n);
  const int count = static_cast<int>(batch.size());
  std::vector<VectorXd> buffers(batch.size());
  std::vector<double> sse(batch.size(), 0.0);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    buffers[static_cast<std::size_t>(i)] = VectorXd::Zero(params.values.size());
    sse[static_cast<std::size_t>(i)] =
        accumulate_sequence(params, batch[static_cast<std::size_t>(i)], scale, buffers[static_cast<std::size_t>(i)]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += sse[i];
    g.values += buffers[i];
  }
  g.loss = total * scale;
  return g;
}

double min_abs_preactivation(const NetParams& params, const std::vector<Sequence>& batch) {
  check_batch(params, batch);
  const auto shapes = layer_shapes(params.spec);
  double m = std::numeric_limits<double>::infinity();
  for (const auto& s : batch) {
    const auto trace = run_layers(params, s.inputs, nullptr);
    for (std::size_t l = 0; l < shapes.size(); ++l)
      if (shapes[l].relu && trace[l].pre.size() > 0) m = std::min(m, trace[l].pre.cwiseAbs().minCoeff());
  }
  return m;
}

Normalization Normalization::identity(const NetSpec& spec) {
  return {VectorXd::Zero(spec.input_width), VectorXd::Ones(spec.input_width), VectorXd::Zero(spec.output_width),
          VectorXd::Ones(spec.output_width)};
}

namespace {

void mean_and_scale(const std::vector<const MatrixXd*>& blocks, VectorXd& mean, VectorXd& scale) {
  const Index rows = blocks.front()->rows();
  mean = VectorXd::Zero(rows);
  Index count = 0;
  for (const auto* b : blocks) {
    mean += b->rowwise().sum();
    count += b->cols();
  }
  if (count == 0) throw std::invalid_argument("normalization needs at least one timestep");
  mean /= static_cast<double>(count);
  VectorXd var = VectorXd::Zero(rows);
  for (const auto* b : blocks) var += (b->colwise() - mean).rowwise().squaredNorm();
  var /= static_cast<double>(count);
  scale = var.cwiseSqrt();
  for (Index i = 0; i < rows; ++i)
    if (!(scale[i] > 1e-12 * std::max(1.0, std::abs(mean[i])))) scale[i] = 1.0;
}

}  // namespace

Normalization Normalization::fit(const std::vector<Sequence>& data) {
  if (data.empty()) throw std::invalid_argument("normalization needs data");
  std::vector<const MatrixXd*> in, out;
  for (const auto& s : data) {
    in.push_back(&s.inputs);
    out.push_back(&s.targets);
  }
  Normalization n;
  mean_and_scale(in, n.input_mean, n.input_scale);
  mean_and_scale(out, n.output_mean, n.output_scale);
  return n;
}

Sequence Normalization::apply(const Sequence& raw) const {
  Sequence s;
  s.inputs = (raw.inputs.colwise() - input_mean).array().colwise() / input_scale.array();
  s.targets = (raw.targets.colwise() - output_mean).array().colwise() / output_scale.array();
  return s;
}

VectorXd Normalization::normalize_input(const VectorXd& raw) const {
  return (raw - input_mean).cwiseQuotient(input_scale);
}

VectorXd Normalization::denormalize_output(const VectorXd& net) const {
  return net.cwiseProduct(output_scale) + output_mean;
}

TrainResult train(const std::vector<Sequence>& data, const NetSpec& spec, const TrainOptions& options) {
  validate(spec);
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (options.epochs < 0 || options.batch_size < 1 || !(options.learning_rate > 0.0) ||
      options.validation_fraction < 0.0 || options.validation_fraction >= 1.0)
    throw std::invalid_argument("train: invalid options");
  for (const auto& s : data) {
    if (s.inputs.rows() != spec.input_width || s.targets.rows() != spec.output_width ||
        s.inputs.cols() != s.targets.cols())
      throw std::invalid_argument("train: sequence shape does not match the network");
    if (!s.inputs.allFinite() || !s.targets.allFinite()) throw std::invalid_argument("train: non-finite data");
  }

  std::mt19937_64 rng(options.seed);
  TrainResult result;
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  int n_val = static_cast<int>(std::lround(options.validation_fraction * static_cast<double>(data.size())));
  if (options.validation_fraction > 0.0 && data.size() >= 2) n_val = std::clamp(n_val, 1, static_cast<int>(data.size()) - 1);
  else n_val = 0;
  result.validation_indices.assign(order.begin(), order.begin() + n_val);
  result.train_indices.assign(order.begin() + n_val, order.end());
  std::sort(result.validation_indices.begin(), result.validation_indices.end());
  std::sort(result.train_indices.begin(), result.train_indices.end());

  std::vector<Sequence> raw_train;
  for (int i : result.train_indices) raw_train.push_back(data[static_cast<std::size_t>(i)]);
  const Normalization norm = Normalization::fit(raw_train);
  std::vector<Sequence> train_set, val_set;
  for (int i : result.train_indices) train_set.push_back(norm.apply(data[static_cast<std::size_t>(i)]));
  for (int i : result.validation_indices) val_set.push_back(norm.apply(data[static_cast<std::size_t>(i)]));

  NetParams params = init_params(spec, rng());
  VectorXd velocity = VectorXd::Zero(params.values.size());
  auto evaluate = [&](int epoch) {
    EpochLoss e{epoch, mse(params, train_set), 0.0};
    e.validation_mse = val_set.empty() ? e.train_mse : mse(params, val_set);
    if (!std::isfinite(e.train_mse) || !std::isfinite(e.validation_mse))
      throw std::runtime_error("train: loss became non-finite at epoch " + std::to_string(epoch));
    return e;
  };

  result.history.push_back(evaluate(0));
  result.model = {params, norm};
  double best = result.history.back().validation_mse;
  std::vector<int> batch_order(train_set.size());
  std::iota(batch_order.begin(), batch_order.end(), 0);
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle(batch_order, rng);
    for (std::size_t start = 0; start < batch_order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      std::vector<Sequence> batch;
      for (std::size_t i = start; i < std::min(batch_order.size(), start + options.batch_size); ++i)
        batch.push_back(train_set[static_cast<std::size_t>(batch_order[i])]);
      Gradient g = options.parallel ? bptt_grad(params, batch) : bptt_grad_serial(params, batch);
      if (!g.values.allFinite())
        throw std::runtime_error("train: gradient became non-finite at epoch " + std::to_string(epoch));
      const double norm2 = g.values.norm();
      if (norm2 > options.clip_norm) g.values *= options.clip_norm / norm2;
      velocity = options.momentum * velocity - options.learning_rate * g.values;
      params.values += velocity;
    }
    result.history.push_back(evaluate(epoch));
    if (result.history.back().validation_mse < best) {
      best = result.history.back().validation_mse;
      result.best_epoch = epoch;
      result.model = {params, norm};
    }
  }
  result.final_model = {params, norm};
  return result;
}

VectorXd make_input(const Eigen::Vector3d& robot, double heading, const std::vector<Eigen::Vector3d>& features,
                    double sentinel_range) {
  std::vector<std::size_t> idx(features.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> d2(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) d2[i] = (features[i] - robot).squaredNorm();
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return d2[a] < d2[b]; });

  VectorXd in(18);
  in.head<3>() = robot;
  const Eigen::Vector3d sentinel = robot + sentinel_range * Eigen::Vector3d(std::cos(heading), std::sin(heading), 0.0);
  for (int slot = 0; slot < 5; ++slot) {
    Eigen::Vector3d f;
    if (idx.empty()) f = sentinel;
    else f = features[idx[std::min<std::size_t>(static_cast<std::size_t>(slot), idx.size() - 1)]];
    in.segment<3>(3 + 3 * slot) = f;
  }
  return in;
}

HorizonPrediction predict_horizon(const CovarianceModel& model, const std::vector<State2>& planned, double height,
                                  double heading, const std::vector<Eigen::Vector3d>& features,
                                  double sentinel_range, const HiddenState& carry_in) {
  if (planned.empty()) throw std::invalid_argument("predict_horizon: no planned poses");
  if (model.params.spec.input_width != 18) throw std::invalid_argument("predict_horizon: network input must be 18 wide");
  if (model.params.spec.output_width != 4) throw std::invalid_argument("predict_horizon: network output must be 4 wide");
  MatrixXd inputs(18, static_cast<Index>(planned.size()));
  for (std::size_t k = 0; k < planned.size(); ++k) {
    const VectorXd raw = make_input({planned[k].x, planned[k].y, height}, heading, features, sentinel_range);
    inputs.col(static_cast<Index>(k)) = model.norm.normalize_input(raw);
  }
  HorizonPrediction out;
  const auto first = forward(model.params, inputs.leftCols(1), &carry_in);
  out.after_first_step = first.final_hidden;
  MatrixXd outputs(4, inputs.cols());
  outputs.col(0) = first.outputs.col(0);
  if (inputs.cols() > 1) outputs.rightCols(inputs.cols() - 1) = forward(model.params, inputs.rightCols(inputs.cols() - 1), &first.final_hidden).outputs;
  for (Index k = 0; k < outputs.cols(); ++k) {
    const VectorXd raw = model.norm.denormalize_output(outputs.col(k));
    out.covariances.push_back(psd_correct({raw[0], raw[1], raw[2], raw[3]}));
  }
  return out;
}

namespace {

constexpr const char* kCheckpointTag = "riskmpc-checkpoint v1";

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

VectorXd from_json(const nlohmann::json& j, Index expected, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<Index>(v.size()) != expected)
    throw std::runtime_error(std::string("checkpoint: ") + what + " has " + std::to_string(v.size()) +
                             " entries, expected " + std::to_string(expected));
  return Eigen::Map<const VectorXd>(v.data(), expected);
}

}  // namespace

void save_checkpoint(std::ostream& os, const CovarianceModel& model) {
  const auto& s = model.params.spec;
  nlohmann::ordered_json j;
  j["spec"] = {{"input_width", s.input_width},
               {"output_width", s.output_width},
               {"recurrent_widths", s.recurrent_widths},
               {"dense_widths", s.dense_widths}};
  j["normalization"] = {{"input_mean", to_std(model.norm.input_mean)},
                        {"input_scale", to_std(model.norm.input_scale)},
                        {"output_mean", to_std(model.norm.output_mean)},
                        {"output_scale", to_std(model.norm.output_scale)}};
  j["parameters"] = to_std(model.params.values);
  os << kCheckpointTag << '\n' << j.dump() << '\n';
}

CovarianceModel load_checkpoint(std::istream& is) {
  std::string tag;
  std::getline(is, tag);
  if (tag != kCheckpointTag) throw std::runtime_error("checkpoint: unknown schema '" + tag + "'");
  nlohmann::json j;
  try {
    is >> j;
    NetSpec spec;
    spec.input_width = j.at("spec").at("input_width").get<int>();
    spec.output_width = j.at("spec").at("output_width").get<int>();
    spec.recurrent_widths = j.at("spec").at("recurrent_widths").get<std::vector<int>>();
    spec.dense_widths = j.at("spec").at("dense_widths").get<std::vector<int>>();
    validate(spec);
    CovarianceModel m;
    m.params = NetParams(spec);
    m.params.values = from_json(j.at("parameters"), parameter_count(spec), "parameters");
    const auto& n = j.at("normalization");
    m.norm.input_mean = from_json(n.at("input_mean"), spec.input_width, "input_mean");
    m.norm.input_scale = from_json(n.at("input_scale"), spec.input_width, "input_scale");
    m.norm.output_mean = from_json(n.at("output_mean"), spec.output_width, "output_mean");
    m.norm.output_scale = from_json(n.at("output_scale"), spec.output_width, "output_scale");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace riskmpc
