#include "hbeo/net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "hbeo/error.hpp"

namespace hbeo {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
}  // namespace

NetworkSpec NetworkSpec::desk(int num_classes, int projection_dim) {
  NetworkSpec s;
  s.num_classes = num_classes;
  s.projection_dim = projection_dim;
  return s;
}

NetworkSpec NetworkSpec::full_scale(int num_classes, int projection_dim) {
  NetworkSpec s;
  s.input_width = 320;
  s.input_height = 240;
  s.conv = {{32, 5}, {64, 5}, {128, 5}, {128, 5}};
  s.fc = {368, 256, 128};
  s.num_classes = num_classes;
  s.projection_dim = projection_dim;
  return s;
}

void NetworkSpec::validate() const {
  if (input_width < 1 || input_height < 1) throw Error("network input size must be positive");
  if (conv.size() != kConvLayers) throw Error("network needs exactly 4 convolution layers");
  if (fc.size() != kFcLayers) throw Error("network needs exactly 3 fully connected layers");
  for (const auto& c : conv)
    if (c.out_channels < 1 || c.kernel < 1) throw Error("invalid convolution layer");
  for (int w : fc)
    if (w < 1) throw Error("invalid fully connected width");
  if (num_classes < 1 || pose_dim != 3 || projection_dim < 1) throw Error("invalid network head sizes");
  int h = input_height, w = input_width;
  for (const auto& c : conv) {
    const int pad = c.kernel / 2;
    h = (h + 2 * pad - c.kernel) / kStride + 1;
    w = (w + 2 * pad - c.kernel) / kStride + 1;
    if (h < 1 || w < 1) throw Error("convolution stack reduces the input below 1x1");
  }
}

std::vector<kernels::ConvShape> NetworkSpec::conv_shapes() const {
  std::vector<kernels::ConvShape> out;
  int c_in = 1, h = input_height, w = input_width;
  for (const auto& c : conv) {
    kernels::ConvShape s{c_in, h, w, c.out_channels, c.kernel, kStride, c.kernel / 2};
    out.push_back(s);
    c_in = c.out_channels;
    h = s.out_height();
    w = s.out_width();
  }
  return out;
}

int NetworkSpec::flattened_size() const {
  const auto s = conv_shapes().back();
  return s.out_channels * s.out_pixels();
}

std::size_t NetworkSpec::parameter_count() const {
  validate();
  std::size_t n = 0;
  for (const auto& s : conv_shapes()) n += std::size_t(s.out_channels) * s.patch_size() + s.out_channels;
  int prev = flattened_size();
  for (int w : fc) {
    n += std::size_t(w) * prev + w;
    prev = w;
  }
  for (int head : {num_classes, pose_dim, projection_dim}) n += std::size_t(head) * prev + head;
  return n;
}

std::string NetworkSpec::layer_table() const {
  std::ostringstream out;
  int i = 0;
  for (const auto& s : conv_shapes()) {
    out << "conv" << i++ << "  " << s.in_channels << "x" << s.in_height << "x" << s.in_width << " -> " << s.out_channels
        << "x" << s.out_height() << "x" << s.out_width() << "  k" << s.kernel << " s" << s.stride << "  params "
        << std::size_t(s.out_channels) * s.patch_size() + s.out_channels << "\n";
  }
  int prev = flattened_size();
  i = 0;
  for (int w : fc) {
    out << "fc" << i++ << "    " << prev << " -> " << w << "  params " << std::size_t(w) * prev + w << "\n";
    prev = w;
  }
  const char* names[3] = {"class", "pose", "proj"};
  const int heads[3] = {num_classes, pose_dim, projection_dim};
  for (int h = 0; h < 3; ++h)
    out << names[h] << "  " << prev << " -> " << heads[h] << "  params " << std::size_t(heads[h]) * prev + heads[h]
        << "\n";
  out << "total params " << parameter_count() << "\n";
  return out.str();
}

namespace {

std::vector<JointNetwork::LayerView> make_layout(const NetworkSpec& spec) {
  std::vector<JointNetwork::LayerView> layers;
  std::size_t off = 0;
  auto add = [&](std::size_t wcount, std::size_t bcount) {
    layers.push_back({off, wcount, off + wcount, bcount});
    off += wcount + bcount;
  };
  for (const auto& s : spec.conv_shapes()) add(std::size_t(s.out_channels) * s.patch_size(), s.out_channels);
  int prev = spec.flattened_size();
  for (int w : spec.fc) {
    add(std::size_t(w) * prev, w);
    prev = w;
  }
  for (int head : {spec.num_classes, spec.pose_dim, spec.projection_dim}) add(std::size_t(head) * prev, head);
  return layers;
}

}  // namespace

JointNetwork::JointNetwork(NetworkSpec spec, std::vector<double> params, std::uint64_t seed)
    : spec_(std::move(spec)), params_(std::move(params)), seed_(seed) {
  spec_.validate();
  layers_ = make_layout(spec_);
  if (params_.size() != spec_.parameter_count()) throw Error("parameter count does not match network spec");
  if (!std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); }))
    throw Error("network parameters contain non-finite values");
}

void JointNetwork::round_to_storage_precision() {
  for (auto& p : params_) p = static_cast<double>(static_cast<float>(p));
}

JointNetwork init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto layout = make_layout(spec);
  std::vector<double> params(spec.parameter_count(), 0.0);
  std::mt19937_64 rng(seed);
  const auto shapes = spec.conv_shapes();
  std::vector<int> fan_in;
  for (const auto& s : shapes) fan_in.push_back(s.patch_size());
  fan_in.push_back(spec.flattened_size());
  fan_in.push_back(spec.fc[0]);
  fan_in.push_back(spec.fc[1]);
  for (int h = 0; h < 3; ++h) fan_in.push_back(spec.fc[2]);
  for (std::size_t l = 0; l < layout.size(); ++l) {
    // Rectified layers get the wider bound; the linear heads the narrower one.
    const bool rectified = l < NetworkSpec::kConvLayers + NetworkSpec::kFcLayers;
    const double bound = std::sqrt((rectified ? 6.0 : 3.0) / fan_in[l]);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < layout[l].weight_count; ++i) params[layout[l].weight_offset + i] = dist(rng);
  }
  return JointNetwork(spec, std::move(params), seed);
}

std::vector<float> normalize_depth(const DepthImage& depth) {
  const auto& d = depth.data();
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (float v : d)
    if (v > 0) {
      sum += v;
      sq += double(v) * v;
      ++n;
    }
  std::vector<float> out(d.size(), 0.0f);
  if (n == 0) return out;
  const double mean = sum / double(n);
  const double var = std::max(sq / double(n) - mean * mean, 0.0);
  const double inv = var > 1e-20 ? 1.0 / std::sqrt(var) : 1.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0) out[i] = static_cast<float>((d[i] - mean) * inv);
  return out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

namespace {

struct Activations {
  std::vector<std::vector<double>> cols;      // im2col of each conv input
  std::vector<std::vector<double>> conv_out;  // rectified conv outputs
  std::vector<Eigen::VectorXd> fc_out;        // rectified fc outputs
  Eigen::VectorXd logits, pose, proj;
};

void forward_impl(const JointNetwork& net, std::span<const double> input, Activations& a) {
  const auto& spec = net.spec();
  const auto& p = net.parameters();
  const auto& layers = net.layers();
  const auto shapes = spec.conv_shapes();
  a.cols.resize(shapes.size());
  a.conv_out.resize(shapes.size());
  std::span<const double> x = input;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    a.conv_out[l].resize(std::size_t(s.out_channels) * s.out_pixels());
    kernels::conv2d_forward(s, x, std::span(p.data() + layers[l].weight_offset, layers[l].weight_count),
                            std::span(p.data() + layers[l].bias_offset, layers[l].bias_count), a.conv_out[l],
                            a.cols[l]);
    for (auto& v : a.conv_out[l]) v = v > 0 ? v : 0.0;
    x = a.conv_out[l];
  }
  a.fc_out.resize(spec.fc.size());
  Eigen::VectorXd h = ConstVecMap(x.data(), static_cast<Eigen::Index>(x.size()));
  for (std::size_t f = 0; f < spec.fc.size(); ++f) {
    const auto& L = layers[shapes.size() + f];
    ConstMatMap w(p.data() + L.weight_offset, spec.fc[f], h.size());
    ConstVecMap b(p.data() + L.bias_offset, spec.fc[f]);
    a.fc_out[f] = (w * h + b).cwiseMax(0.0);
    h = a.fc_out[f];
  }
  const std::size_t head0 = shapes.size() + spec.fc.size();
  auto head = [&](std::size_t idx, int out) {
    const auto& L = layers[head0 + idx];
    ConstMatMap w(p.data() + L.weight_offset, out, h.size());
    ConstVecMap b(p.data() + L.bias_offset, out);
    return Eigen::VectorXd(w * h + b);
  };
  a.logits = head(0, spec.num_classes);
  a.pose = head(1, spec.pose_dim);
  a.proj = head(2, spec.projection_dim);
}

std::vector<double> to_double(std::span<const float> in) { return {in.begin(), in.end()}; }

void check_input(const JointNetwork& net, std::span<const float> input) {
  if (input.size() != std::size_t(net.spec().input_width) * net.spec().input_height)
    throw Error("input image size does not match network spec");
  // Rectifiers map NaN to 0, so a bad pixel would otherwise vanish silently.
  if (!std::all_of(input.begin(), input.end(), [](float v) { return std::isfinite(v); }))
    throw Error("input image contains non-finite values");
}

// Reverse pass for one sample given head-output gradients; writes a complete
// gradient into `grad` (overwritten).
void backward_impl(const JointNetwork& net, const Activations& a, const Eigen::VectorXd& d_logits,
                   const Eigen::VectorXd& d_pose, const Eigen::VectorXd& d_proj, std::vector<double>& grad,
                   std::vector<double>& dcols) {
  const auto& spec = net.spec();
  const auto& p = net.parameters();
  const auto& layers = net.layers();
  const auto shapes = spec.conv_shapes();
  std::fill(grad.begin(), grad.end(), 0.0);

  const std::size_t nconv = shapes.size(), nfc = spec.fc.size(), head0 = nconv + nfc;
  const Eigen::VectorXd& h3 = a.fc_out.back();
  Eigen::VectorXd dh = Eigen::VectorXd::Zero(h3.size());
  const Eigen::VectorXd* dheads[3] = {&d_logits, &d_pose, &d_proj};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& L = layers[head0 + i];
    const auto out = dheads[i]->size();
    MatMap gw(grad.data() + L.weight_offset, out, h3.size());
    VecMap gb(grad.data() + L.bias_offset, out);
    gw.noalias() += *dheads[i] * h3.transpose();
    gb += *dheads[i];
    dh.noalias() += ConstMatMap(p.data() + L.weight_offset, out, h3.size()).transpose() * *dheads[i];
  }

  const auto& last_conv = a.conv_out.back();
  const ConstVecMap flat(last_conv.data(), static_cast<Eigen::Index>(last_conv.size()));
  for (std::size_t f = nfc; f-- > 0;) {
    const Eigen::VectorXd& out = a.fc_out[f];
    const Eigen::VectorXd dpre = (out.array() > 0).select(dh, 0.0);
    const auto& L = layers[nconv + f];
    const Eigen::VectorXd prev = f == 0 ? Eigen::VectorXd(flat) : a.fc_out[f - 1];
    MatMap gw(grad.data() + L.weight_offset, out.size(), prev.size());
    VecMap gb(grad.data() + L.bias_offset, out.size());
    gw.noalias() += dpre * prev.transpose();
    gb += dpre;
    dh = ConstMatMap(p.data() + L.weight_offset, out.size(), prev.size()).transpose() * dpre;
  }

  std::vector<double> dout(dh.data(), dh.data() + dh.size());
  std::vector<double> din;
  for (std::size_t l = nconv; l-- > 0;) {
    const auto& s = shapes[l];
    for (std::size_t i = 0; i < dout.size(); ++i)
      if (!(a.conv_out[l][i] > 0)) dout[i] = 0.0;
    const auto& L = layers[l];
    if (l > 0) din.assign(std::size_t(s.in_channels) * s.in_height * s.in_width, 0.0);
    kernels::conv2d_backward(s, std::span(p.data() + L.weight_offset, L.weight_count), a.cols[l], dout,
                             std::span(grad.data() + L.weight_offset, L.weight_count),
                             std::span(grad.data() + L.bias_offset, L.bias_count),
                             l > 0 ? std::span<double>(din) : std::span<double>(), dcols);
    if (l > 0) dout.swap(din);
  }
}

}  // namespace

JointPrediction forward(const JointNetwork& net, std::span<const float> input) {
  check_input(net, input);
  Activations a;
  const auto x = to_double(input);
  forward_impl(net, x, a);
  return {a.logits, Eigen::Vector3d(a.pose), a.proj};
}

JointPrediction forward(const JointNetwork& net, const DepthImage& depth) {
  if (depth.width() != net.spec().input_width || depth.height() != net.spec().input_height)
    throw Error("depth image size does not match network input");
  return forward(net, normalize_depth(depth));
}

void LossWeights::validate() const {
  if (!(classification >= 0) || !(orientation >= 0) || !(projection >= 0))
    throw Error("loss weights must be non-negative");
  if (!(classification > 0 || orientation > 0 || projection > 0)) throw Error("at least one loss weight must be positive");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0)) throw Error("learning rate must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw Error("momentum must lie in [0, 1)");
  if (batch_size < 1) throw Error("batch size must be at least 1");
  if (epochs < 1) throw Error("epochs must be at least 1");
}

LossAndGradient loss_and_gradients(const JointNetwork& net, std::span<const TrainSample> batch,
                                   const LossWeights& weights, bool parallel) {
  weights.validate();
  if (batch.empty()) throw Error("loss over an empty batch");
  const auto& spec = net.spec();
  const std::size_t n = batch.size(), np = net.parameters().size();
  const double inv_n = 1.0 / double(n);

  // Reused across calls from the same thread; reduction needs every sample's buffer at once.
  static thread_local std::vector<std::vector<double>> per_sample;
  if (per_sample.size() < n) per_sample.resize(n);
  std::vector<LossBreakdown> parts(n);
  std::vector<char> bad(n, 0);

  const int count = static_cast<int>(n);
#pragma omp parallel if (parallel)
  {
    Activations a;
    std::vector<double> x, dcols;
#pragma omp for schedule(dynamic)
    for (int i = 0; i < count; ++i) {
      const TrainSample& s = batch[static_cast<std::size_t>(i)];
      try {
        check_input(net, s.input);
        if (!s.pose.allFinite() || !s.target_projection.allFinite()) throw Error("non-finite training target");
        if (s.label < 0 || s.label >= spec.num_classes) throw Error("label out of range");
        if (s.target_projection.size() != spec.projection_dim) throw Error("target projection length mismatch");
        x.assign(s.input.begin(), s.input.end());
        forward_impl(net, x, a);

        const Eigen::VectorXd prob = softmax(a.logits);
        const double m = a.logits.maxCoeff();
        const double lse = m + std::log((a.logits.array() - m).exp().sum());
        LossBreakdown& lb = parts[static_cast<std::size_t>(i)];
        lb.classification = lse - a.logits(s.label);
        const Eigen::VectorXd epose = a.pose - s.pose;
        const Eigen::VectorXd eproj = a.proj - s.target_projection;
        lb.orientation = epose.norm();
        lb.projection = eproj.norm();
        lb.total = weights.classification * lb.classification + weights.orientation * lb.orientation +
                   weights.projection * lb.projection;
        if (!std::isfinite(lb.total)) throw Error("non-finite loss");

        Eigen::VectorXd d_logits = prob;
        d_logits(s.label) -= 1.0;
        d_logits *= weights.classification * inv_n;
        // Subgradient 0 at an exact hit of the target.
        const Eigen::VectorXd d_pose =
            lb.orientation > 0 ? Eigen::VectorXd(epose * (weights.orientation * inv_n / lb.orientation))
                               : Eigen::VectorXd::Zero(3);
        const Eigen::VectorXd d_proj =
            lb.projection > 0 ? Eigen::VectorXd(eproj * (weights.projection * inv_n / lb.projection))
                              : Eigen::VectorXd::Zero(eproj.size());
        auto& g = per_sample[static_cast<std::size_t>(i)];
        g.resize(np);
        backward_impl(net, a, d_logits, d_pose, d_proj, g, dcols);
      } catch (const std::exception&) {
        bad[static_cast<std::size_t>(i)] = 1;
      }
    }
  }

  LossAndGradient out;
  out.gradient.assign(np, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (bad[i]) throw Error("non-finite or invalid loss at batch sample " + std::to_string(i));
    out.loss.classification += parts[i].classification * inv_n;
    out.loss.orientation += parts[i].orientation * inv_n;
    out.loss.projection += parts[i].projection * inv_n;
    const auto& g = per_sample[i];
    for (std::size_t j = 0; j < np; ++j) out.gradient[j] += g[j];
  }
  out.loss.total = weights.classification * out.loss.classification + weights.orientation * out.loss.orientation +
                   weights.projection * out.loss.projection;
  return out;
}

TrainResult train(JointNetwork net, std::span<const TrainSample> dataset, const LossWeights& weights,
                  const OptimizerConfig& opt, const std::function<void(const TrainProgress&)>& on_epoch) {
  opt.validate();
  weights.validate();
  if (dataset.empty()) throw Error("training dataset is empty");
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto& params = net.parameters();
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<TrainSample> batch;

  TrainResult result;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double lr = opt.learning_rate;
    for (double at : opt.decay_at)
      if (double(epoch) >= at * opt.epochs) lr *= opt.decay_factor;
    std::shuffle(order.begin(), order.end(), rng);

    LossBreakdown sum;
    int b = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(opt.batch_size), ++b) {
      const std::size_t end = std::min(order.size(), start + std::size_t(opt.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
      LossAndGradient lg;
      try {
        lg = loss_and_gradients(net, batch, weights);
      } catch (const Error& e) {
        throw Error("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " +
                    e.what());
      }
      for (std::size_t j = 0; j < params.size(); ++j) {
        velocity[j] = opt.momentum * velocity[j] - lr * lg.gradient[j];
        params[j] += velocity[j];
      }
      const double w = double(end - start) / double(order.size());
      sum.total += lg.loss.total * w;
      sum.classification += lg.loss.classification * w;
      sum.orientation += lg.loss.orientation * w;
      sum.projection += lg.loss.projection * w;
    }
    if (!std::isfinite(sum.total)) throw Error("training diverged at epoch " + std::to_string(epoch));
    result.loss_curve.push_back(sum.total);
    if (on_epoch) on_epoch({epoch, sum.total, sum, lr});
  }
  result.network = std::move(net);
  return result;
}

JointInference infer_joint(const JointNetwork& net, std::span<const float> input, const SharedBasis& basis) {
  if (basis.rank() != net.spec().projection_dim) throw Error("network projection head does not match basis rank");
  const JointPrediction pred = forward(net, input);
  JointInference out;
  out.posterior = softmax(pred.class_logits);
  Eigen::Index best;
  out.posterior.maxCoeff(&best);
  out.class_index = static_cast<std::size_t>(best);
  out.pose = Rotation(pred.pose).canonical();
  out.coefficients = pred.projection;
  out.completion = back_project(pred.projection, basis, true);
  return out;
}

JointInference infer_joint(const JointNetwork& net, const DepthImage& depth, const SharedBasis& basis) {
  if (depth.width() != net.spec().input_width || depth.height() != net.spec().input_height)
    throw Error("depth image size does not match network input");
  return infer_joint(net, normalize_depth(depth), basis);
}

}  // namespace hbeo
