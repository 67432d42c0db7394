#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "hbeo/error.hpp"
#include "hbeo/kernels.hpp"
#include "hbeo/net.hpp"

using namespace hbeo;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.input_width = 8;
  s.input_height = 8;
  s.conv = {{2, 3}, {3, 3}, {3, 3}, {4, 3}};
  s.fc = {6, 5, 4};
  s.num_classes = 2;
  s.projection_dim = 3;
  return s;
}

std::vector<TrainSample> random_batch(std::mt19937_64& rng, const NetworkSpec& spec, int n) {
  std::normal_distribution<double> n01;
  std::uniform_int_distribution<int> label(0, spec.num_classes - 1);
  std::vector<TrainSample> out(n);
  for (auto& s : out) {
    s.input.resize(std::size_t(spec.input_width) * spec.input_height);
    for (auto& v : s.input) v = static_cast<float>(n01(rng));
    s.label = label(rng);
    s.pose = Eigen::Vector3d(n01(rng), n01(rng), n01(rng));
    s.target_projection = Eigen::VectorXd(spec.projection_dim);
    for (Eigen::Index j = 0; j < s.target_projection.size(); ++j) s.target_projection(j) = n01(rng);
  }
  return out;
}

JointNetwork jittered(const NetworkSpec& spec, std::uint64_t seed) {
  auto net = init_network(spec, seed);
  std::mt19937_64 rng(seed + 100);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (const auto& l : net.layers())
    for (std::size_t i = 0; i < l.bias_count; ++i) net.parameters()[l.bias_offset + i] = u(rng);
  return net;
}

double total_loss(const JointNetwork& net, std::span<const TrainSample> batch, const LossWeights& w) {
  return loss_and_gradients(net, batch, w, false).loss.total;
}

}  // namespace

TEST_CASE("network specs: shapes and parameter counts") {
  const auto desk = NetworkSpec::desk(3, 12);
  CHECK_NOTHROW(desk.validate());
  CHECK(desk.conv.size() == 4);
  CHECK(desk.fc == std::vector<int>{256, 128, 64});
  CHECK(desk.conv[0].out_channels == 8);
  CHECK(desk.conv[3].out_channels == 64);
  for (const auto& s : desk.conv_shapes()) {
    CHECK(s.stride == 2);
    CHECK(s.out_height() >= 1);
    CHECK(s.out_width() >= 1);
  }
  const auto full = NetworkSpec::full_scale(10, 344);
  CHECK_NOTHROW(full.validate());
  CHECK(full.input_width == 320);
  CHECK(full.input_height == 240);
  const double millions = double(full.parameter_count()) / 1e6;
  CHECK(millions > 13.5);
  CHECK(millions < 16.5);
  CHECK(init_network(desk, 1).parameters().size() == desk.parameter_count());
  CHECK(!desk.layer_table().empty());

  auto bad = desk;
  bad.conv.pop_back();
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = desk;
  bad.input_width = 4;
  bad.input_height = 4;
  bad.conv = {{2, 9}, {2, 9}, {2, 9}, {2, 9}};
  CHECK_NOTHROW(bad.validate());  // 4 -> 2 -> 1 -> 1 -> 1 still has one pixel
  bad.num_classes = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("init_network is deterministic in its seed") {
  const auto spec = NetworkSpec::desk(3, 8);
  const auto a = init_network(spec, 42), b = init_network(spec, 42), c = init_network(spec, 43);
  CHECK(a.parameters() == b.parameters());
  CHECK(a.parameters() != c.parameters());
  for (const auto& l : a.layers())
    for (std::size_t i = 0; i < l.bias_count; ++i) CHECK(a.parameters()[l.bias_offset + i] == 0.0);
}

TEST_CASE("forward: output dimensions and determinism") {
  std::mt19937_64 rng(1);
  const auto spec = NetworkSpec::desk(3, 7);
  const auto net = jittered(spec, 5);
  const auto batch = random_batch(rng, spec, 2);
  const auto a = forward(net, batch[0].input), b = forward(net, batch[0].input);
  CHECK(a.class_logits.size() == 3);
  CHECK(a.projection.size() == 7);
  CHECK(a.class_logits == b.class_logits);
  CHECK(a.pose == b.pose);
  CHECK(a.projection == b.projection);
  CHECK_THROWS_AS(forward(net, std::span<const float>(batch[0].input).first(10)), Error);
}

TEST_CASE("forward: zero weights give a uniform softmax") {
  auto net = init_network(NetworkSpec::desk(4, 5), 1);
  std::fill(net.parameters().begin(), net.parameters().end(), 0.0);
  std::mt19937_64 rng(2);
  const auto x = random_batch(rng, net.spec(), 1)[0].input;
  const auto out = forward(net, x);
  CHECK(out.class_logits.isZero(0.0));
  const auto p = softmax(out.class_logits);
  for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(p(i) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("forward: bias-free rectifier network is positively homogeneous") {
  const auto net = init_network(NetworkSpec::desk(3, 6), 9);  // biases start at zero
  std::mt19937_64 rng(3);
  auto x = random_batch(rng, net.spec(), 1)[0].input;
  const auto a = forward(net, x);
  for (auto& v : x) v *= 2.0f;
  const auto b = forward(net, x);
  CHECK((b.class_logits - 2.0 * a.class_logits).cwiseAbs().maxCoeff() <= 1e-12 * a.class_logits.cwiseAbs().maxCoeff());
  CHECK((b.pose - 2.0 * a.pose).cwiseAbs().maxCoeff() <= 1e-12 * a.pose.cwiseAbs().maxCoeff());
  CHECK((b.projection - 2.0 * a.projection).cwiseAbs().maxCoeff() <= 1e-12 * a.projection.cwiseAbs().maxCoeff());
}

TEST_CASE("softmax: normalized and stable for large logits") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 50);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd z(5);
    for (int i = 0; i < 5; ++i) z(i) = n(rng);
    const auto p = softmax(z);
    CHECK(p.allFinite());
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(p.minCoeff() >= 0.0);
    CHECK(p.maxCoeff() <= 1.0);
  }
}

TEST_CASE("normalize_depth standardizes object pixels and keeps background") {
  DepthImage img(6, 4);
  img.set(1, 1, 1.8f);
  img.set(2, 1, 2.0f);
  img.set(3, 2, 2.2f);
  const auto x = normalize_depth(img);
  double sum = 0.0, sq = 0.0;
  int count = 0;
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 6; ++xx) {
      const float v = x[std::size_t(y) * 6 + xx];
      if (img.at(xx, y) > 0) {
        sum += v;
        sq += double(v) * v;
        ++count;
      } else {
        CHECK(v == 0.0f);
      }
    }
  CHECK(sum / count == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
  CHECK(sq / count == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("loss: zero residual heads and uniform logits") {
  auto net = init_network(tiny_spec(), 3);
  std::fill(net.parameters().begin(), net.parameters().end(), 0.0);
  std::mt19937_64 rng(5);
  auto batch = random_batch(rng, net.spec(), 3);
  for (auto& s : batch) {
    s.pose.setZero();
    s.target_projection.setZero();
  }
  const auto l = loss_and_gradients(net, batch, {}).loss;
  CHECK(l.orientation == 0.0);
  CHECK(l.projection == 0.0);
  CHECK(l.classification == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("loss decomposes linearly in the weights") {
  std::mt19937_64 rng(6);
  const auto net = jittered(tiny_spec(), 7);
  const auto batch = random_batch(rng, net.spec(), 4);
  const double lc = total_loss(net, batch, {1, 0, 0});
  const double lo = total_loss(net, batch, {0, 1, 0});
  const double lp = total_loss(net, batch, {0, 0, 1});
  const LossWeights w{0.7, 2.5, 1.3};
  CHECK(total_loss(net, batch, w) == doctest::Approx(0.7 * lc + 2.5 * lo + 1.3 * lp).epsilon(1e-12));
  const auto parts = loss_and_gradients(net, batch, w).loss;
  CHECK(parts.classification == doctest::Approx(lc).epsilon(1e-12));
  CHECK(parts.orientation == doctest::Approx(lo).epsilon(1e-12));
  CHECK(parts.projection == doctest::Approx(lp).epsilon(1e-12));
}

TEST_CASE("gradient matches central differences over every parameter of the tiny spec") {
  std::mt19937_64 rng(7);
  const LossWeights w{1.0, 0.8, 1.2};
  double worst = 0.0;
  for (std::uint64_t seed : {11u, 12u}) {
    auto net = jittered(tiny_spec(), seed);
    const auto batch = random_batch(rng, net.spec(), 3);
    const auto analytic = loss_and_gradients(net, batch, w, false).gradient;
    REQUIRE(analytic.size() == net.parameters().size());
    const double h = 1e-4;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double keep = net.parameters()[i];
      net.parameters()[i] = keep + h;
      const double up = total_loss(net, batch, w);
      net.parameters()[i] = keep - h;
      const double down = total_loss(net, batch, w);
      net.parameters()[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double rel = std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("gradient: parallel and serial reductions are bitwise identical") {
  std::mt19937_64 rng(8);
  const auto net = jittered(tiny_spec(), 4);
  const auto batch = random_batch(rng, net.spec(), 7);
  const auto a = loss_and_gradients(net, batch, {}, true), b = loss_and_gradients(net, batch, {}, false);
  CHECK(a.gradient == b.gradient);
  CHECK(a.loss.total == b.loss.total);
}

TEST_CASE("gradient: classification weight zero leaves the class head untouched") {
  std::mt19937_64 rng(9);
  const auto net = jittered(tiny_spec(), 5);
  const auto batch = random_batch(rng, net.spec(), 4);
  const auto g = loss_and_gradients(net, batch, {0, 0, 1}).gradient;
  const auto& head = net.layers()[NetworkSpec::kConvLayers + NetworkSpec::kFcLayers];
  for (std::size_t i = 0; i < head.weight_count; ++i) CHECK(g[head.weight_offset + i] == 0.0);
  for (std::size_t i = 0; i < head.bias_count; ++i) CHECK(g[head.bias_offset + i] == 0.0);
  const auto& pose = net.layers()[NetworkSpec::kConvLayers + NetworkSpec::kFcLayers + 1];
  for (std::size_t i = 0; i < pose.weight_count; ++i) CHECK(g[pose.weight_offset + i] == 0.0);
}

TEST_CASE("loss rejects non-finite input and malformed targets") {
  std::mt19937_64 rng(10);
  const auto net = jittered(tiny_spec(), 6);
  auto batch = random_batch(rng, net.spec(), 2);
  batch[1].input[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(loss_and_gradients(net, batch, {}), doctest::Contains("sample 1"), Error);
  batch = random_batch(rng, net.spec(), 2);
  batch[0].label = 5;
  CHECK_THROWS_AS(loss_and_gradients(net, batch, {}), Error);
  CHECK_THROWS_AS((LossWeights{-1, 1, 1}.validate()), Error);
}

TEST_CASE("training overfits a single sample") {
  std::mt19937_64 rng(11);
  const auto spec = tiny_spec();
  const auto sample = random_batch(rng, spec, 1);
  OptimizerConfig opt;
  opt.learning_rate = 0.01;
  opt.momentum = 0.9;
  opt.batch_size = 1;
  opt.epochs = 200;
  opt.decay_at = {};
  const auto res = train(jittered(spec, 3), sample, {}, opt);
  REQUIRE(res.loss_curve.size() == 200);
  CHECK(res.loss_curve.back() < 0.1 * res.loss_curve.front());
}

TEST_CASE("training is deterministic for a fixed seed") {
  std::mt19937_64 rng(12);
  const auto spec = tiny_spec();
  const auto data = random_batch(rng, spec, 10);
  OptimizerConfig opt;
  opt.batch_size = 4;
  opt.epochs = 5;
  opt.learning_rate = 0.005;
  std::vector<int> epochs_seen;
  const auto a = train(jittered(spec, 1), data, {}, opt, [&](const TrainProgress& p) { epochs_seen.push_back(p.epoch); });
  const auto b = train(jittered(spec, 1), data, {}, opt);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.network.parameters() == b.network.parameters());
  CHECK(epochs_seen == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("training reports a non-finite loss as divergence") {
  std::mt19937_64 rng(13);
  const auto spec = tiny_spec();
  auto data = random_batch(rng, spec, 4);
  // Finite targets whose squared distance overflows.
  for (auto& s : data) s.target_projection.setConstant(1e300);
  OptimizerConfig opt;
  opt.batch_size = 2;
  opt.epochs = 2;
  CHECK_THROWS_WITH_AS(train(jittered(spec, 2), data, {}, opt), doctest::Contains("diverged"), Error);
}

TEST_CASE("infer_joint: zero projection head gives the empty completion") {
  auto net = jittered(tiny_spec(), 8);
  const auto& proj = net.layers().back();
  for (std::size_t i = 0; i < proj.weight_count; ++i) net.parameters()[proj.weight_offset + i] = 0.0;
  for (std::size_t i = 0; i < proj.bias_count; ++i) net.parameters()[proj.bias_offset + i] = 0.0;
  std::mt19937_64 rng(14);
  const SharedBasis basis(hbeo::test::random_orthonormal(rng, 64, 3), 4, {0, 1});
  const auto x = random_batch(rng, net.spec(), 1)[0].input;
  const auto inf = infer_joint(net, x, basis);
  CHECK(inf.completion.occupied_count() == 0);
  CHECK(inf.completion.resolution() == 4);
  CHECK(inf.posterior.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(inf.pose.angle() <= std::numbers::pi + 1e-12);
  CHECK(inf.class_index < 2);
  const SharedBasis wrong(hbeo::test::random_orthonormal(rng, 64, 5), 4, {0, 1});
  CHECK_THROWS_AS(infer_joint(net, x, wrong), Error);
}

TEST_CASE("infer_joint canonicalizes large-angle pose outputs") {
  auto net = jittered(tiny_spec(), 9);
  const auto& pose = net.layers()[NetworkSpec::kConvLayers + NetworkSpec::kFcLayers + 1];
  for (std::size_t i = 0; i < pose.weight_count; ++i) net.parameters()[pose.weight_offset + i] = 0.0;
  net.parameters()[pose.bias_offset] = 5.0;  // 5 rad about +x
  net.parameters()[pose.bias_offset + 1] = 0.0;
  net.parameters()[pose.bias_offset + 2] = 0.0;
  std::mt19937_64 rng(15);
  const SharedBasis basis(hbeo::test::random_orthonormal(rng, 64, 3), 4, {0, 1});
  const auto inf = infer_joint(net, random_batch(rng, net.spec(), 1)[0].input, basis);
  CHECK(inf.pose.angle() == doctest::Approx(2 * std::numbers::pi - 5.0).epsilon(1e-12));
  CHECK(geodesic_angle(inf.pose, Rotation(Eigen::Vector3d(5.0, 0, 0))) < 1e-9);
}

TEST_CASE("conv kernels: im2col path equals the direct-loop reference") {
  std::mt19937_64 rng(16);
  std::normal_distribution<double> n01;
  for (const kernels::ConvShape s : {kernels::ConvShape{1, 48, 64, 8, 5, 2, 2}, kernels::ConvShape{3, 7, 9, 4, 3, 2, 1},
                                     kernels::ConvShape{2, 5, 5, 3, 5, 2, 2}}) {
    auto fill = [&](std::size_t n) {
      std::vector<double> v(n);
      for (auto& x : v) x = n01(rng);
      return v;
    };
    const auto in = fill(std::size_t(s.in_channels) * s.in_height * s.in_width);
    const auto w = fill(std::size_t(s.out_channels) * s.patch_size());
    const auto b = fill(s.out_channels);
    const auto dout = fill(std::size_t(s.out_channels) * s.out_pixels());
    std::vector<double> out(dout.size()), ref(dout.size()), cols, dcols;
    kernels::conv2d_forward(s, in, w, b, out, cols);
    kernels::conv2d_forward_reference(s, in, w, b, ref);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0), din(in.size());
    std::vector<double> dw_ref(w.size(), 0.0), db_ref(b.size(), 0.0), din_ref(in.size());
    kernels::conv2d_backward(s, w, cols, dout, dw, db, din, dcols);
    kernels::conv2d_backward_reference(s, in, w, dout, dw_ref, db_ref, din_ref);
    for (std::size_t i = 0; i < dw.size(); ++i) CHECK(dw[i] == doctest::Approx(dw_ref[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < db.size(); ++i) CHECK(db[i] == doctest::Approx(db_ref[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < din.size(); ++i) CHECK(din[i] == doctest::Approx(din_ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("storage rounding is idempotent and float-exact") {
  auto net = jittered(tiny_spec(), 10);
  net.round_to_storage_precision();
  for (double p : net.parameters()) CHECK(double(float(p)) == p);
  const auto once = net.parameters();
  net.round_to_storage_precision();
  CHECK(net.parameters() == once);
}
