#include "hbeo/model.hpp"

#include <cmath>
#include <limits>

#include "hbeo/error.hpp"
#include "hbeo/io.hpp"

namespace hbeo {

namespace {

constexpr char kMagic[4] = {'H', 'B', 'E', 'O'};

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

template <typename Derived>
void round_dense(Eigen::DenseBase<Derived>& m) {
  m = m.derived().unaryExpr([](double v) { return to_f32(v); });
}

// Largest float32 not above v; keeps rounded variances at or above the floor.
double float_floor(double v) {
  auto f = static_cast<float>(v);
  if (static_cast<double>(f) > v) f = std::nextafter(f, -std::numeric_limits<float>::infinity());
  return static_cast<double>(f);
}

void put_matrix(io::Writer& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.f32(static_cast<float>(m(i, j)));
}

Eigen::MatrixXd get_matrix(io::Reader& r, std::size_t rows, std::size_t cols) {
  if (rows * cols * 4 > r.remaining()) throw FormatError("truncated file");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f32();
  return m;
}

Eigen::VectorXd get_vector(io::Reader& r, std::size_t n) { return get_matrix(r, n, 1).col(0); }

std::uint32_t checked_u32(std::size_t v) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw Error("value too large for model container");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void HbeoModel::round_to_storage_precision() {
  Eigen::MatrixXd w = basis.matrix();
  round_dense(w);
  basis = SharedBasis(std::move(w), basis.resolution(), basis.class_ids());
  for (auto& s : subspaces) {
    round_dense(s.basis);
    round_dense(s.mean);
    round_dense(s.coefficients);
  }
  for (auto& g : gmms) {
    g.covariance_floor = float_floor(g.covariance_floor);
    for (auto& c : g.components) {
      round_dense(c.mean);
      round_dense(c.variance);
    }
  }
  if (network) network->round_to_storage_precision();
}

void HbeoModel::validate() const {
  const std::size_t m = class_names.size();
  if (m < 1) throw Error("model has no classes");
  if (basis.rank() < 1) throw Error("model has no shared basis");
  if (basis.resolution() != resolution) throw Error("basis resolution does not match model resolution");
  if (!gmms.empty()) {
    if (gmms.size() != m) throw Error("model needs one mixture per class");
    for (const auto& g : gmms) {
      g.validate();
      if (g.dimension() != basis.rank()) throw Error("mixture dimension does not match basis rank");
    }
  }
  for (const auto& s : subspaces)
    if (s.dimension() != basis.dimension()) throw Error("class subspace dimension does not match basis");
  if (network) {
    if (network->spec().num_classes != static_cast<int>(m)) throw Error("network class head does not match model");
    if (network->spec().projection_dim != basis.rank()) throw Error("network projection head does not match basis");
  }
}

std::vector<std::uint8_t> encode_model(const HbeoModel& model) {
  model.validate();
  io::Writer w;
  w.raw(std::string_view(kMagic, 4));
  w.u16(kModelVersion);
  const auto d = static_cast<std::size_t>(model.basis.dimension()), k = static_cast<std::size_t>(model.basis.rank());
  w.u32(checked_u32(d));
  w.u32(checked_u32(k));
  w.u32(checked_u32(static_cast<std::size_t>(model.resolution)));
  w.u32(checked_u32(model.class_names.size()));
  for (const auto& n : model.class_names) w.str(n);

  w.u32(checked_u32(model.basis.class_ids().size()));
  for (int id : model.basis.class_ids()) w.u32(static_cast<std::uint32_t>(id));
  put_matrix(w, model.basis.matrix());

  w.u32(checked_u32(model.subspaces.size()));
  for (const auto& s : model.subspaces) {
    w.u32(static_cast<std::uint32_t>(s.class_id));
    w.u32(checked_u32(static_cast<std::size_t>(s.components())));
    w.u32(checked_u32(static_cast<std::size_t>(s.coefficients.cols())));
    w.f64(s.noise_variance);
    w.f64(s.captured_variance);
    put_matrix(w, s.basis);
    put_matrix(w, s.mean);
    put_matrix(w, s.coefficients);
    w.u32(checked_u32(s.objective_history.size()));
    for (double v : s.objective_history) w.f64(v);
  }

  w.u32(checked_u32(model.gmms.size()));
  for (const auto& g : model.gmms) {
    w.u32(static_cast<std::uint32_t>(g.class_id));
    w.f64(float_floor(g.covariance_floor));  // keeps float32-rounded variances above it
    w.u32(checked_u32(g.components.size()));
    w.u32(checked_u32(static_cast<std::size_t>(g.dimension())));
    for (const auto& c : g.components) {
      w.f64(c.weight);
      put_matrix(w, c.mean);
      put_matrix(w, c.variance);
    }
  }

  w.u8(model.network ? 1 : 0);
  if (model.network) {
    const auto& net = *model.network;
    const auto& s = net.spec();
    w.u32(static_cast<std::uint32_t>(s.input_width));
    w.u32(static_cast<std::uint32_t>(s.input_height));
    w.u32(checked_u32(s.conv.size()));
    for (const auto& c : s.conv) {
      w.u32(static_cast<std::uint32_t>(c.out_channels));
      w.u32(static_cast<std::uint32_t>(c.kernel));
    }
    w.u32(checked_u32(s.fc.size()));
    for (int f : s.fc) w.u32(static_cast<std::uint32_t>(f));
    w.u32(static_cast<std::uint32_t>(s.num_classes));
    w.u32(static_cast<std::uint32_t>(s.pose_dim));
    w.u32(static_cast<std::uint32_t>(s.projection_dim));
    w.u64(net.seed());
    w.u64(net.parameters().size());
    for (double p : net.parameters()) w.f32(static_cast<float>(p));
  }
  w.u32(io::crc32(w.buffer()));
  return std::move(w.buffer());
}

HbeoModel decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 2 + 4) throw FormatError("truncated file");
  if (std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != std::string_view(kMagic, 4))
    throw FormatError("not an HBEO model (bad magic)");
  const auto body = bytes.first(bytes.size() - 4);
  io::Reader tail(bytes.last(4));
  if (tail.u32() != io::crc32(body)) throw ChecksumError("model checksum mismatch (file corrupted)");

  io::Reader r(body);
  r.take(4);
  if (const auto v = r.u16(); v != kModelVersion) throw FormatError("unsupported model version " + std::to_string(v));
  HbeoModel m;
  const std::size_t d = r.u32(), k = r.u32();
  m.resolution = static_cast<int>(r.u32());
  const std::size_t ncls = r.u32();
  if (std::size_t(m.resolution) * m.resolution * m.resolution != d) throw FormatError("model d does not equal r^3");
  if (ncls > r.remaining()) throw FormatError("truncated file");
  for (std::size_t i = 0; i < ncls; ++i) m.class_names.push_back(r.str());

  const std::size_t nids = r.u32();
  if (nids * 4 > r.remaining()) throw FormatError("truncated file");
  std::vector<int> ids;
  for (std::size_t i = 0; i < nids; ++i) ids.push_back(static_cast<int>(r.u32()));
  m.basis = SharedBasis(get_matrix(r, d, k), m.resolution, ids);

  const std::size_t nsub = r.u32();
  for (std::size_t i = 0; i < nsub; ++i) {
    ClassSubspace s;
    s.class_id = static_cast<int>(r.u32());
    const std::size_t ki = r.u32(), n = r.u32();
    s.noise_variance = r.f64();
    s.captured_variance = r.f64();
    s.basis = get_matrix(r, d, ki);
    s.mean = get_vector(r, d);
    s.coefficients = get_matrix(r, ki, n);
    const std::size_t nh = r.u32();
    if (nh * 8 > r.remaining()) throw FormatError("truncated file");
    for (std::size_t j = 0; j < nh; ++j) s.objective_history.push_back(r.f64());
    m.subspaces.push_back(std::move(s));
  }

  const std::size_t ngmm = r.u32();
  for (std::size_t i = 0; i < ngmm; ++i) {
    ClassGMM g;
    g.class_id = static_cast<int>(r.u32());
    g.covariance_floor = r.f64();
    const std::size_t nc = r.u32(), dim = r.u32();
    if (nc > r.remaining()) throw FormatError("truncated file");
    for (std::size_t c = 0; c < nc; ++c) {
      ClassGMM::Component comp;
      comp.weight = r.f64();
      comp.mean = get_vector(r, dim);
      comp.variance = get_vector(r, dim);
      g.components.push_back(std::move(comp));
    }
    m.gmms.push_back(std::move(g));
  }

  if (r.u8()) {
    NetworkSpec s;
    s.input_width = static_cast<int>(r.u32());
    s.input_height = static_cast<int>(r.u32());
    s.conv.resize(r.u32());
    if (s.conv.size() != NetworkSpec::kConvLayers) throw FormatError("network section has wrong conv layer count");
    for (auto& c : s.conv) {
      c.out_channels = static_cast<int>(r.u32());
      c.kernel = static_cast<int>(r.u32());
    }
    s.fc.resize(r.u32());
    if (s.fc.size() != NetworkSpec::kFcLayers) throw FormatError("network section has wrong fc layer count");
    for (auto& f : s.fc) f = static_cast<int>(r.u32());
    s.num_classes = static_cast<int>(r.u32());
    s.pose_dim = static_cast<int>(r.u32());
    s.projection_dim = static_cast<int>(r.u32());
    const std::uint64_t seed = r.u64();
    const std::uint64_t np = r.u64();
    if (np * 4 > r.remaining()) throw FormatError("truncated file");
    std::vector<double> params(np);
    for (auto& p : params) p = r.f32();
    try {
      m.network = JointNetwork(s, std::move(params), seed);
    } catch (const Error& e) {
      throw FormatError(std::string("invalid network section: ") + e.what());
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after model sections");
  m.validate();
  return m;
}

void save_model(const std::string& path, const HbeoModel& model) { io::write_atomic(path, encode_model(model)); }

HbeoModel load_model(const std::string& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_model(bytes);
  } catch (const ChecksumError& e) {
    throw ChecksumError(path + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace hbeo
