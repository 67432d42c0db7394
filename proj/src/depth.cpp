#include "hbeo/depth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "hbeo/error.hpp"
#include "hbeo/io.hpp"

namespace hbeo {

Camera Camera::with_image_size(int width, int height, double distance, double fraction) {
  Camera c;
  c.width = width;
  c.height = height;
  c.distance = distance;
  c.focal = fraction * height * distance;
  return c;
}

std::size_t DepthImage::object_pixels() const {
  return static_cast<std::size_t>(std::count_if(depth_.begin(), depth_.end(), [](float d) { return d > 0.0f; }));
}

DepthImage render_depth(const TriangleMesh& mesh, const Rotation& pose, const Camera& camera) {
  if (camera.width < 1 || camera.height < 1 || !(camera.focal > 0) || !(camera.distance > 0))
    throw Error("invalid camera intrinsics");
  validate(mesh);
  const Eigen::Matrix3d rot = pose.matrix();
  const double cx = 0.5 * camera.width, cy = 0.5 * camera.height, f = camera.focal;
  constexpr double kNear = 1e-6;

  std::vector<Eigen::Vector3d> cam(mesh.vertices.size());
  for (std::size_t i = 0; i < cam.size(); ++i) {
    cam[i] = rot * mesh.vertices[i];
    cam[i].z() += camera.distance;
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> zbuf(std::size_t(camera.width) * camera.height, inf);
  for (const auto& face : mesh.faces) {
    const Eigen::Vector3d& a = cam[face[0]];
    const Eigen::Vector3d& b = cam[face[1]];
    const Eigen::Vector3d& c = cam[face[2]];
    if (a.z() <= kNear || b.z() <= kNear || c.z() <= kNear) continue;
    const Eigen::Vector3d n = (b - a).cross(c - a);
    const double plane = n.dot(a);
    double su[3], sv[3];
    const Eigen::Vector3d* v[3] = {&a, &b, &c};
    for (int k = 0; k < 3; ++k) {
      su[k] = cx + f * v[k]->x() / v[k]->z();
      sv[k] = cy - f * v[k]->y() / v[k]->z();
    }
    double area = (su[1] - su[0]) * (sv[2] - sv[0]) - (sv[1] - sv[0]) * (su[2] - su[0]);
    if (area == 0 || !std::isfinite(area)) continue;
    const double sign = area > 0 ? 1.0 : -1.0;
    const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({su[0], su[1], su[2]}) - 0.5)));
    const int x1 = std::min(camera.width - 1, static_cast<int>(std::floor(std::max({su[0], su[1], su[2]}) - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({sv[0], sv[1], sv[2]}) - 0.5)));
    const int y1 = std::min(camera.height - 1, static_cast<int>(std::floor(std::max({sv[0], sv[1], sv[2]}) - 0.5)));
    for (int py = y0; py <= y1; ++py) {
      const double pv = py + 0.5;
      for (int px = x0; px <= x1; ++px) {
        const double pu = px + 0.5;
        bool inside = true;
        for (int e = 0; e < 3 && inside; ++e) {
          const int e1 = (e + 1) % 3;
          const double s = (su[e1] - su[e]) * (pv - sv[e]) - (sv[e1] - sv[e]) * (pu - su[e]);
          inside = sign * s >= 0;
        }
        if (!inside) continue;
        const Eigen::Vector3d dir((pu - cx) / f, -(pv - cy) / f, 1.0);
        const double denom = n.dot(dir);
        if (denom == 0) continue;
        const double depth = plane / denom;
        if (!(depth > kNear)) continue;
        double& slot = zbuf[std::size_t(py) * camera.width + px];
        slot = std::min(slot, depth);
      }
    }
  }

  DepthImage img(camera.width, camera.height);
  std::size_t hits = 0;
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) {
      const double z = zbuf[std::size_t(y) * camera.width + x];
      if (std::isfinite(z)) {
        img.set(x, y, static_cast<float>(z));
        ++hits;
      }
    }
  if (hits == 0) throw Error("empty render: object lies outside the camera frustum");
  return img;
}

std::string depth_sidecar_path(const std::string& pgm_path) { return pgm_path + ".txt"; }

double depth_quantum(double depth_min, double depth_max) { return (depth_max - depth_min) / 65534.0; }

namespace {

std::pair<double, double> depth_range(const DepthImage& image) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  for (float d : image.data())
    if (d > 0) {
      lo = std::min(lo, double(d));
      hi = std::max(hi, double(d));
    }
  if (!std::isfinite(lo)) throw Error("refusing to save a depth image with no object pixels");
  if (hi == lo) hi = lo + 1e-3;
  return {lo, hi};
}

float dequantize(std::uint16_t q, double lo, double hi) {
  return static_cast<float>(lo + (q - 1) / 65534.0 * (hi - lo));
}

}  // namespace

DepthImage quantize_depth(const DepthImage& image) {
  const auto [lo, hi] = depth_range(image);
  DepthImage out(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const float d = image.at(x, y);
      if (d > 0) out.set(x, y, dequantize(static_cast<std::uint16_t>(1 + std::lround((d - lo) / (hi - lo) * 65534.0)), lo, hi));
    }
  return out;
}

void save_depth_pgm(const std::string& path, const DepthImage& image, const Camera& camera) {
  const auto [lo, hi] = depth_range(image);

  io::Writer w;
  w.raw("P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n65535\n");
  for (float d : image.data()) {
    std::uint16_t q = 0;
    if (d > 0) q = static_cast<std::uint16_t>(1 + std::lround((d - lo) / (hi - lo) * 65534.0));
    // PGM stores 16-bit samples most significant byte first.
    w.u8(static_cast<std::uint8_t>(q >> 8));
    w.u8(static_cast<std::uint8_t>(q & 0xff));
  }
  std::ostringstream meta;
  meta.precision(17);
  meta << "depth_min " << lo << "\ndepth_max " << hi << "\nwidth " << camera.width << "\nheight " << camera.height
       << "\nfocal " << camera.focal << "\ndistance " << camera.distance << "\n";
  io::write_atomic(depth_sidecar_path(path), meta.str());
  io::write_atomic(path, w.buffer());
}

namespace {

DepthFileInfo read_sidecar(const std::string& path) {
  std::istringstream in(io::read_text(path));
  DepthFileInfo info;
  bool have_min = false, have_max = false;
  std::string key;
  while (in >> key) {
    double v;
    if (!(in >> v)) throw FormatError("malformed depth sidecar: " + path);
    if (key == "depth_min") info.depth_min = v, have_min = true;
    else if (key == "depth_max") info.depth_max = v, have_max = true;
    else if (key == "width") info.camera.width = static_cast<int>(v);
    else if (key == "height") info.camera.height = static_cast<int>(v);
    else if (key == "focal") info.camera.focal = v;
    else if (key == "distance") info.camera.distance = v;
    else throw FormatError("unknown key '" + key + "' in depth sidecar: " + path);
  }
  if (!have_min || !have_max || !(info.depth_max > info.depth_min)) throw FormatError("depth sidecar lacks a valid range");
  return info;
}

}  // namespace

DepthImage load_depth_pgm(const std::string& path, DepthFileInfo* info_out) {
  const auto info = read_sidecar(depth_sidecar_path(path));
  const auto bytes = io::read_file(path);
  // Header: magic, width, height, maxval separated by whitespace, then one whitespace byte.
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw FormatError("not a binary PGM: " + path);
  const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
  if (maxval != 65535) throw FormatError("depth PGM must be 16-bit");
  ++pos;
  if (bytes.size() - pos != std::size_t(w) * h * 2) throw FormatError("depth PGM payload size mismatch");
  DepthImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint16_t q = static_cast<std::uint16_t>(bytes[pos] << 8 | bytes[pos + 1]);
      pos += 2;
      if (q > 0) img.set(x, y, dequantize(q, info.depth_min, info.depth_max));
    }
  if (info_out) *info_out = info;
  return img;
}

}  // namespace hbeo
