#include "keymark/geometry/camera.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace keymark::geometry {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidCamera("focal lengths must be positive");
  const Eigen::Matrix3d r = extrinsic.linear();
  const double orth = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (orth > 1e-9 || std::abs(r.determinant() - 1.0) > 1e-9) {
    throw InvalidCamera("extrinsic rotation is not orthonormal with determinant +1");
  }
}

Point3 deproject(PixelF pixel, double depth, const CameraModel& cam, Frame frame) {
  if (!(depth > 0.0) || !std::isfinite(depth)) {
    throw InvalidDepth("cannot deproject with depth " + std::to_string(depth));
  }
  const Point3 p((pixel.u - cam.cx) * depth / cam.fx, (pixel.v - cam.cy) * depth / cam.fy, depth);
  return frame == Frame::camera ? p : Point3(cam.extrinsic * p);
}

PixelF project(const Point3& point, const CameraModel& cam, Frame frame) {
  const Point3 p = frame == Frame::camera ? point : Point3(cam.extrinsic.inverse() * point);
  if (!(p.z() > 0.0)) throw BehindCamera("point has non-positive camera-frame depth");
  return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

Point3 deproject_at_height(PixelF pixel, double height, const CameraModel& cam) {
  const Eigen::Vector3d ray_cam((pixel.u - cam.cx) / cam.fx, (pixel.v - cam.cy) / cam.fy, 1.0);
  const Eigen::Vector3d origin = cam.extrinsic.translation();
  const Eigen::Vector3d ray = cam.extrinsic.linear() * ray_cam;
  if (std::abs(ray.z()) < 1e-12) throw InvalidDepth("viewing ray is parallel to the height plane");
  const double t = (height - origin.z()) / ray.z();
  if (!(t > 0.0)) throw BehindCamera("height plane lies behind the camera along this ray");
  return origin + t * ray;
}

double depth_at(const DepthImage& depth, Pixel pixel) {
  if (!depth.contains(pixel)) throw InvalidDepth("pixel outside the depth image");
  if (depth.valid(pixel.u, pixel.v)) return depth.at(pixel);

  std::vector<double> window;
  for (int dv = -2; dv <= 2; ++dv) {
    for (int du = -2; du <= 2; ++du) {
      const int u = pixel.u + du;
      const int v = pixel.v + dv;
      if (depth.contains(u, v) && depth.valid(u, v)) window.push_back(depth.at(u, v));
    }
  }
  if (window.empty()) throw InvalidDepth("no valid depth in the 5x5 window around the pixel");
  std::sort(window.begin(), window.end());
  const std::size_t n = window.size();
  return n % 2 ? window[n / 2] : 0.5 * (window[n / 2 - 1] + window[n / 2]);
}

void to_json(nlohmann::json& j, const CameraModel& cam) {
  std::vector<double> m(16);
  const Eigen::Matrix4d t = cam.extrinsic.matrix();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) m[r * 4 + c] = t(r, c);
  }
  j = nlohmann::json{{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy}, {"extrinsic", m}};
}

void from_json(const nlohmann::json& j, CameraModel& cam) {
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.extrinsic = Eigen::Isometry3d::Identity();
  if (j.contains("extrinsic")) {
    const auto m = j.at("extrinsic").get<std::vector<double>>();
    if (m.size() != 16) throw InvalidCamera("extrinsic must hold 16 row-major values");
    Eigen::Matrix4d t;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) t(r, c) = m[r * 4 + c];
    }
    cam.extrinsic.linear() = t.block<3, 3>(0, 0);
    cam.extrinsic.translation() = t.block<3, 1>(0, 3);
  }
  cam.validate();
}

}  // namespace keymark::geometry
