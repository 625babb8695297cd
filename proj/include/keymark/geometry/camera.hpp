#pragma once

#include <Eigen/Geometry>
#include <json.hpp>

#include "keymark/geometry/image.hpp"

namespace keymark::geometry {

using Point3 = Eigen::Vector3d;

enum class Frame { camera, world };

// Pinhole intrinsics plus the rigid camera-to-world extrinsic.
struct CameraModel {
  double fx{1.0};
  double fy{1.0};
  double cx{0.0};
  double cy{0.0};
  Eigen::Isometry3d extrinsic{Eigen::Isometry3d::Identity()};

  // Throws InvalidCamera on non-positive focal lengths or a non-rotation extrinsic.
  void validate() const;
};

// Pinhole back-projection: x=(u-cx)d/fx, y=(v-cy)d/fy, z=d in the camera frame.
Point3 deproject(PixelF pixel, double depth, const CameraModel& cam, Frame frame = Frame::camera);

// u = fx x/z + cx, v = fy y/z + cy. The point is interpreted in `frame`.
PixelF project(const Point3& point, const CameraModel& cam, Frame frame = Frame::camera);

// World point where the pixel's viewing ray crosses the horizontal plane z = height.
Point3 deproject_at_height(PixelF pixel, double height, const CameraModel& cam);

// Depth at a pixel; when the reading is invalid the median of the valid depths
// in the surrounding 5x5 window is used. InvalidDepth when none are valid.
double depth_at(const DepthImage& depth, Pixel pixel);

void to_json(nlohmann::json& j, const CameraModel& cam);
void from_json(const nlohmann::json& j, CameraModel& cam);

}  // namespace keymark::geometry
