#ifndef BEVPROMPT_GEOMETRY_HPP
#define BEVPROMPT_GEOMETRY_HPP

// Conventions used everywhere in this library:
//   world frame   z up, ground plane z = 0, yaw counterclockwise from +x
//   camera frame  x right, y down, z forward (optical axis)
//   cuboid frame  +x along the heading (length l), +y lateral (width w),
//                 +z up (height h); the cuboid center is (x, y, z)

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <tuple>
#include <vector>

#include "bevprompt/errors.hpp"
#include "bevprompt/rng.hpp"

namespace bevprompt::geom {

template <typename T>
using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;

/// Wrap an angle into (-pi, pi].
template <typename T>
T normalize_angle(T a) {
  const T two_pi = T(2) * std::numbers::pi_v<T>;
  T r = std::remainder(a, two_pi);
  if (r <= -std::numbers::pi_v<T>) r += two_pi;
  return r;
}

template <typename T>
struct Cuboid3 {
  T x{}, y{}, z{};
  T w{1}, h{1}, l{1};
  T yaw{};
  std::string label;
  T score{1};

  Vec3<T> center() const { return {x, y, z}; }

  void validate() const {
    if (!(w > 0 && h > 0 && l > 0)) throw DataError("cuboid: dimensions must be positive");
    if (!(yaw > -std::numbers::pi_v<T> && yaw <= std::numbers::pi_v<T>)) {
      throw DataError("cuboid: yaw outside (-pi, pi]");
    }
  }

  Cuboid3 with_yaw(T new_yaw) const {
    Cuboid3 c = *this;
    c.yaw = normalize_angle(new_yaw);
    return c;
  }
};

template <typename T>
struct PinholeCamera {
  T fx{}, fy{}, cx{}, cy{};
  Mat3<T> rotation = Mat3<T>::Identity();     // world -> camera
  Vec3<T> translation = Vec3<T>::Zero();      // world -> camera
  int image_width = 0;
  int image_height = 0;

  Vec3<T> to_camera(const Vec3<T>& p) const { return rotation * p + translation; }

  void validate() const {
    const T tol = T(1e-9);
    if ((rotation * rotation.transpose() - Mat3<T>::Identity()).cwiseAbs().maxCoeff() > tol ||
        std::abs(rotation.determinant() - T(1)) > tol) {
      throw DataError("calibration: rotation is not a proper orthonormal matrix");
    }
    if (!(fx > 0 && fy > 0)) throw DataError("calibration: focal lengths must be positive");
    if (!(cx > 0 && cx < image_width && cy > 0 && cy < image_height)) {
      throw DataError("calibration: principal point outside the image");
    }
  }
};

template <typename T>
struct Box2 {
  T x_min{}, y_min{}, x_max{}, y_max{};
  std::string label;
  T score{1};

  T width() const { return x_max - x_min; }
  T height() const { return y_max - y_min; }
  T area() const { return width() * height(); }
  Vec2<T> center() const { return {(x_min + x_max) / 2, (y_min + y_max) / 2}; }

  static Box2 from_center_size(T cx, T cy, T width, T height, std::string label = {}, T score = 1) {
    return {cx - width / 2, cy - height / 2, cx + width / 2, cy + height / 2, std::move(label), score};
  }

  void validate() const {
    if (!(x_min < x_max && y_min < y_max)) throw DataError("box2d: requires x_min < x_max and y_min < y_max");
  }

  bool inside(int image_width, int image_height) const {
    return x_min >= 0 && y_min >= 0 && x_max <= image_width && y_max <= image_height;
  }
};

/// Oriented rectangle on the BEV plane; `l` runs along the yaw direction.
template <typename T>
struct RotatedBox {
  T cx{}, cy{}, w{1}, l{1}, yaw{};

  T area() const { return w * l; }

  /// Counterclockwise: (+l,+w), (-l,+w), (-l,-w), (+l,-w) halves.
  std::array<Vec2<T>, 4> corners() const {
    const T c = std::cos(yaw), s = std::sin(yaw);
    const T hl = l / 2, hw = w / 2;
    const T local[4][2] = {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}};
    std::array<Vec2<T>, 4> out;
    for (int i = 0; i < 4; ++i) {
      out[i] = {cx + c * local[i][0] - s * local[i][1], cy + s * local[i][0] + c * local[i][1]};
    }
    return out;
  }
};

using Cuboid3D = Cuboid3<double>;
using CameraCalib = PinholeCamera<double>;
using Box2D = Box2<double>;
using RotatedBoxBEV = RotatedBox<double>;

template <typename T>
Mat3<T> rotation_z(T angle) {
  const T c = std::cos(angle), s = std::sin(angle);
  Mat3<T> r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

/// Eight world-frame corners. Bottom face first, counterclockwise seen from
/// above starting at (+l/2, +w/2); then the top face in the same order.
template <typename T>
std::array<Vec3<T>, 8> cuboid_corners(const Cuboid3<T>& c) {
  const Mat3<T> r = rotation_z(c.yaw);
  const T hl = c.l / 2, hw = c.w / 2, hh = c.h / 2;
  const T xs[4] = {hl, -hl, -hl, hl};
  const T ys[4] = {hw, hw, -hw, -hw};
  std::array<Vec3<T>, 8> out;
  for (int face = 0; face < 2; ++face) {
    const T zz = face == 0 ? -hh : hh;
    for (int i = 0; i < 4; ++i) out[face * 4 + i] = c.center() + r * Vec3<T>(xs[i], ys[i], zz);
  }
  return out;
}

template <typename T>
RotatedBox<T> bev_footprint(const Cuboid3<T>& c) {
  return {c.x, c.y, c.w, c.l, c.yaw};
}

template <typename T>
struct PixelDepth {
  Vec2<T> pixel;
  T depth;
};

inline constexpr double kMinDepth = 1e-6;

template <typename T>
PixelDepth<T> project_point(const PinholeCamera<T>& cam, const Vec3<T>& p) {
  const Vec3<T> pc = cam.to_camera(p);
  if (pc.z() <= T(kMinDepth)) throw BehindCameraError("project_point: point is behind the camera");
  return {{cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy}, pc.z()};
}

/// World point on the ray through `pixel` at camera depth `depth`.
template <typename T>
Vec3<T> back_project(const PinholeCamera<T>& cam, const Vec2<T>& pixel, T depth) {
  const Vec3<T> pc((pixel.x() - cam.cx) / cam.fx * depth, (pixel.y() - cam.cy) / cam.fy * depth, depth);
  return cam.rotation.transpose() * (pc - cam.translation);
}

template <typename T>
Box2<T> clip_to_image(Box2<T> b, int image_width, int image_height) {
  b.x_min = std::max(b.x_min, T(0));
  b.y_min = std::max(b.y_min, T(0));
  b.x_max = std::min(b.x_max, T(image_width));
  b.y_max = std::min(b.y_max, T(image_height));
  if (!(b.x_min < b.x_max && b.y_min < b.y_max)) throw OffImageError("projected box lies outside the image");
  return b;
}

/// Axis-aligned hull of the projected corners. Corners behind the camera are
/// dropped; with `clip` the hull is intersected with the image rectangle.
template <typename T>
Box2<T> project_cuboid(const PinholeCamera<T>& cam, const Cuboid3<T>& c, bool clip = true) {
  T x_min = std::numeric_limits<T>::infinity(), y_min = x_min;
  T x_max = -x_min, y_max = -x_min;
  int visible = 0;
  for (const Vec3<T>& corner : cuboid_corners(c)) {
    const Vec3<T> pc = cam.to_camera(corner);
    if (pc.z() <= T(kMinDepth)) continue;
    const T u = cam.fx * pc.x() / pc.z() + cam.cx;
    const T v = cam.fy * pc.y() / pc.z() + cam.cy;
    x_min = std::min(x_min, u);
    x_max = std::max(x_max, u);
    y_min = std::min(y_min, v);
    y_max = std::max(y_max, v);
    ++visible;
  }
  if (visible == 0) throw BehindCameraError("project_cuboid: all corners are behind the camera");
  Box2<T> box{x_min, y_min, x_max, y_max, c.label, c.score};
  if (clip) return clip_to_image(box, cam.image_width, cam.image_height);
  if (!(x_min < x_max && y_min < y_max)) throw OffImageError("project_cuboid: degenerate projection");
  return box;
}

template <typename T>
T intersection_area(const Box2<T>& a, const Box2<T>& b) {
  const T iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const T ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return (iw > 0 && ih > 0) ? iw * ih : T(0);
}

template <typename T>
T iou_aabb(const Box2<T>& a, const Box2<T>& b) {
  const T inter = intersection_area(a, b);
  if (inter <= 0) return T(0);
  const T uni = a.area() + b.area() - inter;
  return uni > 0 ? std::clamp(inter / uni, T(0), T(1)) : T(0);
}

/// Signed polygon area (positive for counterclockwise order).
template <typename T>
T shoelace_area(const std::vector<Vec2<T>>& poly) {
  T twice = 0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Vec2<T>& p = poly[i];
    const Vec2<T>& q = poly[(i + 1) % n];
    twice += p.x() * q.y() - q.x() * p.y();
  }
  return twice / 2;
}

/// Sutherland-Hodgman: clip `subject` by the convex counterclockwise `clip`.
template <typename T>
std::vector<Vec2<T>> clip_convex(std::vector<Vec2<T>> subject, const std::array<Vec2<T>, 4>& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2<T> a = clip[e];
    const Vec2<T> b = clip[(e + 1) % clip.size()];
    const Vec2<T> edge = b - a;
    auto side = [&](const Vec2<T>& p) { return edge.x() * (p.y() - a.y()) - edge.y() * (p.x() - a.x()); };
    std::vector<Vec2<T>> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0, n = subject.size(); i < n; ++i) {
      const Vec2<T>& cur = subject[i];
      const Vec2<T>& nxt = subject[(i + 1) % n];
      const T sc = side(cur), sn = side(nxt);
      if (sc >= 0) out.push_back(cur);
      if ((sc >= 0) != (sn >= 0)) {
        const T t = sc / (sc - sn);
        out.push_back(cur + t * (nxt - cur));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline constexpr double kMinIntersectionArea = 1e-12;

/// Overlap area of two oriented rectangles; below kMinIntersectionArea it is
/// reported as 0. The arguments are put in a canonical order first, so the
/// result is symmetric bit for bit.
template <typename T>
T intersection_area_rotated(const RotatedBox<T>& a, const RotatedBox<T>& b) {
  const auto key = [](const RotatedBox<T>& r) { return std::tie(r.cx, r.cy, r.w, r.l, r.yaw); };
  const RotatedBox<T>& p = key(b) < key(a) ? b : a;
  const RotatedBox<T>& q = key(b) < key(a) ? a : b;
  const auto pc = p.corners();
  const auto poly = clip_convex(std::vector<Vec2<T>>(pc.begin(), pc.end()), q.corners());
  if (poly.size() < 3) return T(0);
  const T inter = std::abs(shoelace_area(poly));
  return inter < T(kMinIntersectionArea) ? T(0) : inter;
}

/// BEV IoU of two oriented rectangles, symmetric bit for bit.
template <typename T>
T iou_rotated(const RotatedBox<T>& a, const RotatedBox<T>& b) {
  const T inter = intersection_area_rotated(a, b);
  if (inter <= 0) return T(0);
  const T uni = a.area() + b.area() - inter;
  return uni > 0 ? std::clamp(inter / uni, T(0), T(1)) : T(0);
}

/// Rotate the camera about its own center by random pitch (about the camera
/// x axis) and roll (about the optical axis), each uniform in +-magnitude.
/// Intrinsics and the camera position in the world stay fixed.
template <typename T>
PinholeCamera<T> perturb_calib(const PinholeCamera<T>& cam, T pitch_noise, T roll_noise, std::uint64_t seed) {
  if (pitch_noise < 0 || roll_noise < 0) throw ConfigError("perturb_calib: noise magnitudes must be >= 0");
  if (pitch_noise == 0 && roll_noise == 0) return cam;
  Rng rng(derive_seed(seed, 0xca11b));
  const T pitch = pitch_noise * T(rng.uniform(-1.0, 1.0));
  const T roll = roll_noise * T(rng.uniform(-1.0, 1.0));
  Mat3<T> rp;
  rp << 1, 0, 0, 0, std::cos(pitch), -std::sin(pitch), 0, std::sin(pitch), std::cos(pitch);
  const Mat3<T> delta = rotation_z(roll) * rp;
  PinholeCamera<T> out = cam;
  out.rotation = delta * cam.rotation;
  out.translation = delta * cam.translation;
  return out;
}

}  // namespace bevprompt::geom

#endif  // BEVPROMPT_GEOMETRY_HPP
