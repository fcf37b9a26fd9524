#ifndef BEVPROMPT_IO_HPP
#define BEVPROMPT_IO_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bevprompt/geometry.hpp"

namespace bevprompt {

/// A 3D ground-truth annotation or detection within a frame.
struct Object3D {
  int frame = 0;
  geom::Cuboid3D box;
  std::optional<double> occlusion;   // [0, 1]
  std::optional<double> truncation;  // [0, 1]
};

/// A 2D annotation or detection within a frame.
struct Object2D {
  int frame = 0;
  geom::Box2D box;
  std::optional<double> occlusion;
  std::optional<double> truncation;
};

nlohmann::json to_json(const geom::CameraCalib& calib);
geom::CameraCalib calib_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Object3D& o);
Object3D object3d_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Object2D& o);
Object2D object2d_from_json(const nlohmann::json& j);

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

std::vector<Object3D> read_objects3d(const std::filesystem::path& path);
std::vector<Object2D> read_objects2d(const std::filesystem::path& path);
void write_objects3d(const std::filesystem::path& path, const std::vector<Object3D>& objects);
void write_objects2d(const std::filesystem::path& path, const std::vector<Object2D>& objects);

}  // namespace bevprompt

#endif  // BEVPROMPT_IO_HPP
