#include "bevprompt/io.hpp"

#include <fstream>
#include <sstream>

namespace bevprompt {

using nlohmann::json;

namespace {

double number(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) throw DataError(std::string("missing numeric field '") + key + "'");
  return j.at(key).get<double>();
}

std::optional<double> optional_fraction(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  const double v = number(j, key);
  if (v < 0.0 || v > 1.0) throw DataError(std::string("field '") + key + "' outside [0, 1]");
  return v;
}

int frame_of(const json& j) {
  if (!j.contains("frame")) return 0;
  if (!j.at("frame").is_number_integer()) throw DataError("field 'frame' must be an integer");
  return j.at("frame").get<int>();
}

std::string label_of(const json& j) {
  if (!j.contains("label") || !j.at("label").is_string()) throw DataError("missing string field 'label'");
  return j.at("label").get<std::string>();
}

double score_of(const json& j) {
  const double s = j.contains("score") ? number(j, "score") : 1.0;
  if (s < 0.0 || s > 1.0) throw DataError("field 'score' outside [0, 1]");
  return s;
}

void put_tags(json& j, const std::optional<double>& occ, const std::optional<double>& trunc) {
  if (occ) j["occlusion"] = *occ;
  if (trunc) j["truncation"] = *trunc;
}

template <typename Parse>
auto read_lines(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<decltype(parse(json{}))> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_lines(const std::filesystem::path& path, const std::vector<T>& items) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const T& item : items) out << to_json(item).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

json to_json(const geom::CameraCalib& c) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) rot.push_back(c.rotation(r, k));
  return {{"fx", c.fx},
          {"fy", c.fy},
          {"cx", c.cx},
          {"cy", c.cy},
          {"rotation", rot},
          {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}},
          {"image_width", c.image_width},
          {"image_height", c.image_height}};
}

geom::CameraCalib calib_from_json(const json& j) {
  try {
    geom::CameraCalib c;
    c.fx = number(j, "fx");
    c.fy = number(j, "fy");
    c.cx = number(j, "cx");
    c.cy = number(j, "cy");
    const auto& rot = j.at("rotation");
    const auto& tr = j.at("translation");
    if (!rot.is_array() || rot.size() != 9) throw DataError("calibration: rotation must hold 9 numbers");
    if (!tr.is_array() || tr.size() != 3) throw DataError("calibration: translation must hold 3 numbers");
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) c.rotation(r, k) = rot.at(r * 3 + k).get<double>();
    for (int i = 0; i < 3; ++i) c.translation(i) = tr.at(i).get<double>();
    c.image_width = j.at("image_width").get<int>();
    c.image_height = j.at("image_height").get<int>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("calibration: ") + e.what());
  }
}

json to_json(const Object3D& o) {
  const auto& b = o.box;
  json j = {{"frame", o.frame}, {"x", b.x}, {"y", b.y},     {"z", b.z},         {"w", b.w},
            {"h", b.h},         {"l", b.l}, {"yaw", b.yaw}, {"label", b.label}, {"score", b.score}};
  put_tags(j, o.occlusion, o.truncation);
  return j;
}

Object3D object3d_from_json(const json& j) {
  Object3D o;
  o.frame = frame_of(j);
  auto& b = o.box;
  b.x = number(j, "x");
  b.y = number(j, "y");
  b.z = number(j, "z");
  b.w = number(j, "w");
  b.h = number(j, "h");
  b.l = number(j, "l");
  b.yaw = geom::normalize_angle(number(j, "yaw"));
  b.label = label_of(j);
  b.score = score_of(j);
  b.validate();
  o.occlusion = optional_fraction(j, "occlusion");
  o.truncation = optional_fraction(j, "truncation");
  return o;
}

json to_json(const Object2D& o) {
  const auto& b = o.box;
  json j = {{"frame", o.frame}, {"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max},
            {"y_max", b.y_max}, {"label", b.label}, {"score", b.score}};
  put_tags(j, o.occlusion, o.truncation);
  return j;
}

Object2D object2d_from_json(const json& j) {
  Object2D o;
  o.frame = frame_of(j);
  auto& b = o.box;
  if (j.contains("x_min")) {
    b.x_min = number(j, "x_min");
    b.y_min = number(j, "y_min");
    b.x_max = number(j, "x_max");
    b.y_max = number(j, "y_max");
  } else {
    // {x, y, width, height}: top-left corner plus size.
    b.x_min = number(j, "x");
    b.y_min = number(j, "y");
    b.x_max = b.x_min + number(j, "width");
    b.y_max = b.y_min + number(j, "height");
  }
  b.label = label_of(j);
  b.score = score_of(j);
  b.validate();
  o.occlusion = optional_fraction(j, "occlusion");
  o.truncation = optional_fraction(j, "truncation");
  return o;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Object3D> read_objects3d(const std::filesystem::path& path) {
  return read_lines(path, object3d_from_json);
}

std::vector<Object2D> read_objects2d(const std::filesystem::path& path) {
  return read_lines(path, object2d_from_json);
}

void write_objects3d(const std::filesystem::path& path, const std::vector<Object3D>& objects) {
  write_lines(path, objects);
}

void write_objects2d(const std::filesystem::path& path, const std::vector<Object2D>& objects) {
  write_lines(path, objects);
}

}  // namespace bevprompt
