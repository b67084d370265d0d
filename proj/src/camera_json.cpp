#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mpiv/camera_json.hpp"

namespace mpiv {

namespace {

using nlohmann::json;

json camera_to_value(const Camera& camera) {
  const auto& k = camera.intrinsics;
  const auto& p = camera.pose;
  json j;
  j["fx"] = k.fx;
  j["fy"] = k.fy;
  j["cx"] = k.cx;
  j["cy"] = k.cy;
  j["width"] = k.width;
  j["height"] = k.height;
  json r = json::array();
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) r.push_back(p.rotation(i, c));
  j["rotation"] = std::move(r);
  j["translation"] = {p.translation.x(), p.translation.y(), p.translation.z()};
  return j;
}

double number_field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigInvalid(std::string("camera JSON missing key: ") + key);
  if (!it->is_number()) throw ConfigInvalid(std::string("camera JSON key is not a number: ") + key);
  return it->get<double>();
}

int int_field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigInvalid(std::string("camera JSON missing key: ") + key);
  if (!it->is_number_integer())
    throw ConfigInvalid(std::string("camera JSON key is not an integer: ") + key);
  return it->get<int>();
}

std::vector<double> array_field(const json& j, const char* key, size_t n) {
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigInvalid(std::string("camera JSON missing key: ") + key);
  if (!it->is_array() || it->size() != n)
    throw ConfigInvalid(std::string("camera JSON key is not an array of ") + std::to_string(n) +
                        " numbers: " + key);
  std::vector<double> out;
  out.reserve(n);
  for (const auto& v : *it) {
    if (!v.is_number())
      throw ConfigInvalid(std::string("camera JSON array holds a non-number: ") + key);
    out.push_back(v.get<double>());
  }
  return out;
}

Camera camera_from_value(const json& j) {
  if (!j.is_object()) throw ConfigInvalid("camera JSON is not an object");
  static constexpr const char* kKeys[] = {"fx", "fy",     "cx",       "cy",
                                          "width", "height", "rotation", "translation"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const char* k : kKeys) known |= key == k;
    if (!known) throw ConfigInvalid("camera JSON has an unknown key: " + key);
  }

  Camera camera;
  camera.intrinsics.fx = number_field(j, "fx");
  camera.intrinsics.fy = number_field(j, "fy");
  camera.intrinsics.cx = number_field(j, "cx");
  camera.intrinsics.cy = number_field(j, "cy");
  camera.intrinsics.width = int_field(j, "width");
  camera.intrinsics.height = int_field(j, "height");
  const auto r = array_field(j, "rotation", 9);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) camera.pose.rotation(i, c) = r[i * 3 + c];
  const auto t = array_field(j, "translation", 3);
  camera.pose.translation = Vec3(t[0], t[1], t[2]);
  camera.validate();
  return camera;
}

json parse(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigInvalid("camera JSON does not parse");
  return j;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string camera_to_json(const Camera& camera) { return camera_to_value(camera).dump(2); }

Camera camera_from_json(const std::string& text) { return camera_from_value(parse(text)); }

void write_camera_json(const Camera& camera, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << camera_to_json(camera) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

Camera read_camera_json(const std::string& path) { return camera_from_json(slurp(path)); }

std::vector<Camera> read_camera_trajectory(const std::string& path) {
  const json j = parse(slurp(path));
  if (!j.is_array()) throw ConfigInvalid("camera trajectory JSON is not an array");
  std::vector<Camera> cameras;
  cameras.reserve(j.size());
  for (const auto& v : j) cameras.push_back(camera_from_value(v));
  return cameras;
}

}  // namespace mpiv
