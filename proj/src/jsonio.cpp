#include "evsync/jsonio.hpp"

#include <fstream>

#include "evsync/errors.hpp"

namespace evsync {

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open file: " + path);
  }
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw ValidationError("malformed JSON in " + path);
  }
  return j;
}

void save_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open file for writing: " + path);
  }
  out << j.dump(2) << '\n';
  if (!out) {
    throw IoError("failed to write " + path);
  }
}

nlohmann::json matrix_to_json(const Eigen::Matrix3d& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < 3; ++c) {
      row.push_back(m(r, c));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::Matrix3d matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError("matrix must be a 3x3 nested array");
  }
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    const auto& row = j.at(r);
    if (!row.is_array() || row.size() != 3) {
      throw ValidationError("matrix must be a 3x3 nested array");
    }
    for (int c = 0; c < 3; ++c) {
      if (!row.at(c).is_number()) {
        throw ValidationError("matrix entries must be numbers");
      }
      m(r, c) = row.at(c).get<double>();
    }
  }
  return m;
}

nlohmann::json vector_to_json(const Eigen::Vector3d& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

Eigen::Vector3d vector_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError("vector must be a length-3 array");
  }
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j.at(i).is_number()) {
      throw ValidationError("vector entries must be numbers");
    }
    v(i) = j.at(i).get<double>();
  }
  return v;
}

}  // namespace evsync
