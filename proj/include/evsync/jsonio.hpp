#pragma once

#include <Eigen/Core>
#include <json.hpp>
#include <string>

namespace evsync {

// IoError when unreadable, ValidationError when the content is not JSON.
nlohmann::json load_json_file(const std::string& path);
void save_json_file(const nlohmann::json& j, const std::string& path);

// 3x3 matrices serialize as row-major nested arrays, vectors as flat arrays.
nlohmann::json matrix_to_json(const Eigen::Matrix3d& m);
Eigen::Matrix3d matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Eigen::Vector3d& v);
Eigen::Vector3d vector_from_json(const nlohmann::json& j);

}  // namespace evsync
