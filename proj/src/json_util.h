/*
 * Copyright 2026 The Flare Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FLARE_SRC_JSON_UTIL_H_
#define FLARE_SRC_JSON_UTIL_H_

#include <nlohmann/json.hpp>

#include "flare/errors.h"
#include "flare/netkernel.h"

namespace flare::json_util {

inline nlohmann::json VectorToJson(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Vector VectorFromJson(const nlohmann::json& in) {
  Require(in.is_array(), "expected a numeric array");
  Vector v(static_cast<Eigen::Index>(in.size()));
  for (std::size_t i = 0; i < in.size(); ++i) v(static_cast<Eigen::Index>(i)) = in[i].get<double>();
  return v;
}

inline nlohmann::json MatrixToJson(const Matrix& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

// `cols` is used when the array is empty.
inline Matrix MatrixFromJson(const nlohmann::json& in, Eigen::Index cols = 0) {
  Require(in.is_array(), "expected an array of rows");
  if (in.empty()) return Matrix(0, cols);
  const Eigen::Index n_cols = static_cast<Eigen::Index>(in[0].size());
  Matrix m(static_cast<Eigen::Index>(in.size()), n_cols);
  for (std::size_t r = 0; r < in.size(); ++r) {
    Require(in[r].is_array() && static_cast<Eigen::Index>(in[r].size()) == n_cols,
            "ragged matrix row");
    for (Eigen::Index c = 0; c < n_cols; ++c) {
      m(static_cast<Eigen::Index>(r), c) = in[r][static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

}  // namespace flare::json_util

#endif  // FLARE_SRC_JSON_UTIL_H_
