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

#ifndef FLARE_ERRORS_H_
#define FLARE_ERRORS_H_

#include <stdexcept>
#include <string>

namespace flare {

// Bad input: malformed config, inconsistent shapes, unparseable files.
// The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what)
      : std::invalid_argument(what) {}
};

// A loss or parameter went non-finite. The CLI maps this to exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline void Require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace flare

#endif  // FLARE_ERRORS_H_
