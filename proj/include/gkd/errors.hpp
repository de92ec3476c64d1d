// Copyright (c) 2026 The GKD Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace gkd {

// Every failure raised by the library derives from Error. The C API maps each
// subclass onto a distinct status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range arguments, malformed configs, bad labels.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered in a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar loss, labeled data in a task-agnostic stage, frozen
// parameters that moved.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Output already present and overwrite was not requested.
class ExistsError : public Error {
 public:
  using Error::Error;
};

// A required input (manifest, corpus, teacher checkpoint) is missing.
class MissingInputError : public Error {
 public:
  using Error::Error;
};

// Training diverged or a metric is undefined.
class RunError : public Error {
 public:
  using Error::Error;
};

}  // namespace gkd
