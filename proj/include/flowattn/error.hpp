// Copyright 2026 The flowattn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLOWATTN_ERROR_HPP_
#define FLOWATTN_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace flowattn {

// Root of every error the library raises. The CLI maps the subclasses onto
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or extents that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Values outside the mathematical domain (negative flow capacity, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or insufficient input data (token ids, corpora, files).
class DataError : public Error {
 public:
  using Error::Error;
};

// A configured resource cap would be exceeded.
class ResourceError : public Error {
 public:
  using Error::Error;
};

// The operation is not defined for the selected mechanism.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// Numerical failure detected inside a kernel (NaN/Inf from finite input).
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowattn

#endif  // FLOWATTN_ERROR_HPP_
