/*
 * Copyright 2026 The fedmvc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedmvc {

// Base of every error raised by the library. Callers that only need to
// report a failure can catch this; tests catch the concrete subclasses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A documented precondition (shapes, ranges, ordering of ids) was broken.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class SingularSystem : public Error {
 public:
  SingularSystem(std::size_t rank, std::size_t dim)
      : Error("singular normal equations: rank " + std::to_string(rank) +
              " of " + std::to_string(dim)),
        rank_(rank),
        dim_(dim) {}
  std::size_t rank() const noexcept { return rank_; }
  std::size_t dim() const noexcept { return dim_; }

 private:
  std::size_t rank_;
  std::size_t dim_;
};

class DegenerateRow : public Error {
 public:
  explicit DegenerateRow(std::size_t row)
      : Error("row " + std::to_string(row) + " has zero or negative mass"),
        row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class Divergence : public Error {
 public:
  Divergence(const std::string& what, long step)
      : Error(what + (step >= 0 ? " at step " + std::to_string(step) : "")),
        step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class InsufficientPoints : public Error {
 public:
  using Error::Error;
};

class AlignmentImpossible : public Error {
 public:
  using Error::Error;
};

class IndicatorViolation : public Error {
 public:
  using Error::Error;
};

// No complete (all-view) sample exists, so global prototypes are undefined.
class NoOverlap : public Error {
 public:
  using Error::Error;
};

class MissingSample : public Error {
 public:
  using Error::Error;
};

// A pipeline stage ran before the stage it depends on.
class OrderingError : public Error {
 public:
  using Error::Error;
};

class DeserializeError : public Error {
 public:
  DeserializeError(const std::string& what, std::size_t offset)
      : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Structurally valid input that violates the dataset schema. A ParseError so
// callers reading files can handle both alike.
class SchemaError : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace fedmvc
