#pragma once

#include <stdexcept>
#include <string>

namespace denpg {

struct InvalidTopology : std::runtime_error {
  explicit InvalidTopology(const std::string& what) : std::runtime_error("InvalidTopology: " + what) {}
};

struct DisconnectedGraph : std::runtime_error {
  explicit DisconnectedGraph(const std::string& what) : std::runtime_error("DisconnectedGraph: " + what) {}
};

struct NotDoublyStochastic : std::runtime_error {
  explicit NotDoublyStochastic(const std::string& what) : std::runtime_error("NotDoublyStochastic: " + what) {}
};

struct DimensionMismatch : std::runtime_error {
  explicit DimensionMismatch(const std::string& what) : std::runtime_error("DimensionMismatch: " + what) {}
};

struct TooLarge : std::runtime_error {
  explicit TooLarge(const std::string& what) : std::runtime_error("TooLarge: " + what) {}
};

struct SolveFailure : std::runtime_error {
  explicit SolveFailure(const std::string& what) : std::runtime_error("SolveFailure: " + what) {}
};

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error("ParseError: " + what) {}
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error("ValidationError: " + what) {}
};

struct SpaceMismatch : std::runtime_error {
  explicit SpaceMismatch(const std::string& what) : std::runtime_error("SpaceMismatch: " + what) {}
};

}  // namespace denpg
