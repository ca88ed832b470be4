#include "modelspace/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "modelspace/error.hpp"

namespace modelspace {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorKind::UnsupportedChannels: return "UnsupportedChannels";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::DecodeError: return "DecodeError";
    case ErrorKind::EmptyProbe: return "EmptyProbe";
    case ErrorKind::BadSampleSize: return "BadSampleSize";
    case ErrorKind::UnitOutOfRange: return "UnitOutOfRange";
    case ErrorKind::ExactModeTooLarge: return "ExactModeTooLarge";
    case ErrorKind::ProbeMismatch: return "ProbeMismatch";
    case ErrorKind::MethodMismatch: return "MethodMismatch";
    case ErrorKind::UnknownModel: return "UnknownModel";
    case ErrorKind::DegenerateSubspace: return "DegenerateSubspace";
    case ErrorKind::BadK: return "BadK";
    case ErrorKind::EmptyRelevant: return "EmptyRelevant";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::IncompleteTable: return "IncompleteTable";
    case ErrorKind::IdMismatch: return "IdMismatch";
    case ErrorKind::TooFewModels: return "TooFewModels";
  }
  return "Unknown";
}

std::size_t num_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_extents(const Shape& shape) {
  if (shape.empty()) fail(ErrorKind::ShapeMismatch, "tensor shape must have rank >= 1");
  for (auto e : shape) {
    if (e == 0) fail(ErrorKind::ShapeMismatch, "zero extent in shape " + shape_str(shape));
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(num_elements(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != num_elements(shape_)) {
    fail(ErrorKind::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                       " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (num_elements(shape) != data_.size()) {
    fail(ErrorKind::ShapeMismatch,
         "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const Tensor& t, const std::string& where) {
  if (!t.all_finite()) fail(ErrorKind::NonFiniteValue, "non-finite value in " + where);
}

}  // namespace modelspace
