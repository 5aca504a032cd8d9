#include "ligr/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ligr {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                " does not match " + std::to_string(data.size()) +
                                " values");
  }
}

Tensor Tensor::zeros(Shape s) {
  int64_t n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape s, double value) {
  int64_t n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vec(std::vector<double> values) {
  int64_t n = static_cast<int64_t>(values.size());
  return Tensor({n}, std::move(values));
}

Tensor Tensor::mat(std::initializer_list<std::initializer_list<double>> rows_init) {
  int64_t r = static_cast<int64_t>(rows_init.size());
  int64_t c = r > 0 ? static_cast<int64_t>(rows_init.begin()->size()) : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows_init) {
    if (static_cast<int64_t>(row.size()) != c) {
      throw std::invalid_argument("tensor: ragged rows in matrix literal");
    }
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

int64_t Tensor::rows() const {
  if (shape.size() != 2) throw std::invalid_argument("tensor: rows() on non-matrix " + shape_str(shape));
  return shape[0];
}

int64_t Tensor::cols() const {
  if (shape.size() != 2) throw std::invalid_argument("tensor: cols() on non-matrix " + shape_str(shape));
  return shape[1];
}

double& Tensor::at(int64_t r, int64_t c) { return data[r * cols() + c]; }
double Tensor::at(int64_t r, int64_t c) const { return data[r * cols() + c]; }

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace ligr
