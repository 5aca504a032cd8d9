#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace ligr {

// Arithmetic precision of a computation. Values are always stored as
// doubles; in F32 mode every operation loads, computes, and rounds
// through IEEE single precision, so results are bit-equal to a native
// float32 engine while the storage type stays uniform.
enum class Precision { F32, F64 };

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor. Rank 0 is represented as shape {} with one
// element (a scalar).
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> values);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double value);
  static Tensor scalar(double value);
  // 1-D from values
  static Tensor vec(std::vector<double> values);
  // 2-D from nested initializer list, row major
  static Tensor mat(std::initializer_list<std::initializer_list<double>> rows);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  bool is_scalar() const { return numel() == 1; }

  int64_t rows() const;
  int64_t cols() const;

  double& at(int64_t r, int64_t c);
  double at(int64_t r, int64_t c) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
};

// Boolean attention-permission matrix. allow[i*cols + j] != 0 means
// position i may attend to position j.
struct BoolMask {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<uint8_t> allow;

  BoolMask() = default;
  BoolMask(int64_t r, int64_t c) : rows(r), cols(c), allow(r * c, 0) {}

  bool at(int64_t i, int64_t j) const { return allow[i * cols + j] != 0; }
  void set(int64_t i, int64_t j, bool v) { allow[i * cols + j] = v ? 1 : 0; }
};

}  // namespace ligr
