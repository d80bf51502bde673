#ifndef VISAGE_TENSOR_HPP
#define VISAGE_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace visage {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);  // e.g. "[2x3]"

/// Rounding rule used throughout: half away from zero.
inline std::int64_t round_half_away(double x) { return std::llround(x); }

/// Dense row-major array of 32-bit floats with shape metadata.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float value);
  static Tensor of(Shape shape, std::initializer_list<float> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  /// Same data, new shape; element counts must match.
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Raw tensor fixture format ".ten": 8-byte magic field ("TEN0" padded with
// zeros), u32 LE rank, rank x u32 LE dims, then f32 LE values.
void write_ten(const std::string& path, const Tensor& t);
Tensor read_ten(const std::string& path);

}  // namespace visage

#endif
