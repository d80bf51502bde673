#include "visage/tensor.hpp"

#include <cstring>
#include <fstream>

#include "visage/errors.hpp"

namespace visage {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int d : shape_)
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape_));
  data_.assign(numel(shape_), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (int d : shape_)
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape_));
  if (data_.size() != numel(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = value;
  return t;
}

Tensor Tensor::of(Shape shape, std::initializer_list<float> values) {
  return Tensor(std::move(shape), std::vector<float>(values));
}

bool Tensor::all_finite() const {
  for (float x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("unexpected end of .ten file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_ten(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  const char magic[8] = {'T', 'E', 'N', '0', 0, 0, 0, 0};
  os.write(magic, 8);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &t.data()[i], 4);
    put_u32(os, bits);
  }
  if (!os) throw IoError("write failed for '" + path + "'");
}

Tensor read_ten(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  const char expect[8] = {'T', 'E', 'N', '0', 0, 0, 0, 0};
  if (!is || std::memcmp(magic, expect, 8) != 0)
    throw IoError("bad .ten magic in '" + path + "'");
  const std::uint32_t rank = get_u32(is);
  if (rank > 8) throw IoError("implausible .ten rank in '" + path + "'");
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<int>(get_u32(is));
  std::vector<float> data(numel(shape));
  for (auto& x : data) {
    const std::uint32_t bits = get_u32(is);
    std::memcpy(&x, &bits, 4);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace visage
