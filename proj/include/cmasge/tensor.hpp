#pragma once

#include "cmasge/common.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace cmasge {

/// Dense row-major array of doubles with an explicit shape.
///
/// This is the storage and interchange type; computation happens on
/// `Matrix` views obtained through `matrix()`. Values must be finite.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::uint64_t> shape, std::vector<double> data);
  explicit Tensor(std::vector<std::uint64_t> shape);  // zero-filled

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    const Matrix rm = m;
    std::vector<double> data(rm.data(), rm.data() + rm.size());
    return Tensor({static_cast<std::uint64_t>(rm.rows()), static_cast<std::uint64_t>(rm.cols())},
                  std::move(data));
  }

  const std::vector<std::uint64_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }
  std::uint64_t extent(std::size_t axis) const;

  // Rows = product of the first `leading_axes` extents, cols = the rest.
  Matrix matrix(std::size_t leading_axes = 1) const;

  Tensor reshaped(std::vector<std::uint64_t> shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::uint64_t> shape_;
  std::vector<double> data_;
};

// Binary container: "CMAT", u16 version, u16 rank, u64 extents, f64 payload (all little-endian).
inline constexpr char kTensorMagic[4] = {'C', 'M', 'A', 'T'};
inline constexpr std::uint16_t kTensorVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// One CSV row per leading index; `header` (if non-empty) becomes the first line.
void save_tensor_csv(const std::filesystem::path& path, const Tensor& t,
                     const std::vector<std::string>& header = {});
Matrix load_matrix_csv(const std::filesystem::path& path, bool has_header);

/// Named tensors plus a 64-bit tag, stored as "CMCK", u16 version, u64 tag,
/// u32 count, then per entry: u32 name length, name bytes, one CMAT record.
class TensorArchive {
 public:
  void put(const std::string& name, Tensor t);
  template <typename Derived>
  void put_matrix(const std::string& name, const Eigen::MatrixBase<Derived>& m) {
    put(name, Tensor::from_matrix(m));
  }
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Matrix matrix(const std::string& name) const { return get(name).matrix(); }
  const std::map<std::string, Tensor>& entries() const { return entries_; }

  std::uint64_t tag = 0;

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> entries_;
};

}  // namespace cmasge
