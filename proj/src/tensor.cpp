#include "cmasge/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

namespace cmasge {

std::string shape_str(Index rows, Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

void log_warning(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

namespace {

std::uint64_t product(const std::vector<std::uint64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1},
                         [](std::uint64_t a, std::uint64_t b) { return a * b; });
}

template <typename T>
void put_le(std::ostream& os, T value) {
  using U = std::make_unsigned_t<T>;
  auto bits = static_cast<U>(value);
  char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  }
  os.write(buf, sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  using U = std::make_unsigned_t<T>;
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw ValidationError("tensor stream truncated");
  }
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
  return static_cast<T>(bits);
}

void put_f64(std::ostream& os, double v) { put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }

constexpr char kArchiveMagic[4] = {'C', 'M', 'C', 'K'};
constexpr std::uint16_t kArchiveVersion = 1;

}  // namespace

Tensor::Tensor(std::vector<std::uint64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw ContractError("tensor shape/data size mismatch");
  }
  for (double v : data_) {
    if (!std::isfinite(v)) throw ContractError("tensor contains non-finite values");
  }
}

Tensor::Tensor(std::vector<std::uint64_t> shape)
    : shape_(std::move(shape)), data_(product(shape_), 0.0) {}

std::uint64_t Tensor::extent(std::size_t axis) const {
  require(axis < shape_.size(), "tensor axis out of range");
  return shape_[axis];
}

Matrix Tensor::matrix(std::size_t leading_axes) const {
  require(leading_axes <= shape_.size(), "tensor has fewer axes than requested");
  std::uint64_t rows = 1;
  for (std::size_t i = 0; i < leading_axes; ++i) rows *= shape_[i];
  const std::uint64_t cols = rows == 0 ? 0 : data_.size() / std::max<std::uint64_t>(rows, 1);
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  std::copy(data_.begin(), data_.end(), m.data());
  return m;
}

Tensor Tensor::reshaped(std::vector<std::uint64_t> shape) const {
  return Tensor(std::move(shape), data_);
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 4);
  put_le<std::uint16_t>(os, kTensorVersion);
  put_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
  for (double v : t.data()) put_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw ValidationError("bad tensor magic (expected CMAT)");
  }
  const auto version = get_le<std::uint16_t>(is);
  if (version != kTensorVersion) {
    throw ValidationError("unsupported tensor version " + std::to_string(version));
  }
  const auto rank = get_le<std::uint16_t>(is);
  std::vector<std::uint64_t> shape(rank);
  for (auto& e : shape) e = get_le<std::uint64_t>(is);
  std::vector<double> data(product(shape));
  for (auto& v : data) v = get_f64(is);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot write " + path.string());
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open tensor file " + path.string());
  return read_tensor(is);
}

void save_tensor_csv(const std::filesystem::path& path, const Tensor& t,
                     const std::vector<std::string>& header) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot write " + path.string());
  if (!header.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
  }
  const Matrix m = t.rank() == 0 ? Matrix() : t.matrix(1);
  os << std::setprecision(17);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) os << (c ? "," : "") << m(r, c);
    os << '\n';
  }
}

Matrix load_matrix_csv(const std::filesystem::path& path, bool has_header) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  if (has_header) std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ValidationError("non-numeric CSV cell '" + cell + "' in " + path.string());
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ValidationError("ragged CSV rows in " + path.string());
    }
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

void TensorArchive::put(const std::string& name, Tensor t) { entries_[name] = std::move(t); }

bool TensorArchive::contains(const std::string& name) const { return entries_.count(name) > 0; }

const Tensor& TensorArchive::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("archive has no tensor named '" + name + "'");
  return it->second;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot write " + path.string());
  os.write(kArchiveMagic, 4);
  put_le<std::uint16_t>(os, kArchiveVersion);
  put_le<std::uint64_t>(os, tag);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open archive " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kArchiveMagic, 4) != 0) {
    throw ValidationError("bad archive magic in " + path.string());
  }
  if (get_le<std::uint16_t>(is) != kArchiveVersion) {
    throw ValidationError("unsupported archive version in " + path.string());
  }
  TensorArchive ar;
  ar.tag = get_le<std::uint64_t>(is);
  const auto count = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw ValidationError("archive truncated");
    ar.put(name, read_tensor(is));
  }
  return ar;
}

}  // namespace cmasge
