#include "lesion/fixture.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include "lesion/error.hpp"

namespace lesion {

namespace io {

namespace {

template <typename T>
void write_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), bytes.size());
  if (!out) fail(ErrorKind::IoError, "write failed");
}

template <typename T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes;
  in.read(bytes.data(), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) fail(ErrorKind::TruncatedPayload, "unexpected end of stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
void write_f64(std::ostream& out, double v) { write_le(out, v); }
double read_f64(std::istream& in) { return read_le<double>(in); }

void expect_magic(std::istream& in, const char (&magic)[5]) {
  char got[4] = {};
  in.read(got, 4);
  if (in.gcount() != 4 || std::memcmp(got, magic, 4) != 0) {
    fail(ErrorKind::MalformedHeader, std::string("expected magic ") + magic);
  }
}

}  // namespace io

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write("ATNT", 4);
  io::write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) io::write_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) io::write_f64(out, v);
}

Tensor read_tensor(std::istream& in) {
  io::expect_magic(in, "ATNT");
  const std::uint32_t rank = io::read_u32(in);
  if (rank == 0 || rank > 8) fail(ErrorKind::MalformedHeader, "tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = io::read_u32(in);
    if (d == 0) fail(ErrorKind::MalformedHeader, "zero dimension in tensor fixture");
  }
  std::vector<double> data(numel(shape));
  for (double& v : data) v = io::read_f64(in);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot open " + path.string());
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::FileNotFound, path.string());
  return read_tensor(in);
}

}  // namespace lesion
