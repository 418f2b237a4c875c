#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "lesion/tensor.hpp"

namespace lesion {

// Binary tensor fixture: magic "ATNT", u32 rank, u32 dims[rank], then the
// float64 payload in row-major order. Everything little-endian.

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace io {

void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);
void write_f64(std::ostream& out, double v);
double read_f64(std::istream& in);
void expect_magic(std::istream& in, const char (&magic)[5]);

}  // namespace io

}  // namespace lesion
