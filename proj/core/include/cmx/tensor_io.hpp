#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "cmx/tensor.hpp"

namespace cmx {

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// CMXT v1 container: magic "CMXT", version byte 1, rank byte (1-4),
/// rank little-endian u32 extents, then row-major f32 little-endian values.
void write_cmxt(std::ostream& os, const Tensor& t);
Tensor read_cmxt(std::istream& is, const std::string& origin = "<stream>");

void write_cmxt_file(const std::string& path, const Tensor& t);
Tensor read_cmxt_file(const std::string& path);

/// FNV-1a 64-bit over the serialized bytes; used for CLI output checksums.
std::uint64_t cmxt_checksum(const Tensor& t);

}  // namespace cmx
