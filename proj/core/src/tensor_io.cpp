#include "cmx/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cmx {

namespace {

constexpr char k_magic[4] = {'C', 'M', 'X', 'T'};
constexpr std::uint8_t k_version = 1;

void put_u32_le(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                       static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    os.write(b, 4);
}

std::uint32_t get_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_cmxt(std::ostream& os, const Tensor& t) {
    os.write(k_magic, 4);
    os.put(static_cast<char>(k_version));
    os.put(static_cast<char>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i) put_u32_le(os, t.extent(i));
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint32_t bits;
        static_assert(sizeof(float) == sizeof(std::uint32_t));
        std::memcpy(&bits, &t[i], 4);
        put_u32_le(os, bits);
    }
    if (!os) throw IoError("CMXT write failed");
}

Tensor read_cmxt(std::istream& is, const std::string& origin) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, k_magic, 4) != 0) {
        throw IoError(origin + ": not a CMXT file (bad magic)");
    }
    const int version = is.get();
    if (version != k_version) {
        throw IoError(origin + ": unsupported CMXT version " + std::to_string(version));
    }
    const int rank = is.get();
    if (rank < 1 || rank > 4) {
        throw IoError(origin + ": CMXT rank " + std::to_string(rank) + " out of range 1-4");
    }
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& e : shape) e = get_u32_le(is);
    if (!is) throw IoError(origin + ": truncated CMXT header");
    const std::size_t n = shape_numel(shape);
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t bits = get_u32_le(is);
        std::memcpy(&data[i], &bits, 4);
    }
    if (!is) throw IoError(origin + ": truncated CMXT payload");
    return Tensor(std::move(shape), std::move(data));
}

void write_cmxt_file(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_cmxt(os, t);
}

Tensor read_cmxt_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return read_cmxt(is, path);
}

std::uint64_t cmxt_checksum(const Tensor& t) {
    std::ostringstream os(std::ios::binary);
    write_cmxt(os, t);
    const std::string bytes = os.str();
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace cmx
