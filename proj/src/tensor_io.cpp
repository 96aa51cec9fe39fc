#include "nndm/tensor_io.hpp"

#include "nndm/errors.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace nndm {

namespace {

constexpr std::array<char, 6> kMagic = {'N', 'N', 'D', 'M', 'T', '\0'};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) {
        out.push_back(static_cast<char>((v >> s) & 0xFF));
    }
}

std::uint16_t get_u16(std::string_view in, std::size_t at) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(in[at]) |
                                      (static_cast<unsigned char>(in[at + 1]) << 8));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
    std::uint32_t v = 0;
    for (int k = 3; k >= 0; --k) {
        v = (v << 8) | static_cast<unsigned char>(in[at + static_cast<std::size_t>(k)]);
    }
    return v;
}

}  // namespace

std::string encode_tensor(const Tensor& tensor) {
    if (tensor.rank() < 1 || tensor.rank() > 3) {
        throw ConfigError("tensor encoding supports rank 1..3");
    }
    std::string out;
    out.reserve(kTensorHeaderBytes + 4 * tensor.size());
    out.append(kMagic.data(), kMagic.size());
    put_u16(out, kTensorFormatVersion);
    put_u16(out, static_cast<std::uint16_t>(tensor.rank()));
    put_u16(out, 0);
    for (std::size_t i = 0; i < 3; ++i) {
        put_u32(out, i < tensor.rank() ? static_cast<std::uint32_t>(tensor.dim(i)) : 0U);
    }
    for (float v : tensor.values()) {
        put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

Tensor decode_tensor(std::string_view bytes, std::size_t& offset) {
    if (bytes.size() < offset + kTensorHeaderBytes) {
        throw DataError("tensor data truncated inside the header");
    }
    const std::string_view header = bytes.substr(offset, kTensorHeaderBytes);
    if (std::memcmp(header.data(), kMagic.data(), kMagic.size()) != 0) {
        throw DataError("tensor data has a bad magic number");
    }
    const std::uint16_t version = get_u16(header, 6);
    if (version != kTensorFormatVersion) {
        throw DataError("unsupported tensor format version " + std::to_string(version));
    }
    const std::uint16_t rank = get_u16(header, 8);
    if (rank < 1 || rank > 3) {
        throw DataError("tensor header declares invalid rank " + std::to_string(rank));
    }
    std::vector<std::size_t> shape;
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        shape.push_back(get_u32(header, 12 + 4 * i));
        count *= shape.back();
    }
    const std::size_t payload = offset + kTensorHeaderBytes;
    if (bytes.size() < payload + 4 * count) {
        throw DataError("tensor data truncated: expected " + std::to_string(count) + " values");
    }
    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        data[i] = std::bit_cast<float>(get_u32(bytes, payload + 4 * i));
    }
    offset = payload + 4 * count;
    return Tensor(std::move(shape), std::move(data));
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write " + path.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw DataError("short write to " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

void write_tensor_file(const std::filesystem::path& path, const Tensor& tensor) {
    write_file_bytes(path, encode_tensor(tensor));
}

Tensor read_tensor_file(const std::filesystem::path& path) {
    const std::string bytes = read_file_bytes(path);
    std::size_t offset = 0;
    Tensor t = decode_tensor(bytes, offset);
    if (offset != bytes.size()) {
        throw DataError(path.string() + " has trailing bytes after the tensor payload");
    }
    return t;
}

}  // namespace nndm
