#pragma once

// Little-endian encoding helpers shared by the embedding and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "asap/errors.hpp"

namespace asap::detail {

template <typename U>
void put_le(std::string& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float value) { put_le(out, std::bit_cast<std::uint32_t>(value)); }

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

    template <typename U>
    U get() {
        need(sizeof(U));
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return value;
    }

    float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }

    std::string get_string(std::size_t length) {
        need(length);
        std::string s(bytes_.substr(pos_, length));
        pos_ += length;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n)
            throw ParseError(context_ + ": truncated at byte " + std::to_string(pos_));
    }

    std::string_view bytes_;
    std::string context_;
    std::size_t pos_ = 0;
};

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);

}  // namespace asap::detail
