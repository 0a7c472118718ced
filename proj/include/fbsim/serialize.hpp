#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fbsim/param_vector.hpp"

namespace fbsim {

// All container files share one framing: the magic string "FBSIM1" followed
// by little-endian 64-bit fields. Readers track the byte offset so
// truncation/corruption errors can name the exact position.

inline constexpr char kMagic[6] = {'F', 'B', 'S', 'I', 'M', '1'};

class ByteWriter {
public:
    void magic();
    void u64(std::uint64_t v);
    void u8(std::uint8_t v);
    void f64(double v);
    void f64_span(std::span<const double> v);
    void bytes(std::span<const std::uint8_t> v);
    void str(const std::string& s); // u64 length + raw bytes

    const std::vector<std::uint8_t>& buffer() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}

    void magic();                 // throws IoError naming the offset
    std::uint64_t u64();
    std::uint8_t u8();
    double f64();
    void f64_into(std::span<double> out);
    void bytes_into(std::span<std::uint8_t> out);
    std::string str();

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }
    void expect_end() const; // trailing bytes -> IoError

private:
    void need(std::size_t n, const char* what);
    const std::uint8_t* take(std::size_t n, const char* what);

    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

// Whole-file helpers. Writes go through a temp file + rename so a crash
// never leaves a half-written file at the target path.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Checkpoint container: segment map + values.
void save_params(const ParamVector& params, const std::filesystem::path& path);
ParamVector load_params(const std::filesystem::path& path);

// In-stream (non-file) variants used by composite containers.
void write_params(ByteWriter& w, const ParamVector& params);
ParamVector read_params(ByteReader& r);

} // namespace fbsim
