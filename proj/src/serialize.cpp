#include "fbsim/serialize.hpp"

#include <cstring>
#include <fstream>
#include <memory>

namespace fbsim {

void ByteWriter::magic() {
    buf_.insert(buf_.end(), kMagic, kMagic + sizeof(kMagic));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }

void ByteWriter::f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
}

void ByteWriter::f64_span(std::span<const double> v) {
    for (double x : v) f64(x);
}

void ByteWriter::bytes(std::span<const std::uint8_t> v) {
    buf_.insert(buf_.end(), v.begin(), v.end());
}

void ByteWriter::str(const std::string& s) {
    u64(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteReader::need(std::size_t n, const char* what) {
    if (pos_ + n > buf_.size())
        throw IoError(std::string("truncated file: needed ") + std::to_string(n) + " bytes for " +
                      what + " at byte offset " + std::to_string(pos_) + ", have " +
                      std::to_string(buf_.size() - pos_));
}

const std::uint8_t* ByteReader::take(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* p = buf_.data() + pos_;
    pos_ += n;
    return p;
}

void ByteReader::magic() {
    const std::size_t at = pos_;
    const std::uint8_t* p = take(sizeof(kMagic), "magic");
    if (std::memcmp(p, kMagic, sizeof(kMagic)) != 0)
        throw IoError("bad magic at byte offset " + std::to_string(at) +
                      " (expected \"FBSIM1\")");
}

std::uint64_t ByteReader::u64() {
    const std::uint8_t* p = take(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::uint8_t ByteReader::u8() { return *take(1, "u8"); }

double ByteReader::f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void ByteReader::f64_into(std::span<double> out) {
    for (double& x : out) x = f64();
}

void ByteReader::bytes_into(std::span<std::uint8_t> out) {
    const std::uint8_t* p = take(out.size(), "byte block");
    std::memcpy(out.data(), p, out.size());
}

std::string ByteReader::str() {
    std::uint64_t len = u64();
    if (len > remaining())
        throw IoError("truncated string of length " + std::to_string(len) + " at byte offset " +
                      std::to_string(pos_));
    const std::uint8_t* p = take(static_cast<std::size_t>(len), "string");
    return std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(len));
}

void ByteReader::expect_end() const {
    if (pos_ != buf_.size())
        throw IoError("trailing garbage: " + std::to_string(buf_.size() - pos_) +
                      " unread bytes at byte offset " + std::to_string(pos_));
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size()));
        if (!out) throw IoError("write failed on " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed on " + path.string());
    return data;
}

void write_params(ByteWriter& w, const ParamVector& params) {
    const SegmentMap& segs = params.segments();
    w.u64(segs.size());
    for (const Segment& s : segs) {
        w.str(s.name);
        w.str(segment_kind_name(s.kind));
        w.u64(s.offset);
        w.u64(s.length);
    }
    w.u64(params.size());
    w.f64_span(params.values());
}

ParamVector read_params(ByteReader& r) {
    std::uint64_t nseg = r.u64();
    auto segs = std::make_shared<SegmentMap>();
    segs->reserve(static_cast<std::size_t>(nseg));
    for (std::uint64_t i = 0; i < nseg; ++i) {
        Segment s;
        s.name = r.str();
        s.kind = segment_kind_from_name(r.str());
        s.offset = static_cast<std::size_t>(r.u64());
        s.length = static_cast<std::size_t>(r.u64());
        segs->push_back(std::move(s));
    }
    std::uint64_t total = r.u64();
    std::vector<double> values(static_cast<std::size_t>(total));
    r.f64_into(values);
    return ParamVector(std::move(segs), std::move(values));
}

void save_params(const ParamVector& params, const std::filesystem::path& path) {
    ByteWriter w;
    w.magic();
    write_params(w, params);
    write_file_atomic(path, w.buffer());
}

ParamVector load_params(const std::filesystem::path& path) {
    ByteReader r(read_file(path));
    r.magic();
    ParamVector p = read_params(r);
    r.expect_end();
    return p;
}

} // namespace fbsim
