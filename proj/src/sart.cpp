#include "sadreg/sart.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace sadreg::sart {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'R', 'T'};

template <typename UInt> void put_le(std::vector<std::uint8_t> &out, UInt v) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

template <typename UInt> UInt get_le(const std::uint8_t *p) {
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        v |= static_cast<UInt>(p[i]) << (8 * i);
    }
    return v;
}

class Cursor {
  public:
    explicit Cursor(const std::vector<std::uint8_t> &bytes) : bytes_(bytes) {}
    const std::uint8_t *take(std::size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw FormatError("SART: truncated container");
        }
        const std::uint8_t *p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

  private:
    const std::vector<std::uint8_t> &bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode(const Tensor &t, DType dtype) {
    if (t.empty()) {
        throw FormatError("SART: cannot encode an empty tensor");
    }
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
        throw FormatError("SART: rank too large");
    }
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    out.push_back(kVersion);
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) {
        if (d > std::numeric_limits<std::uint32_t>::max()) {
            throw FormatError("SART: dimension exceeds u32");
        }
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    out.push_back(static_cast<std::uint8_t>(dtype));
    const std::size_t width = dtype == DType::f64 ? 8 : 4;
    out.reserve(out.size() + t.size() * width);
    for (double v : t.data()) {
        if (dtype == DType::f64) {
            put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        } else {
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    return out;
}

Tensor decode(const std::vector<std::uint8_t> &bytes) {
    Cursor cur(bytes);
    if (std::memcmp(cur.take(4), kMagic, 4) != 0) {
        throw FormatError("SART: bad magic");
    }
    const std::uint8_t version = *cur.take(1);
    if (version != kVersion) {
        throw FormatError("SART: unsupported version " + std::to_string(version));
    }
    const std::uint8_t rank = *cur.take(1);
    if (rank == 0) {
        throw FormatError("SART: rank must be >= 1");
    }
    Shape shape(rank);
    for (auto &d : shape) {
        d = get_le<std::uint32_t>(cur.take(4));
        if (d == 0) {
            throw FormatError("SART: zero dimension");
        }
    }
    const auto tag = *cur.take(1);
    if (tag != static_cast<std::uint8_t>(DType::f32) && tag != static_cast<std::uint8_t>(DType::f64)) {
        throw FormatError("SART: unknown dtype tag " + std::to_string(tag));
    }
    const std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    if (tag == static_cast<std::uint8_t>(DType::f64)) {
        const std::uint8_t *p = cur.take(8 * n);
        for (std::size_t i = 0; i < n; ++i) {
            data[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i));
        }
    } else {
        const std::uint8_t *p = cur.take(4 * n);
        for (std::size_t i = 0; i < n; ++i) {
            data[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i)));
        }
    }
    if (!cur.at_end()) {
        throw FormatError("SART: trailing bytes after payload");
    }
    return Tensor(std::move(shape), std::move(data));
}

void write(std::ostream &os, const Tensor &t, DType dtype) {
    const auto bytes = encode(t, dtype);
    os.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) {
        throw FormatError("SART: write failed");
    }
}

Tensor read(std::istream &is) {
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

void save(const std::filesystem::path &path, const Tensor &t, DType dtype) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw FormatError("SART: cannot open " + path.string() + " for writing");
    }
    write(os, t, dtype);
}

Tensor load(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("SART: cannot open " + path.string());
    }
    try {
        return read(is);
    } catch (const FormatError &e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

} // namespace sadreg::sart
