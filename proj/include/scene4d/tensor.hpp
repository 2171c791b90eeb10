#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scene4d {

// Dense row-major array with a runtime shape.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, T fill = T{})
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw std::invalid_argument("tensor: payload size does not match shape");
    }

    static Tensor image(std::size_t c, std::size_t h, std::size_t w, T fill = T{}) {
        return Tensor({c, h, w}, fill);
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // Image accessors for rank-3 [C,H,W] and rank-2 [H,W] tensors.
    std::size_t channels() const { return rank() == 3 ? shape_[0] : 1; }
    std::size_t height() const { return shape_[rank() - 2]; }
    std::size_t width() const { return shape_[rank() - 1]; }
    std::size_t plane() const { return height() * width(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * height() + y) * width() + x]; }
    const T& at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * height() + y) * width() + x];
    }
    T& at(std::size_t y, std::size_t x) { return data_[y * width() + x]; }
    const T& at(std::size_t y, std::size_t x) const { return data_[y * width() + x]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

using Image = Tensor<float>;   // [3,H,W] in [0,1]
using Mask = Tensor<float>;    // [H,W] with values in {0,1}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename A, typename B>
void require_same_shape(const Tensor<A>& a, const Tensor<B>& b, const char* what) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                                    " vs " + shape_string(b.shape()));
}

// ---------------------------------------------------------------------------
// TEN1 array files: "TEN1\0\0\0\0", u32 rank, u32 dims[rank], f32 payload.
// All integers and floats little-endian.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("TEN1: truncated header");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

inline constexpr std::array<char, 8> kTen1Magic = {'T', 'E', 'N', '1', '\0', '\0', '\0', '\0'};

template <typename T>
void write_ten1(std::ostream& os, const Tensor<T>& t) {
    os.write(kTen1Magic.data(), kTen1Magic.size());
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.size(); ++i) {
        float f = static_cast<float>(t[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(os, bits);
    }
}

inline Tensor<float> read_ten1(std::istream& is) {
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kTen1Magic)
        throw std::runtime_error("TEN1: bad magic");
    const std::uint32_t rank = detail::get_u32(is);
    if (rank > 8) throw std::runtime_error("TEN1: implausible rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = detail::get_u32(is);
    Tensor<float> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint32_t bits = detail::get_u32(is);
        std::memcpy(&t[i], &bits, 4);
    }
    return t;
}

template <typename T>
void save_ten1(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_ten1(os, t);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline Tensor<float> load_ten1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("missing file: " + path);
    return read_ten1(is);
}

}  // namespace scene4d
