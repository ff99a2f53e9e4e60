#include "ser/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts are unsupported");

namespace ser {

namespace {

template <typename T>
constexpr std::uint8_t dtype_code() {
    if constexpr (std::is_same_v<T, float>) {
        return 0;
    } else {
        static_assert(std::is_same_v<T, double>);
        return 1;
    }
}

constexpr char kMagic[4] = {'A', 'T', 'N', 'T'};

}  // namespace

template <typename T>
bool all_finite(const TensorT<T>& t) {
    for (T v : t.data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

template <typename T>
void validate_finite(const TensorT<T>& t, const std::string& what) {
    if (!all_finite(t)) {
        throw NumericError("non-finite values in " + what);
    }
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const TensorT<T>& t) {
    validate_finite(t, "tensor written to " + path.string());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open for writing: " + path.string());
    }
    out.write(kMagic, 4);
    const std::uint8_t dt = dtype_code<T>();
    const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
    out.write(reinterpret_cast<const char*>(&dt), 1);
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (i64 e : t.shape) {
        const std::uint32_t e32 = static_cast<std::uint32_t>(e);
        out.write(reinterpret_cast<const char*>(&e32), 4);
    }
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!out) {
        throw DataError("short write: " + path.string());
    }
}

template <typename T>
TensorT<T> load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open tensor file: " + path.string());
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError("bad tensor magic: " + path.string());
    }
    std::uint8_t dt = 0;
    std::uint8_t rank = 0;
    in.read(reinterpret_cast<char*>(&dt), 1);
    in.read(reinterpret_cast<char*>(&rank), 1);
    if (!in) {
        throw DataError("truncated tensor header: " + path.string());
    }
    if (dt != dtype_code<T>()) {
        throw DataError("tensor dtype mismatch in " + path.string());
    }
    std::vector<i64> shape(rank);
    for (int i = 0; i < rank; ++i) {
        std::uint32_t e32 = 0;
        in.read(reinterpret_cast<char*>(&e32), 4);
        shape[static_cast<std::size_t>(i)] = static_cast<i64>(e32);
    }
    if (!in) {
        throw DataError("truncated tensor extents: " + path.string());
    }
    TensorT<T> t(std::move(shape));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!in) {
        throw DataError("truncated tensor payload: " + path.string());
    }
    validate_finite(t, "tensor loaded from " + path.string());
    return t;
}

template bool all_finite<float>(const TensorT<float>&);
template bool all_finite<double>(const TensorT<double>&);
template void validate_finite<float>(const TensorT<float>&, const std::string&);
template void validate_finite<double>(const TensorT<double>&, const std::string&);
template void save_tensor<float>(const std::filesystem::path&, const TensorT<float>&);
template void save_tensor<double>(const std::filesystem::path&, const TensorT<double>&);
template TensorT<float> load_tensor<float>(const std::filesystem::path&);
template TensorT<double> load_tensor<double>(const std::filesystem::path&);

}  // namespace ser
