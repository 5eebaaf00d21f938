#include "sketchclip/safetensors.hpp"

#include "sketchclip/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace sketchclip {

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

namespace {

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "F64") return 8;
    if (dtype == "F32") return 4;
    if (dtype == "F16" || dtype == "BF16") return 2;
    throw InputError("unsupported tensor dtype " + dtype);
}

double half_to_double(std::uint16_t h) {
    const int sign = (h >> 15) & 1;
    const int exp = (h >> 10) & 0x1F;
    const int mant = h & 0x3FF;
    double v;
    if (exp == 0) {
        v = std::ldexp(static_cast<double>(mant), -24);
    } else if (exp == 31) {
        v = mant ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
    } else {
        v = std::ldexp(static_cast<double>(mant | 0x400), exp - 25);
    }
    return sign ? -v : v;
}

double bf16_to_double(std::uint16_t b) {
    const std::uint32_t bits = static_cast<std::uint32_t>(b) << 16;
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
}

}  // namespace

SafetensorsReader::SafetensorsReader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open weights file " + path.string());
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    if (!in || header_len == 0 || header_len > (1ull << 30)) throw InputError("not a safetensors file: " + path.string());
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw InputError("truncated safetensors header in " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed safetensors header in " + path.string() + ": " + e.what());
    }
    std::size_t data_size = 0;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "__metadata__") {
            for (auto m = it.value().begin(); m != it.value().end(); ++m) metadata_[m.key()] = m.value().get<std::string>();
            continue;
        }
        TensorInfo t;
        t.dtype = it.value().at("dtype").get<std::string>();
        t.shape = it.value().at("shape").get<std::vector<std::int64_t>>();
        const auto offsets = it.value().at("data_offsets").get<std::vector<std::size_t>>();
        t.begin = offsets.at(0);
        t.end = offsets.at(1);
        std::size_t count = 1;
        for (auto d : t.shape) count *= static_cast<std::size_t>(d);
        if (t.end < t.begin || t.end - t.begin != count * dtype_size(t.dtype)) {
            throw InputError("tensor " + it.key() + " has inconsistent offsets in " + path.string());
        }
        data_size = std::max(data_size, t.end);
        tensors_.emplace(it.key(), std::move(t));
    }
    data_.resize(data_size);
    in.read(reinterpret_cast<char*>(data_.data()), static_cast<std::streamsize>(data_size));
    if (!in) throw InputError("truncated safetensors data in " + path.string());
}

const TensorInfo& SafetensorsReader::info(const std::string& name) const {
    const auto it = tensors_.find(name);
    if (it == tensors_.end()) throw InputError("tensor '" + name + "' missing from " + path_.string());
    return it->second;
}

std::vector<std::string> SafetensorsReader::names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : tensors_) out.push_back(k);
    return out;
}

Matrix SafetensorsReader::matrix(const std::string& name) const {
    const TensorInfo& t = info(name);
    std::size_t count = 1;
    for (auto d : t.shape) count *= static_cast<std::size_t>(d);
    Eigen::Index rows = 1;
    Eigen::Index cols = static_cast<Eigen::Index>(count);
    if (t.shape.size() >= 2) {
        rows = t.shape[0];
        cols = 1;
        for (std::size_t d = 1; d < t.shape.size(); ++d) cols *= t.shape[d];
    }
    Matrix m(rows, cols);
    const std::uint8_t* src = data_.data() + t.begin;
    for (std::size_t i = 0; i < count; ++i) {
        double v = 0.0;
        if (t.dtype == "F64") {
            std::memcpy(&v, src + 8 * i, 8);
        } else if (t.dtype == "F32") {
            float f;
            std::memcpy(&f, src + 4 * i, 4);
            v = f;
        } else {
            std::uint16_t h;
            std::memcpy(&h, src + 2 * i, 2);
            v = t.dtype == "F16" ? half_to_double(h) : bf16_to_double(h);
        }
        m(static_cast<Eigen::Index>(i) / cols, static_cast<Eigen::Index>(i) % cols) = v;
    }
    return m;
}

void write_safetensors(const std::filesystem::path& path, const std::map<std::string, TensorToWrite>& tensors,
                       const std::map<std::string, std::string>& metadata, StoredType type) {
    nlohmann::json header = nlohmann::json::object();
    if (!metadata.empty()) header["__metadata__"] = metadata;
    const std::size_t elem = type == StoredType::F64 ? 8 : 4;
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        std::vector<std::int64_t> shape = t.shape;
        if (shape.empty() && t.value.size() != 1) shape = {t.value.rows(), t.value.cols()};
        std::size_t count = 1;
        for (auto d : shape) count *= static_cast<std::size_t>(d);
        if (count != static_cast<std::size_t>(t.value.size())) {
            throw std::invalid_argument("tensor " + name + ": shape does not match the value size");
        }
        header[name] = {{"dtype", type == StoredType::F64 ? "F64" : "F32"},
                        {"shape", shape},
                        {"data_offsets", {offset, offset + count * elem}}};
        offset += count * elem;
    }
    std::string h = header.dump();
    // Pad the header so tensor data starts 8-byte aligned.
    while ((h.size() + 8) % 8 != 0) h.push_back(' ');
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    const std::uint64_t len = h.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& [name, t] : tensors) {
        const Matrix& m = t.value;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                if (type == StoredType::F64) {
                    const double v = m(r, c);
                    out.write(reinterpret_cast<const char*>(&v), 8);
                } else {
                    const auto v = static_cast<float>(m(r, c));
                    out.write(reinterpret_cast<const char*>(&v), 4);
                }
            }
        }
    }
    if (!out) throw InputError("failed writing " + path.string());
}

}  // namespace sketchclip
