#pragma once
// safetensors container: 8-byte little-endian header length, a JSON header
// mapping tensor names to {dtype, shape, data_offsets}, then raw tensor bytes.
// Used both for pretrained backbone weights and for run checkpoints.

#include "sketchclip/autograd.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sketchclip {

struct TensorInfo {
    std::string dtype;  // F64, F32, F16, BF16
    std::vector<std::int64_t> shape;
    std::size_t begin = 0;
    std::size_t end = 0;
};

class SafetensorsReader {
public:
    explicit SafetensorsReader(const std::filesystem::path& path);

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const TensorInfo& info(const std::string& name) const;
    std::vector<std::string> names() const;
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

    // The tensor flattened to rows x cols (row-major reading). A 0-d or 1-d
    // tensor becomes a single row; higher ranks keep dim 0 as rows.
    Matrix matrix(const std::string& name) const;

private:
    std::map<std::string, TensorInfo> tensors_;
    std::map<std::string, std::string> metadata_;
    std::vector<std::uint8_t> data_;
    std::filesystem::path path_;
};

struct TensorToWrite {
    std::vector<std::int64_t> shape;  // empty -> inferred from the matrix
    Matrix value;
};

enum class StoredType { F64, F32 };

void write_safetensors(const std::filesystem::path& path, const std::map<std::string, TensorToWrite>& tensors,
                       const std::map<std::string, std::string>& metadata, StoredType type = StoredType::F64);

}  // namespace sketchclip
