#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace sketchclip {

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    // Token ids of the text, without start/end markers.
    virtual std::vector<int> encode(const std::string& text) const = 0;
    virtual int start_token() const = 0;
    virtual int end_token() const = 0;
    virtual int vocab_size() const = 0;
    virtual std::string kind() const = 0;
};

// One token per byte of the lower-cased, whitespace-collapsed text; ids 256
// and 257 mark start and end. Distinct names give distinct token sequences.
class ByteTokenizer final : public Tokenizer {
public:
    std::vector<int> encode(const std::string& text) const override;
    int start_token() const override { return 256; }
    int end_token() const override { return 257; }
    int vocab_size() const override { return 258; }
    std::string kind() const override { return "byte"; }
};

// Byte-level BPE in the CLIP layout (vocab.json + merges.txt). Words are
// split on ASCII letter runs, single digits and punctuation runs.
class BpeTokenizer final : public Tokenizer {
public:
    BpeTokenizer(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);

    std::vector<int> encode(const std::string& text) const override;
    int start_token() const override { return start_; }
    int end_token() const override { return end_; }
    int vocab_size() const override { return static_cast<int>(vocab_.size()); }
    std::string kind() const override { return "bpe"; }

private:
    std::vector<std::string> bpe(const std::string& word) const;

    std::map<std::string, int> vocab_;
    std::map<std::pair<std::string, std::string>, int> ranks_;
    std::vector<std::string> byte_encoder_;
    int start_ = 0;
    int end_ = 0;
};

std::string normalize_text(const std::string& text);

}  // namespace sketchclip
