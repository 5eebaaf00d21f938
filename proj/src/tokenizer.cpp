#include "sketchclip/tokenizer.hpp"

#include "sketchclip/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

namespace sketchclip {

std::string normalize_text(const std::string& text) {
    std::string out;
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::vector<int> ByteTokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    for (unsigned char c : normalize_text(text)) ids.push_back(static_cast<int>(c));
    return ids;
}

namespace {

std::string utf8(int cp) {
    std::string s;
    if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return s;
}

// GPT-2 style reversible byte -> printable unicode mapping.
std::vector<std::string> make_byte_encoder() {
    std::vector<int> cps(256, -1);
    auto keep = [](int b) { return (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF); };
    int extra = 0;
    for (int b = 0; b < 256; ++b) cps[b] = keep(b) ? b : 256 + extra++;
    std::vector<std::string> enc(256);
    for (int b = 0; b < 256; ++b) enc[b] = utf8(cps[b]);
    return enc;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        if (std::isalpha(c)) {
            while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
        } else if (!std::isdigit(c)) {
            while (j < text.size()) {
                const auto d = static_cast<unsigned char>(text[j]);
                if (std::isspace(d) || std::isalnum(d)) break;
                ++j;
            }
        }
        words.push_back(text.substr(i, j - i));
        i = j;
    }
    return words;
}

}  // namespace

BpeTokenizer::BpeTokenizer(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt)
    : byte_encoder_(make_byte_encoder()) {
    std::ifstream vin(vocab_json);
    if (!vin) throw InputError("cannot open tokenizer vocabulary " + vocab_json.string());
    try {
        const auto j = nlohmann::json::parse(vin);
        for (auto it = j.begin(); it != j.end(); ++it) vocab_[it.key()] = it.value().get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed tokenizer vocabulary: " + std::string(e.what()));
    }
    std::ifstream min(merges_txt);
    if (!min) throw InputError("cannot open tokenizer merges " + merges_txt.string());
    std::string line;
    int rank = 0;
    while (std::getline(min, line)) {
        if (line.empty() || line.rfind("#version", 0) == 0) continue;
        std::istringstream ls(line);
        std::string a, b;
        if (ls >> a >> b) ranks_[{a, b}] = rank++;
    }
    const auto sot = vocab_.find("<|startoftext|>");
    const auto eot = vocab_.find("<|endoftext|>");
    if (sot == vocab_.end() || eot == vocab_.end()) throw InputError("tokenizer vocabulary lacks start/end tokens");
    start_ = sot->second;
    end_ = eot->second;
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& word) const {
    std::vector<std::string> parts;
    for (unsigned char c : word) parts.push_back(byte_encoder_[c]);
    if (parts.empty()) return parts;
    parts.back() += "</w>";
    while (parts.size() > 1) {
        int best = std::numeric_limits<int>::max();
        std::size_t at = 0;
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            const auto it = ranks_.find({parts[i], parts[i + 1]});
            if (it != ranks_.end() && it->second < best) {
                best = it->second;
                at = i;
            }
        }
        if (best == std::numeric_limits<int>::max()) break;
        parts[at] += parts[at + 1];
        parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(at) + 1);
    }
    return parts;
}

std::vector<int> BpeTokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& word : split_words(normalize_text(text))) {
        for (const auto& piece : bpe(word)) {
            const auto it = vocab_.find(piece);
            if (it == vocab_.end()) throw InputError("token '" + piece + "' missing from vocabulary");
            ids.push_back(it->second);
        }
    }
    return ids;
}

}  // namespace sketchclip
