#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "factlab/tensor.hpp"

namespace factlab {

// Byte-level tokenizer: ids 0..255 are raw byte values, followed by the three
// specials. Encoding is context-free and decode(encode(s)) == s for any byte
// string; decode drops special ids.
class ByteTokenizer {
public:
    static constexpr TokenId kBos = 256;
    static constexpr TokenId kEos = 257;
    static constexpr TokenId kPad = 258;
    static constexpr int kVocabSize = 259;

    std::vector<TokenId> encode(std::string_view text) const {
        std::vector<TokenId> out;
        out.reserve(text.size());
        for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
        return out;
    }

    std::string decode(const std::vector<TokenId>& ids) const {
        std::string out;
        out.reserve(ids.size());
        for (TokenId id : ids) {
            if (id < 0 || id >= kVocabSize) throw IndexError("decode: token id " + std::to_string(id) + " out of range");
            if (id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        }
        return out;
    }

    int vocab_size() const { return kVocabSize; }
};

}  // namespace factlab
