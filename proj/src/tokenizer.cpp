#include "tokenizer.hpp"

#include <algorithm>
#include <cctype>

namespace fade {

namespace {

// GPT-2 style byte-to-unicode table: maps each byte to a printable code
// point so BPE operates on visible characters.
const std::vector<std::string>& byte_encoder() {
    static const std::vector<std::string> table = [] {
        std::vector<int> bs;
        for (int b = '!'; b <= '~'; ++b) bs.push_back(b);
        for (int b = 0xA1; b <= 0xAC; ++b) bs.push_back(b);
        for (int b = 0xAE; b <= 0xFF; ++b) bs.push_back(b);
        std::vector<int> cs = bs;
        int n = 0;
        for (int b = 0; b < 256; ++b) {
            if (std::find(bs.begin(), bs.end(), b) == bs.end()) {
                bs.push_back(b);
                cs.push_back(256 + n);
                ++n;
            }
        }
        std::vector<std::string> out(256);
        auto cp_to_utf8 = [](int cp) {
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
        };
        for (size_t i = 0; i < bs.size(); ++i) out[static_cast<size_t>(bs[i])] = cp_to_utf8(cs[i]);
        return out;
    }();
    return table;
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

bool is_ascii_space(uint32_t cp) {
    return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v';
}
bool is_ascii_digit(uint32_t cp) { return cp >= '0' && cp <= '9'; }
bool is_letter(uint32_t cp) {
    if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z')) return true;
    // Non-ASCII code points are treated as letters; prompt files are plain
    // English so this only affects exotic inputs.
    return cp >= 0x80 && cp != 0xA0;
}

// Decodes UTF-8 into (code point, byte length) pairs; invalid bytes pass
// through as single code points.
std::vector<std::pair<uint32_t, int>> decode_utf8(const std::string& s) {
    std::vector<std::pair<uint32_t, int>> cps;
    size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        uint32_t cp = c;
        int len = 1;
        if ((c & 0xE0) == 0xC0 && i + 1 < s.size()) {
            cp = (c & 0x1Fu) << 6 | (static_cast<unsigned char>(s[i + 1]) & 0x3Fu);
            len = 2;
        } else if ((c & 0xF0) == 0xE0 && i + 2 < s.size()) {
            cp = (c & 0x0Fu) << 12 | (static_cast<unsigned char>(s[i + 1]) & 0x3Fu) << 6 |
                 (static_cast<unsigned char>(s[i + 2]) & 0x3Fu);
            len = 3;
        } else if ((c & 0xF8) == 0xF0 && i + 3 < s.size()) {
            cp = (c & 0x07u) << 18 | (static_cast<unsigned char>(s[i + 1]) & 0x3Fu) << 12 |
                 (static_cast<unsigned char>(s[i + 2]) & 0x3Fu) << 6 |
                 (static_cast<unsigned char>(s[i + 3]) & 0x3Fu);
            len = 4;
        }
        cps.emplace_back(cp, len);
        i += static_cast<size_t>(len);
    }
    return cps;
}

}  // namespace

// Splits cleaned text into BPE words following CLIP's pattern: contractions,
// letter runs, single digits, punctuation runs; whitespace separates.
std::vector<std::string> Tokenizer::pretokenize(const std::string& text) {
    std::string lowered = lowercase(text);
    auto cps = decode_utf8(lowered);
    std::vector<std::string> words;
    size_t byte_pos = 0;
    size_t i = 0;
    auto slice = [&](size_t from_byte, size_t to_byte) {
        return lowered.substr(from_byte, to_byte - from_byte);
    };
    while (i < cps.size()) {
        auto [cp, len] = cps[i];
        if (is_ascii_space(cp)) {
            byte_pos += static_cast<size_t>(len);
            ++i;
            continue;
        }
        size_t start_byte = byte_pos;
        if (cp == '\'') {
            // 's 't 're 've 'm 'll 'd
            static const std::vector<std::string> suffixes = {"'s", "'t", "'re", "'ve",
                                                              "'m", "'ll", "'d"};
            bool matched = false;
            for (const auto& suf : suffixes) {
                if (lowered.compare(byte_pos, suf.size(), suf) == 0) {
                    words.push_back(suf);
                    byte_pos += suf.size();
                    i += suf.size();  // suffixes are ASCII, 1 byte = 1 cp
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
        }
        if (is_letter(cp) && cp != '\'') {
            while (i < cps.size() && is_letter(cps[i].first) && cps[i].first != '\'' &&
                   !is_ascii_space(cps[i].first) && !is_ascii_digit(cps[i].first)) {
                byte_pos += static_cast<size_t>(cps[i].second);
                ++i;
            }
            words.push_back(slice(start_byte, byte_pos));
        } else if (is_ascii_digit(cp)) {
            byte_pos += static_cast<size_t>(len);
            ++i;
            words.push_back(slice(start_byte, byte_pos));
        } else {
            while (i < cps.size() && !is_ascii_space(cps[i].first) && !is_letter(cps[i].first) &&
                   !is_ascii_digit(cps[i].first)) {
                byte_pos += static_cast<size_t>(cps[i].second);
                ++i;
            }
            words.push_back(slice(start_byte, byte_pos));
        }
    }
    return words;
}

Tokenizer Tokenizer::from_meta(const nlohmann::json& meta) {
    Tokenizer t;
    std::string kind = meta.value("kind", "hash");
    t.context_length_ = meta.value("context_length", 77);
    FADE_CHECK(t.context_length_ >= 3, ErrorCode::bad_weights,
               "tokenizer context_length must be >= 3");
    if (kind == "bpe") {
        t.kind_ = Kind::bpe;
        const auto& vocab = meta.at("vocab");
        t.vocab_size_ = static_cast<int>(vocab.size());
        t.encoder_.reserve(vocab.size());
        int32_t id = 0;
        for (const auto& tok : vocab) t.encoder_[tok.get<std::string>()] = id++;
        const auto& merges = meta.at("merges");
        int rank = 0;
        for (const auto& m : merges) t.merge_rank_[m.get<std::string>()] = rank++;
        auto sot = t.encoder_.find("<|startoftext|>");
        auto eot = t.encoder_.find("<|endoftext|>");
        FADE_CHECK(sot != t.encoder_.end() && eot != t.encoder_.end(), ErrorCode::bad_weights,
                   "bpe tokenizer vocab lacks start/end tokens");
        t.sot_id_ = sot->second;
        t.eot_id_ = eot->second;
    } else if (kind == "hash") {
        t.kind_ = Kind::hash;
        t.vocab_size_ = meta.value("vocab_size", 256);
        FADE_CHECK(t.vocab_size_ >= 8, ErrorCode::bad_weights, "hash tokenizer vocab too small");
        t.sot_id_ = t.vocab_size_ - 2;
        t.eot_id_ = t.vocab_size_ - 1;
    } else {
        raise(ErrorCode::bad_weights, "unknown tokenizer kind: %s", kind.c_str());
    }
    return t;
}

std::vector<std::string> Tokenizer::bpe_word(const std::string& word) const {
    const auto& enc = byte_encoder();
    std::vector<std::string> symbols;
    for (unsigned char c : word) symbols.push_back(enc[c]);
    FADE_CHECK(!symbols.empty(), ErrorCode::internal, "empty bpe word");
    symbols.back() += "</w>";

    while (symbols.size() > 1) {
        int best_rank = std::numeric_limits<int>::max();
        size_t best_i = 0;
        for (size_t i = 0; i + 1 < symbols.size(); ++i) {
            auto it = merge_rank_.find(symbols[i] + " " + symbols[i + 1]);
            if (it != merge_rank_.end() && it->second < best_rank) {
                best_rank = it->second;
                best_i = i;
            }
        }
        if (best_rank == std::numeric_limits<int>::max()) break;
        symbols[best_i] += symbols[best_i + 1];
        symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_i) + 1);
    }
    return symbols;
}

std::vector<int32_t> Tokenizer::encode_bpe(const std::string& text) const {
    std::vector<int32_t> ids;
    for (const auto& word : pretokenize(text)) {
        for (const auto& sym : bpe_word(word)) {
            auto it = encoder_.find(sym);
            // Unknown symbols should not occur with a byte-complete vocab;
            // skip rather than abort if a stray one appears.
            if (it != encoder_.end()) ids.push_back(it->second);
        }
    }
    return ids;
}

std::vector<int32_t> Tokenizer::encode_hash(const std::string& text) const {
    std::vector<int32_t> ids;
    int32_t range = vocab_size_ - 3;  // ids 1..vocab-3; 0 is padding
    for (const auto& word : pretokenize(text))
        ids.push_back(1 + static_cast<int32_t>(fnv1a(word) % static_cast<uint64_t>(range)));
    return ids;
}

std::vector<int32_t> Tokenizer::finalize(std::vector<int32_t> body, const std::string& text) const {
    size_t max_body = static_cast<size_t>(context_length_) - 2;
    if (body.size() > max_body) {
        log_warn("prompt exceeds context length (%zu tokens > %zu), truncating: \"%.60s...\"",
                 body.size(), max_body, text.c_str());
        body.resize(max_body);
    }
    std::vector<int32_t> out;
    out.reserve(static_cast<size_t>(context_length_));
    out.push_back(sot_id_);
    out.insert(out.end(), body.begin(), body.end());
    out.push_back(eot_id_);
    out.resize(static_cast<size_t>(context_length_), 0);
    return out;
}

std::vector<int32_t> Tokenizer::encode(const std::string& text) const {
    FADE_CHECK(!trim(text).empty(), ErrorCode::precondition, "cannot encode an empty prompt");
    return finalize(kind_ == Kind::bpe ? encode_bpe(text) : encode_hash(text), text);
}

int Tokenizer::eot_position(const std::vector<int32_t>& ids, int32_t eot_id) {
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == eot_id) return static_cast<int>(i);
    return static_cast<int>(ids.size()) - 1;
}

}  // namespace fade
