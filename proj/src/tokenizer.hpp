#pragma once

#include "common.hpp"

#include <json.hpp>

#include <string>
#include <unordered_map>
#include <vector>

namespace fade {

// Text tokenizer backing encode_text. Two kinds:
//   "bpe"  - CLIP byte-pair encoding, vocab and merges embedded in the
//            weight file by the converter.
//   "hash" - deterministic word-hash tokenizer for small test models that
//            carry no vocabulary.
// encode() always returns exactly context_length ids, start/end tokens
// included; over-long prompts are truncated with a warning, never silently
// rejected.
class Tokenizer {
  public:
    static Tokenizer from_meta(const nlohmann::json& meta);

    std::vector<int32_t> encode(const std::string& text) const;
    int context_length() const { return context_length_; }
    int vocab_size() const { return vocab_size_; }
    // Index of the end-of-text token within an encoded sequence.
    static int eot_position(const std::vector<int32_t>& ids, int32_t eot_id);
    int32_t eot_id() const { return eot_id_; }

    // Exposed for tests: BPE-merge a single pre-tokenized word.
    std::vector<std::string> bpe_word(const std::string& word) const;
    static std::vector<std::string> pretokenize(const std::string& text);

  private:
    enum class Kind { bpe, hash };
    Kind kind_ = Kind::hash;
    int context_length_ = 77;
    int vocab_size_ = 0;
    int32_t sot_id_ = 0;
    int32_t eot_id_ = 0;

    std::unordered_map<std::string, int32_t> encoder_;
    std::unordered_map<std::string, int> merge_rank_;

    std::vector<int32_t> encode_bpe(const std::string& text) const;
    std::vector<int32_t> encode_hash(const std::string& text) const;
    std::vector<int32_t> finalize(std::vector<int32_t> body, const std::string& text) const;
};

}  // namespace fade
