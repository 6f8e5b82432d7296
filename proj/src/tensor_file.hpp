#pragma once

#include "common.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace fade {

// Single-file weight container: 8-byte magic, little-endian u64 header
// length, JSON header, raw float32 tensor data. The header records tensor
// shapes/offsets, model metadata, optional tokenizer tables, and the SHA-256
// of the data section so corrupt files are rejected at load time.
class TensorStore {
  public:
    static constexpr char kMagic[9] = "FADETNSR";

    static TensorStore read(const std::string& path);

    bool has(const std::string& name) const { return index_.count(name) > 0; }
    // 2-D tensor as a row-major matrix (1-D tensors come back as 1 x n).
    Mat matrix(const std::string& name) const;
    Vec vector(const std::string& name) const;
    std::vector<int64_t> shape(const std::string& name) const;

    const nlohmann::json& model_meta() const { return model_meta_; }
    const nlohmann::json& tokenizer_meta() const { return tokenizer_meta_; }
    const std::string& data_sha256() const { return data_sha256_; }

  private:
    struct Entry {
        std::vector<int64_t> shape;
        size_t offset = 0;  // floats into data_
        size_t count = 0;
    };
    std::map<std::string, Entry> index_;
    std::vector<float> data_;
    nlohmann::json model_meta_;
    nlohmann::json tokenizer_meta_;
    std::string data_sha256_;

    const Entry& entry(const std::string& name) const;
};

class TensorWriter {
  public:
    void set_model_meta(nlohmann::json meta) { model_meta_ = std::move(meta); }
    void set_tokenizer_meta(nlohmann::json meta) { tokenizer_meta_ = std::move(meta); }
    void add(const std::string& name, const Mat& m);
    void add(const std::string& name, const Vec& v);
    void add(const std::string& name, std::vector<int64_t> shape, const std::vector<float>& data);
    void write(const std::string& path) const;

  private:
    struct Pending {
        std::string name;
        std::vector<int64_t> shape;
        std::vector<float> data;
    };
    std::vector<Pending> tensors_;
    nlohmann::json model_meta_;
    nlohmann::json tokenizer_meta_;
};

}  // namespace fade
