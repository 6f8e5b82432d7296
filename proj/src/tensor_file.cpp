#include "tensor_file.hpp"

#include "hash.hpp"

#include <cstring>
#include <fstream>

namespace fade {

namespace {

uint64_t read_u64_le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

void write_u64_le(std::ostream& os, uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

}  // namespace

TensorStore TensorStore::read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    FADE_CHECK(in.good(), ErrorCode::io, "cannot open weight file: %s", path.c_str());

    char magic[8];
    in.read(magic, 8);
    FADE_CHECK(in.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0, ErrorCode::bad_weights,
               "%s: not a FADE weight file (bad magic)", path.c_str());

    unsigned char lenbuf[8];
    in.read(reinterpret_cast<char*>(lenbuf), 8);
    FADE_CHECK(in.gcount() == 8, ErrorCode::bad_weights, "%s: truncated header", path.c_str());
    uint64_t header_len = read_u64_le(lenbuf);
    FADE_CHECK(header_len > 0 && header_len < (1ull << 30), ErrorCode::bad_weights,
               "%s: implausible header length %llu", path.c_str(),
               static_cast<unsigned long long>(header_len));

    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    FADE_CHECK(static_cast<uint64_t>(in.gcount()) == header_len, ErrorCode::bad_weights,
               "%s: truncated header", path.c_str());

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const std::exception& e) {
        raise(ErrorCode::bad_weights, "%s: header is not valid JSON: %s", path.c_str(), e.what());
    }

    TensorStore store;
    store.model_meta_ = j.value("model", nlohmann::json::object());
    store.tokenizer_meta_ = j.value("tokenizer", nlohmann::json::object());

    size_t total_floats = 0;
    for (auto& [name, desc] : j.at("tensors").items()) {
        Entry e;
        e.shape = desc.at("shape").get<std::vector<int64_t>>();
        e.offset = desc.at("offset").get<size_t>();
        e.count = 1;
        for (int64_t d : e.shape) {
            FADE_CHECK(d > 0, ErrorCode::bad_weights, "%s: tensor %s has non-positive dim",
                       path.c_str(), name.c_str());
            e.count *= static_cast<size_t>(d);
        }
        total_floats = std::max(total_floats, e.offset + e.count);
        store.index_[name] = std::move(e);
    }

    store.data_.resize(total_floats);
    in.read(reinterpret_cast<char*>(store.data_.data()),
            static_cast<std::streamsize>(total_floats * sizeof(float)));
    FADE_CHECK(static_cast<size_t>(in.gcount()) == total_floats * sizeof(float),
               ErrorCode::bad_weights, "%s: truncated tensor data", path.c_str());

    std::string expected = j.value("data_sha256", "");
    if (!expected.empty()) {
        std::string actual = sha256_hex(store.data_.data(), store.data_.size() * sizeof(float));
        FADE_CHECK(actual == expected, ErrorCode::bad_weights,
                   "%s: tensor data checksum mismatch (expected sha256 %s, got %s)", path.c_str(),
                   expected.c_str(), actual.c_str());
        store.data_sha256_ = expected;
    } else {
        store.data_sha256_ = sha256_hex(store.data_.data(), store.data_.size() * sizeof(float));
    }
    return store;
}

const TensorStore::Entry& TensorStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    FADE_CHECK(it != index_.end(), ErrorCode::bad_weights, "missing tensor: %s", name.c_str());
    return it->second;
}

Mat TensorStore::matrix(const std::string& name) const {
    const Entry& e = entry(name);
    FADE_CHECK(e.shape.size() <= 2, ErrorCode::bad_weights, "tensor %s is not 1-D/2-D",
               name.c_str());
    Eigen::Index rows = e.shape.size() == 2 ? e.shape[0] : 1;
    Eigen::Index cols = e.shape.size() == 2 ? e.shape[1] : e.shape[0];
    return Eigen::Map<const Mat>(data_.data() + e.offset, rows, cols);
}

Vec TensorStore::vector(const std::string& name) const {
    const Entry& e = entry(name);
    FADE_CHECK(e.shape.size() == 1, ErrorCode::bad_weights, "tensor %s is not 1-D", name.c_str());
    return Eigen::Map<const Vec>(data_.data() + e.offset, static_cast<Eigen::Index>(e.count));
}

std::vector<int64_t> TensorStore::shape(const std::string& name) const {
    return entry(name).shape;
}

void TensorWriter::add(const std::string& name, const Mat& m) {
    Pending p;
    p.name = name;
    p.shape = {m.rows(), m.cols()};
    p.data.assign(m.data(), m.data() + m.size());
    tensors_.push_back(std::move(p));
}

void TensorWriter::add(const std::string& name, const Vec& v) {
    Pending p;
    p.name = name;
    p.shape = {v.size()};
    p.data.assign(v.data(), v.data() + v.size());
    tensors_.push_back(std::move(p));
}

void TensorWriter::add(const std::string& name, std::vector<int64_t> shape,
                       const std::vector<float>& data) {
    size_t count = 1;
    for (int64_t d : shape) count *= static_cast<size_t>(d);
    FADE_CHECK(count == data.size(), ErrorCode::invalid_argument,
               "tensor %s: shape/data size mismatch", name.c_str());
    tensors_.push_back(Pending{name, std::move(shape), data});
}

void TensorWriter::write(const std::string& path) const {
    std::vector<float> data;
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& t : tensors_) {
        tensors[t.name] = {{"shape", t.shape}, {"offset", data.size()}, {"dtype", "f32"}};
        data.insert(data.end(), t.data.begin(), t.data.end());
    }
    nlohmann::json header = {
        {"format_version", 1},
        {"model", model_meta_},
        {"tensors", tensors},
        {"data_sha256", sha256_hex(data.data(), data.size() * sizeof(float))},
    };
    if (!tokenizer_meta_.empty()) header["tokenizer"] = tokenizer_meta_;

    std::ofstream out(path, std::ios::binary);
    FADE_CHECK(out.good(), ErrorCode::io, "cannot write weight file: %s", path.c_str());
    std::string header_str = header.dump();
    out.write(TensorStore::kMagic, 8);
    write_u64_le(out, header_str.size());
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    FADE_CHECK(out.good(), ErrorCode::io, "write failed: %s", path.c_str());
}

}  // namespace fade
