#pragma once

// Minimal safetensors archive support: 8-byte little-endian header length,
// JSON header mapping tensor name -> {dtype, shape, data_offsets}, then a flat
// byte buffer. F32 and F64 payloads are accepted and surfaced as doubles.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerlens/common.hpp"

namespace layerlens {

struct tensor_entry {
    std::vector<size_t> shape;
    std::vector<double> data;  // row-major

    size_t numel() const {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return n;
    }
};

class tensor_archive {
public:
    // name -> tensor; insertion order irrelevant, lookups by exact name.
    std::map<std::string, tensor_entry> tensors;

    bool contains(const std::string& name) const { return tensors.count(name) != 0; }

    const tensor_entry& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw data_error("safetensors: missing tensor '" + name + "'");
        return it->second;
    }

    const tensor_entry& at(const std::string& name, const std::vector<size_t>& shape) const {
        const tensor_entry& t = at(name);
        if (t.shape != shape) {
            std::string want, got;
            for (size_t d : shape) want += (want.empty() ? "" : "x") + std::to_string(d);
            for (size_t d : t.shape) got += (got.empty() ? "" : "x") + std::to_string(d);
            throw data_error("safetensors: tensor '" + name + "' has shape [" + got +
                             "], expected [" + want + "]");
        }
        return t;
    }
};

namespace detail {

inline uint64_t read_le64(const char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(p[i]);
    return v;
}

inline void write_le64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

template <typename T>
inline void append_le(std::string& out, T v) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));  // host is little-endian on all supported targets
}

} // namespace detail

inline tensor_archive load_safetensors(const std::filesystem::path& path) {
    std::string blob = read_file(path);
    if (blob.size() < 8)
        throw data_error("safetensors: file too short: " + path.string());
    uint64_t header_len = detail::read_le64(blob.data());
    if (header_len > blob.size() - 8)
        throw data_error("safetensors: header length exceeds file size: " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(blob.substr(8, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("safetensors: malformed JSON header: ") + e.what());
    }
    if (!header.is_object())
        throw data_error("safetensors: header is not a JSON object");

    const char* payload = blob.data() + 8 + header_len;
    size_t payload_size = blob.size() - 8 - header_len;

    tensor_archive archive;
    for (auto it = header.begin(); it != header.end(); ++it) {
        const std::string& name = it.key();
        if (name == "__metadata__") continue;
        const nlohmann::json& meta = it.value();
        std::string dtype = meta.at("dtype").get<std::string>();
        if (dtype != "F32" && dtype != "F64")
            throw data_error("safetensors: tensor '" + name + "' has unsupported dtype " + dtype);
        size_t elem_size = dtype == "F32" ? 4 : 8;

        tensor_entry t;
        size_t numel = 1;
        for (const auto& d : meta.at("shape")) {
            size_t dim = d.get<size_t>();
            t.shape.push_back(dim);
            numel *= dim;
        }
        auto offsets = meta.at("data_offsets");
        size_t begin = offsets.at(0).get<size_t>();
        size_t end = offsets.at(1).get<size_t>();
        if (end < begin || end > payload_size || end - begin != numel * elem_size)
            throw data_error("safetensors: tensor '" + name + "' has inconsistent data_offsets");

        t.data.resize(numel);
        const char* src = payload + begin;
        if (dtype == "F32") {
            for (size_t i = 0; i < numel; ++i) {
                float f;
                std::memcpy(&f, src + 4 * i, 4);
                t.data[i] = static_cast<double>(f);
            }
        } else {
            std::memcpy(t.data.data(), src, numel * 8);
        }
        archive.tensors.emplace(name, std::move(t));
    }
    return archive;
}

// Shape/dtype description of one archive entry, read without touching the
// tensor payload (schema validation of multi-hundred-MB files stays cheap).
struct tensor_info {
    std::string dtype;
    std::vector<size_t> shape;
};

inline std::map<std::string, tensor_info> safetensors_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("safetensors: cannot open " + path.string());
    char len_buf[8];
    if (!in.read(len_buf, 8))
        throw data_error("safetensors: file too short: " + path.string());
    uint64_t header_len = detail::read_le64(len_buf);
    if (header_len > (1ull << 31))
        throw data_error("safetensors: implausible header length in " + path.string());
    std::string head(header_len, '\0');
    if (!in.read(head.data(), static_cast<std::streamsize>(header_len)))
        throw data_error("safetensors: truncated header in " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(head);
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("safetensors: malformed JSON header: ") + e.what());
    }
    if (!header.is_object())
        throw data_error("safetensors: header is not a JSON object");
    std::map<std::string, tensor_info> out;
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == "__metadata__") continue;
        tensor_info info;
        info.dtype = it.value().at("dtype").get<std::string>();
        for (const auto& d : it.value().at("shape")) info.shape.push_back(d.get<size_t>());
        out.emplace(it.key(), std::move(info));
    }
    return out;
}

// Writes an F32 archive (F64 when `f64` is set). Used by tests and by the
// tuned-lens translator tooling; deterministic: names are emitted sorted.
inline void save_safetensors(const std::filesystem::path& path, const tensor_archive& archive,
                             bool f64 = false) {
    nlohmann::ordered_json header = nlohmann::ordered_json::object();
    size_t elem_size = f64 ? 8 : 4;
    size_t offset = 0;
    for (const auto& [name, t] : archive.tensors) {
        nlohmann::ordered_json meta;
        meta["dtype"] = f64 ? "F64" : "F32";
        meta["shape"] = t.shape;
        meta["data_offsets"] = {offset, offset + t.numel() * elem_size};
        header[name] = meta;
        offset += t.numel() * elem_size;
    }
    std::string head = header.dump();
    std::string out;
    out.reserve(8 + head.size() + offset);
    detail::write_le64(out, head.size());
    out += head;
    for (const auto& [name, t] : archive.tensors) {
        if (f64) {
            for (double v : t.data) detail::append_le(out, v);
        } else {
            for (double v : t.data) detail::append_le(out, static_cast<float>(v));
        }
    }
    write_file_atomic(path, out);
}

} // namespace layerlens
