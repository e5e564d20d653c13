#include "mmpath/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace mmpath {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'P', '1'};

nlohmann::json build_header(const ParamStore<float>& store, const CheckpointMeta& meta) {
    nlohmann::json header;
    header["format_version"] = meta.format_version;
    header["config"] = meta.config;
    header["extras"] = meta.extras;
    nlohmann::json vocab = nlohmann::json::object();
    for (size_t i = 0; i < meta.vocab.size(); ++i) {
        vocab[std::to_string(meta.vocab[i])] = i;
    }
    header["vocab"] = vocab;
    header["rng_state"] = meta.rng_state;
    nlohmann::json manifest = nlohmann::json::array();
    int64_t offset = 0;
    for (int i = 0; i < store.count(); ++i) {
        const auto& v = store.value(i);
        manifest.push_back({{"name", store.name(i)},
                            {"shape", {v.rows(), v.cols()}},
                            {"offset", offset}});
        offset += v.size();
    }
    header["manifest"] = manifest;
    return header;
}

} // namespace

void save_checkpoint(const std::filesystem::path& file, const ParamStore<float>& store,
                     const CheckpointMeta& meta) {
    std::ofstream f(file, std::ios::binary);
    if (!f) throw InputError("cannot write checkpoint: " + file.string());
    std::string header = build_header(store, meta).dump();
    uint64_t header_len = header.size();
    f.write(kMagic, 4);
    f.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (int i = 0; i < store.count(); ++i) {
        const auto& v = store.value(i);
        // row-major payload
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            for (Eigen::Index c = 0; c < v.cols(); ++c) {
                float x = v(r, c);
                f.write(reinterpret_cast<const char*>(&x), sizeof(float));
            }
        }
    }
    if (!f) throw InputError("checkpoint write failed: " + file.string());
}

namespace {

nlohmann::json read_header(std::ifstream& f, const std::filesystem::path& file) {
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) {
        throw InputError("not a checkpoint file (bad magic): " + file.string());
    }
    uint64_t header_len = 0;
    f.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header(header_len, '\0');
    f.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!f) throw InputError("truncated checkpoint header: " + file.string());
    return nlohmann::json::parse(header);
}

CheckpointMeta meta_from_header(const nlohmann::json& header) {
    CheckpointMeta meta;
    meta.format_version = header.at("format_version").get<int>();
    if (meta.format_version != 1) {
        throw InputError("unsupported checkpoint format version " +
                         std::to_string(meta.format_version));
    }
    meta.config = header.at("config");
    meta.extras = header.at("extras");
    meta.rng_state = header.at("rng_state").get<std::string>();
    const auto& vocab = header.at("vocab");
    meta.vocab.resize(vocab.size());
    for (const auto& [key, idx] : vocab.items()) {
        size_t i = idx.get<size_t>();
        if (i >= meta.vocab.size()) throw InputError("checkpoint vocab index out of range");
        meta.vocab[i] = static_cast<NodeId>(std::stol(key));
    }
    return meta;
}

} // namespace

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& file) {
    std::ifstream f(file, std::ios::binary);
    if (!f) throw InputError("cannot open checkpoint: " + file.string());
    return meta_from_header(read_header(f, file));
}

CheckpointMeta load_checkpoint(const std::filesystem::path& file, ParamStore<float>& store) {
    std::ifstream f(file, std::ios::binary);
    if (!f) throw InputError("cannot open checkpoint: " + file.string());
    nlohmann::json header = read_header(f, file);
    CheckpointMeta meta = meta_from_header(header);

    std::streampos payload_start = f.tellg();
    const auto& manifest = header.at("manifest");
    if (static_cast<int>(manifest.size()) != store.count()) {
        throw InputError("checkpoint has " + std::to_string(manifest.size()) +
                         " parameters, model expects " + std::to_string(store.count()));
    }
    for (const auto& entry : manifest) {
        std::string name = entry.at("name").get<std::string>();
        Eigen::Index rows = entry.at("shape").at(0).get<Eigen::Index>();
        Eigen::Index cols = entry.at("shape").at(1).get<Eigen::Index>();
        int64_t offset = entry.at("offset").get<int64_t>();
        if (!store.has(name)) throw InputError("checkpoint parameter not in model: " + name);
        auto& v = store.value(name);
        if (v.rows() != rows || v.cols() != cols) {
            throw InputError("shape mismatch for parameter " + name);
        }
        f.seekg(payload_start + static_cast<std::streamoff>(offset * static_cast<int64_t>(sizeof(float))));
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                float x;
                f.read(reinterpret_cast<char*>(&x), sizeof(float));
                v(r, c) = x;
            }
        }
        if (!f) throw InputError("truncated checkpoint payload at parameter " + name);
    }
    return meta;
}

} // namespace mmpath
