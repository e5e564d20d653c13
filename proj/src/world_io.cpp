#include "mmpath/world_io.hpp"

#include <fstream>

#include <json.hpp>

namespace mmpath {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
    std::ofstream f(p, mode);
    if (!f) throw InputError("cannot open for writing: " + p.string());
    return f;
}

std::ifstream open_in(const fs::path& p, std::ios::openmode mode = std::ios::in) {
    std::ifstream f(p, mode);
    if (!f) throw InputError("cannot open: " + p.string());
    return f;
}

std::string tile_file_name(TileId id) {
    return "tile_" + std::to_string(id) + ".bin";
}

// Fixed-precision float formatting so re-serialization is byte-stable.
std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void save_world(const World& world, const fs::path& dir) {
    fs::create_directories(dir / "rasters");

    {
        auto f = open_out(dir / "network.jsonl");
        for (const auto& n : world.network.nodes) {
            f << "{\"kind\":\"node\",\"id\":" << n.id << ",\"x\":" << num(n.x)
              << ",\"y\":" << num(n.y) << "}\n";
        }
        for (const auto& e : world.network.edges) {
            f << "{\"kind\":\"edge\",\"u\":" << e.u << ",\"v\":" << e.v << "}\n";
        }
    }

    {
        json manifest;
        manifest["origin"] = {world.grid.origin_x, world.grid.origin_y};
        manifest["meters_per_pixel"] = world.grid.meters_per_pixel;
        manifest["r"] = world.grid.r;
        manifest["c"] = world.grid.channels;
        manifest["cols"] = world.grid.cols;
        manifest["rows"] = world.grid.rows;
        json tiles = json::array();
        for (TileId id = 0; id < world.grid.tile_count(); ++id) {
            tiles.push_back("rasters/" + tile_file_name(id));
        }
        manifest["tiles"] = tiles;
        auto f = open_out(dir / "tiles.json");
        f << manifest.dump(2) << "\n";
    }

    for (TileId id = 0; id < world.grid.tile_count(); ++id) {
        auto f = open_out(dir / "rasters" / tile_file_name(id), std::ios::binary);
        const Raster& ras = world.rasters[static_cast<size_t>(id)];
        f.write(reinterpret_cast<const char*>(ras.data()), static_cast<std::streamsize>(ras.size()));
    }

    {
        auto f = open_out(dir / "paths.jsonl");
        for (const auto& p : world.paths) {
            f << "{\"path_id\":" << p.path_id << ",\"nodes\":[";
            for (size_t i = 0; i < p.nodes.size(); ++i) {
                if (i) f << ",";
                f << p.nodes[i];
            }
            f << "]}\n";
        }
    }
}

World load_world(const fs::path& dir) {
    World w;

    {
        auto f = open_in(dir / "network.jsonl");
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            json rec = json::parse(line);
            std::string kind = rec.at("kind");
            if (kind == "node") {
                w.network.nodes.push_back({rec.at("id").get<NodeId>(), rec.at("x").get<double>(),
                                           rec.at("y").get<double>()});
            } else if (kind == "edge") {
                w.network.edges.push_back({rec.at("u").get<NodeId>(), rec.at("v").get<NodeId>()});
            } else {
                throw InputError("network.jsonl: unknown record kind '" + kind + "'");
            }
        }
    }

    std::vector<std::string> tile_files;
    {
        auto f = open_in(dir / "tiles.json");
        json manifest = json::parse(f);
        w.grid.origin_x = manifest.at("origin").at(0).get<double>();
        w.grid.origin_y = manifest.at("origin").at(1).get<double>();
        w.grid.meters_per_pixel = manifest.at("meters_per_pixel").get<double>();
        w.grid.r = manifest.at("r").get<int>();
        w.grid.channels = manifest.at("c").get<int>();
        w.grid.cols = manifest.at("cols").get<int>();
        w.grid.rows = manifest.at("rows").get<int>();
        for (const auto& t : manifest.at("tiles")) tile_files.push_back(t.get<std::string>());
    }
    if (tile_files.size() != static_cast<size_t>(w.grid.tile_count())) {
        throw InputError("tiles.json lists " + std::to_string(tile_files.size()) + " rasters, expected " +
                         std::to_string(w.grid.tile_count()));
    }
    size_t raster_len = static_cast<size_t>(w.grid.r) * w.grid.r * w.grid.channels;
    for (const auto& name : tile_files) {
        auto f = open_in(dir / name, std::ios::binary);
        Raster ras(raster_len);
        f.read(reinterpret_cast<char*>(ras.data()), static_cast<std::streamsize>(raster_len));
        if (static_cast<size_t>(f.gcount()) != raster_len) {
            throw InputError("raster too short: " + name);
        }
        w.rasters.push_back(std::move(ras));
    }

    {
        auto f = open_in(dir / "paths.jsonl");
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            json rec = json::parse(line);
            RoadPath p;
            p.path_id = rec.at("path_id").get<int>();
            for (const auto& n : rec.at("nodes")) p.nodes.push_back(n.get<NodeId>());
            w.paths.push_back(std::move(p));
        }
    }

    w.validate();
    return w;
}

void save_labels(const LabelSet& labels, const fs::path& file) {
    auto f = open_out(file);
    f << "path_id,travel_time_s,ranking_score\n";
    for (const auto& [pid, lab] : labels) {
        f << pid << "," << num(lab.travel_time_s) << "," << num(lab.ranking_score) << "\n";
    }
}

LabelSet load_labels(const fs::path& file) {
    auto f = open_in(file);
    std::string line;
    if (!std::getline(f, line)) throw InputError("labels file is empty: " + file.string());
    if (line != "path_id,travel_time_s,ranking_score") {
        throw InputError("labels file has unexpected header: " + line);
    }
    LabelSet labels;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        size_t c1 = line.find(',');
        size_t c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            throw InputError("malformed labels row: " + line);
        }
        int pid = std::stoi(line.substr(0, c1));
        labels[pid] = {std::stod(line.substr(c1 + 1, c2 - c1 - 1)), std::stod(line.substr(c2 + 1))};
    }
    return labels;
}

void save_vocab(const std::vector<NodeId>& ids, const fs::path& file) {
    json vocab = json::object();
    for (size_t i = 0; i < ids.size(); ++i) {
        vocab[std::to_string(ids[i])] = i;
    }
    auto f = open_out(file);
    f << vocab.dump(2) << "\n";
}

std::vector<NodeId> load_vocab(const fs::path& file) {
    auto f = open_in(file);
    json vocab = json::parse(f);
    std::vector<NodeId> ids(vocab.size());
    for (const auto& [key, idx] : vocab.items()) {
        size_t i = idx.get<size_t>();
        if (i >= ids.size()) throw InputError("vocab index out of range in " + file.string());
        ids[i] = static_cast<NodeId>(std::stol(key));
    }
    return ids;
}

void save_f32_matrix(const std::vector<float>& data, int rows, int cols, const fs::path& file) {
    if (data.size() != static_cast<size_t>(rows) * cols) {
        throw DimensionError("f32 payload size does not match shape");
    }
    {
        auto f = open_out(file, std::ios::binary);
        f.write(reinterpret_cast<const char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(float)));
    }
    json sidecar;
    sidecar["shape"] = {rows, cols};
    auto f = open_out(fs::path(file.string() + ".json"));
    f << sidecar.dump() << "\n";
}

std::vector<float> load_f32_matrix(const fs::path& file, int& rows, int& cols) {
    {
        auto f = open_in(fs::path(file.string() + ".json"));
        json sidecar = json::parse(f);
        rows = sidecar.at("shape").at(0).get<int>();
        cols = sidecar.at("shape").at(1).get<int>();
    }
    auto f = open_in(file, std::ios::binary);
    std::vector<float> data(static_cast<size_t>(rows) * cols);
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (static_cast<size_t>(f.gcount()) != data.size() * sizeof(float)) {
        throw InputError("f32 payload shorter than sidecar shape: " + file.string());
    }
    return data;
}

} // namespace mmpath
