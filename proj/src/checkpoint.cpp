#include "tog/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "tog/errors.hpp"

namespace tog {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

using nlohmann::json;

struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
};

std::vector<char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    in.seekg(0, std::ios::end);
    const std::streamoff len = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<char> buf(static_cast<std::size_t>(len));
    if (len > 0) in.read(buf.data(), len);
    if (!in) throw CheckpointError("failed reading checkpoint '" + path + "'");
    return buf;
}

std::vector<Entry> parse_header(const std::vector<char>& buf, const std::string& path,
                                std::size_t& data_start) {
    if (buf.size() < 4) throw CheckpointError("checkpoint '" + path + "' truncated: no header length");
    std::uint32_t header_len = 0;
    std::memcpy(&header_len, buf.data(), 4);
    if (buf.size() < 4u + header_len)
        throw CheckpointError("checkpoint '" + path + "' truncated: header incomplete");
    json header;
    try {
        header = json::parse(std::string(buf.data() + 4, header_len));
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint '" + path + "' has a malformed header: " + e.what());
    }
    data_start = 4u + header_len;
    const std::size_t data_len = buf.size() - data_start;

    std::vector<Entry> entries;
    for (const auto& p : header.at("params")) {
        Entry e;
        e.name = p.at("name").get<std::string>();
        e.shape = p.at("shape").get<Shape>();
        e.offset = p.at("offset").get<std::uint64_t>();
        const std::uint64_t bytes = numel_of(e.shape) * sizeof(float);
        if (e.offset + bytes > data_len) {
            throw CheckpointError("checkpoint '" + path + "' truncated: parameter '" + e.name +
                                  "' extends past end of file");
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace

void save_checkpoint(const Params& params, const std::string& path,
                     const std::function<bool(const std::string&)>& keep) {
    json list = json::array();
    std::uint64_t offset = 0;
    std::vector<const Tensor*> selected;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (keep && !keep(params.name(i))) continue;
        const Tensor& t = params.tensor(i);
        list.push_back({{"name", params.name(i)}, {"shape", t.shape}, {"offset", offset}});
        offset += t.numel() * sizeof(float);
        selected.push_back(&t);
    }
    const std::string header = json{{"params", list}}.dump();
    const std::uint32_t header_len = static_cast<std::uint32_t>(header.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out.write(reinterpret_cast<const char*>(&header_len), 4);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const Tensor* t : selected) {
        out.write(reinterpret_cast<const char*>(t->ptr()),
                  static_cast<std::streamsize>(t->numel() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
    const std::vector<char> buf = read_file(path);
    std::size_t data_start = 0;
    const auto entries = parse_header(buf, path, data_start);
    std::map<std::string, Tensor> out;
    for (const Entry& e : entries) {
        Tensor t = Tensor::zeros(e.shape);
        std::memcpy(t.ptr(), buf.data() + data_start + e.offset, t.numel() * sizeof(float));
        out.emplace(e.name, std::move(t));
    }
    return out;
}

std::size_t load_checkpoint_subset(Params& params, const std::string& path,
                                   const std::function<bool(const std::string&)>& want) {
    const std::vector<char> buf = read_file(path);
    std::size_t data_start = 0;
    const auto entries = parse_header(buf, path, data_start);

    // Validate everything up front; copy only after all checks pass.
    std::vector<std::pair<Tensor*, const Entry*>> plan;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.name(i);
        if (want && !want(name)) continue;
        const Entry* found = nullptr;
        for (const Entry& e : entries) {
            if (e.name == name) {
                found = &e;
                break;
            }
        }
        if (!found) throw CheckpointError("checkpoint '" + path + "' is missing parameter '" + name + "'");
        Tensor& t = params.tensor(i);
        if (found->shape != t.shape) {
            throw CheckpointError("checkpoint '" + path + "' shape mismatch for parameter '" + name +
                                  "': file has " + shape_str(found->shape) + ", model expects " +
                                  shape_str(t.shape));
        }
        plan.emplace_back(&t, found);
    }
    for (auto& [tensor, entry] : plan) {
        std::memcpy(tensor->ptr(), buf.data() + data_start + entry->offset,
                    tensor->numel() * sizeof(float));
    }
    return plan.size();
}

void load_checkpoint(Params& params, const std::string& path) {
    load_checkpoint_subset(params, path, nullptr);
}

}  // namespace tog
