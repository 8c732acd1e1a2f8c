#include "vqamoe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace vqamoe::checkpoint {

namespace {

using nlohmann::json;

static_assert(sizeof(double) == 8);

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * 8));
    } else {
        for (double d : v) {
            std::uint64_t bits;
            std::memcpy(&bits, &d, 8);
            char buf[8];
            for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
            out.write(buf, 8);
        }
    }
}

void read_doubles(std::ifstream& in, std::vector<double>& v) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    } else {
        for (double& d : v) {
            char buf[8];
            in.read(buf, 8);
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i)
                bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
            std::memcpy(&d, &bits, 8);
        }
    }
}

} // namespace

void save(const std::string& path_prefix, const std::vector<Parameter>& params) {
    std::ofstream bin(path_prefix + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("checkpoint: cannot write " + path_prefix + ".bin");
    json manifest;
    manifest["format"] = "vqamoe-checkpoint-v1";
    manifest["tensors"] = json::array();
    std::size_t offset = 0;
    std::map<std::string, bool> seen;
    for (const Parameter& p : params) {
        if (seen[p.name]) throw std::invalid_argument("checkpoint: duplicate name " + p.name);
        seen[p.name] = true;
        manifest["tensors"].push_back(
            {{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
        write_doubles(bin, p.tensor.data());
        offset += p.tensor.numel() * 8;
    }
    std::ofstream mf(path_prefix + ".json");
    if (!mf) throw std::runtime_error("checkpoint: cannot write " + path_prefix + ".json");
    mf << manifest.dump(2) << "\n";
}

void load(const std::string& path_prefix, std::vector<Parameter>& params) {
    std::ifstream mf(path_prefix + ".json");
    if (!mf) throw std::runtime_error("checkpoint: cannot open " + path_prefix + ".json");
    json manifest = json::parse(mf);

    struct Entry {
        std::vector<std::size_t> shape;
        std::size_t offset;
    };
    std::map<std::string, Entry> index;
    for (const auto& t : manifest.at("tensors")) {
        index[t.at("name").get<std::string>()] = {
            t.at("shape").get<std::vector<std::size_t>>(), t.at("offset").get<std::size_t>()};
    }

    std::ifstream bin(path_prefix + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("checkpoint: cannot open " + path_prefix + ".bin");
    for (Parameter& p : params) {
        auto it = index.find(p.name);
        if (it == index.end()) {
            throw std::runtime_error("checkpoint: missing tensor '" + p.name + "'");
        }
        if (it->second.shape != p.tensor.shape()) {
            throw std::runtime_error("checkpoint: shape mismatch for '" + p.name + "'");
        }
        bin.seekg(static_cast<std::streamoff>(it->second.offset));
        read_doubles(bin, p.tensor.data());
        if (!bin) throw std::runtime_error("checkpoint: truncated blob reading '" + p.name + "'");
    }
}

} // namespace vqamoe::checkpoint
