#include "civic/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "civic/error.hpp"

namespace civic::neural {
namespace {

constexpr std::array<char, 8> kMagic{'C', 'I', 'V', 'I', 'C', 'K', 'P', 'T'};

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

nlohmann::ordered_json config_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["num_blocks"] = c.num_blocks;
    j["context_width"] = c.context_width;
    j["embed_dim"] = c.embed_dim;
    j["hidden_dim"] = c.hidden_dim;
    j["num_heads"] = c.num_heads;
    j["vocab_size"] = c.vocab_size;
    j["num_labels"] = c.num_labels;
    j["activation"] = "gelu";
    return j;
}

ModelConfig parse_config(const nlohmann::json& j) {
    ModelConfig c;
    const auto read = [&](const char* key, int& field) {
        if (auto it = j.find(key); it != j.end()) field = it->get<int>();
    };
    read("num_blocks", c.num_blocks);
    read("context_width", c.context_width);
    read("embed_dim", c.embed_dim);
    read("hidden_dim", c.hidden_dim);
    read("num_heads", c.num_heads);
    read("vocab_size", c.vocab_size);
    read("num_labels", c.num_labels);
    if (auto it = j.find("activation"); it != j.end() && it->get<std::string>() != "gelu") throw DataError("only the gelu activation is supported");
    c.validate();
    return c;
}

// Allocates a parameter set with the right shapes for a config.
Parameters shaped(const ModelConfig& config) { return init_model(config, 0).params; }

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(2); }

ModelConfig config_from_json(const std::string& text) {
    try {
        return parse_config(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed model config: ") + e.what());
    }
}

void save_checkpoint(std::ostream& out, const EncoderModel& model) {
    nlohmann::ordered_json header;
    header["format_version"] = kCheckpointFormatVersion;
    header["config"] = config_json(model.config);
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    model.params.for_each([&](const std::string& name, const Matrix& m) {
        tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}});
    });
    header["tensors"] = std::move(tensors);
    const std::string text = header.dump();

    out.write(kMagic.data(), kMagic.size());
    const std::uint64_t len = to_little(static_cast<std::uint64_t>(text.size()));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    model.params.for_each([&](const std::string&, const Matrix& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i])));
            out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
        }
    });
    if (!out) throw DataError("failed writing checkpoint");
}

EncoderModel load_checkpoint(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw DataError("not a checkpoint file (bad magic)");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    len = to_little(len);
    if (!in || len > (1u << 26)) throw DataError("corrupt checkpoint header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("truncated checkpoint header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header is not JSON: ") + e.what());
    }
    if (header.value("format_version", 0) != kCheckpointFormatVersion) throw DataError("unsupported checkpoint format version");

    EncoderModel model;
    model.config = parse_config(header.at("config"));
    model.params = shaped(model.config);
    const auto& declared = header.at("tensors");
    std::size_t index = 0;
    model.params.for_each([&](const std::string& name, Matrix& m) {
        if (index >= declared.size()) throw DataError("checkpoint declares too few tensors");
        const auto& t = declared[index++];
        if (t.at("name").get<std::string>() != name) throw DataError("checkpoint tensor order mismatch at '" + name + "'");
        const auto shape = t.at("shape").get<std::array<Eigen::Index, 2>>();
        if (shape[0] != m.rows() || shape[1] != m.cols()) throw DataError("checkpoint tensor '" + name + "' has unexpected shape");
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            std::uint32_t bits = 0;
            in.read(reinterpret_cast<char*>(&bits), sizeof(bits));
            m.data()[i] = static_cast<double>(std::bit_cast<float>(to_little(bits)));
        }
    });
    if (index != declared.size()) throw DataError("checkpoint declares extra tensors");
    if (!in) throw DataError("truncated checkpoint tensor data");
    return model;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    save_checkpoint(out, model);
}

EncoderModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    return load_checkpoint(in);
}

}  // namespace civic::neural
