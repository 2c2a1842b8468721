#include "civic/manifest.hpp"

#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>
#include <json.hpp>

#include "civic/error.hpp"

namespace civic::manifest {
namespace {

using json = nlohmann::ordered_json;

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, md.data(), &len);
        std::ostringstream s;
        for (unsigned int i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
        return s.str();
    }

private:
    EVP_MD_CTX* ctx_;
};

json artifacts_json(const std::vector<Artifact>& a) {
    json arr = json::array();
    for (const auto& x : a) arr.push_back({{"path", x.path}, {"sha256", x.sha256}});
    return arr;
}

std::vector<Artifact> artifacts_from(const json& j) {
    std::vector<Artifact> out;
    for (const auto& x : j) out.push_back({x.at("path").get<std::string>(), x.at("sha256").get<std::string>()});
    return out;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
    Sha256 h;
    h.update(data.data(), data.size());
    return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    Sha256 h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

void RunManifest::add_input(const std::filesystem::path& p) { inputs.push_back({p.string(), sha256_file(p)}); }
void RunManifest::add_output(const std::filesystem::path& p) { outputs.push_back({p.string(), sha256_file(p)}); }

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

void write_manifest(std::ostream& out, const RunManifest& m) {
    json config = json::object();
    for (const auto& [k, v] : m.config) config[k] = v;
    const json j{{"command", m.command},     {"config", config},
                 {"seeds", m.seeds},         {"inputs", artifacts_json(m.inputs)},
                 {"outputs", artifacts_json(m.outputs)}, {"started_at", m.started_at},
                 {"finished_at", m.finished_at}};
    out << j.dump(2) << '\n';
}

RunManifest read_manifest(std::istream& in) {
    try {
        const json j = json::parse(in);
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        for (const auto& [k, v] : j.at("config").items()) m.config[k] = v.get<std::string>();
        m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        m.inputs = artifacts_from(j.at("inputs"));
        m.outputs = artifacts_from(j.at("outputs"));
        m.started_at = j.value("started_at", "");
        m.finished_at = j.value("finished_at", "");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("manifest: ") + e.what());
    }
}

}  // namespace civic::manifest
