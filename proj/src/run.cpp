#include "scriptorium/run.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>

#include "json.hpp"
#include "scriptorium/errors.hpp"

namespace scriptorium {

using json = nlohmann::ordered_json;

namespace {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
    }
    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
    std::string hex() {
        unsigned char out[EVP_MAX_MD_SIZE];
        unsigned int n = 0;
        EVP_DigestFinal_ex(ctx_.get(), out, &n);
        static const char* digits = "0123456789abcdef";
        std::string s;
        for (unsigned i = 0; i < n; ++i) {
            s.push_back(digits[out[i] >> 4]);
            s.push_back(digits[out[i] & 15]);
        }
        return s;
    }

private:
    std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> ctx_;
};

json digests(const std::vector<FileDigest>& v) {
    json a = json::array();
    for (const auto& d : v) a.push_back({{"path", d.path}, {"sha256", d.sha256}});
    return a;
}

std::vector<FileDigest> read_digests(const json& a) {
    std::vector<FileDigest> v;
    for (const auto& d : a) v.push_back({d.at("path").get<std::string>(), d.at("sha256").get<std::string>()});
    return v;
}

json overrides_json(const RunManifest& m) {
    json a = json::array();
    for (const auto& [k, v] : m.overrides) a.push_back({k, v});
    return a;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
    Sha256 h;
    h.update(data.data(), data.size());
    return h.hex();
}

std::string file_sha256(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot read " + path.string(), 0);
    Sha256 h;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

std::string RunManifest::compute_run_id() const {
    json j;
    j["command"] = command;
    j["config"] = config_text;
    j["overrides"] = overrides_json(*this);
    j["inputs"] = digests(inputs);
    return sha256_hex(j.dump()).substr(0, 16);
}

std::string manifest_json(const RunManifest& m) {
    json j;
    j["run_id"] = m.run_id;
    j["command"] = m.command;
    j["config_text"] = m.config_text;
    j["config_dir"] = m.config_dir;
    j["overrides"] = overrides_json(m);
    j["seeds"] = m.seeds;
    j["inputs"] = digests(m.inputs);
    j["outputs"] = digests(m.outputs);
    j["model_id"] = m.model_id;
    j["started"] = m.started;
    j["finished"] = m.finished;
    return j.dump(2) + "\n";
}

RunManifest parse_manifest_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        RunManifest m;
        m.run_id = j.at("run_id").get<std::string>();
        m.command = j.at("command").get<std::string>();
        m.config_text = j.at("config_text").get<std::string>();
        m.config_dir = j.at("config_dir").get<std::string>();
        for (const auto& o : j.at("overrides")) m.overrides.emplace_back(o.at(0).get<std::string>(), o.at(1).get<std::string>());
        for (const auto& [k, v] : j.at("seeds").items()) m.seeds[k] = v.get<std::uint64_t>();
        m.inputs = read_digests(j.at("inputs"));
        m.outputs = read_digests(j.at("outputs"));
        m.model_id = j.at("model_id").get<std::string>();
        m.started = j.value("started", "");
        m.finished = j.value("finished", "");
        return m;
    } catch (const json::exception& e) {
        throw IngestionError(std::string("bad run manifest: ") + e.what(), 0);
    }
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace scriptorium
