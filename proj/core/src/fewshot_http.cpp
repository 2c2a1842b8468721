#include <cstdlib>
#include <regex>

#include <httplib.h>
#include <json.hpp>

#include "civic/fewshot.hpp"

namespace civic::fewshot {

LiveClientConfig LiveClientConfig::from_env() {
    const auto get = [](const char* name) {
        const char* v = std::getenv(name);
        if (!v || !*v) throw ClientError(std::string("environment variable ") + name + " is not set");
        return std::string(v);
    };
    LiveClientConfig c;
    c.endpoint = get("LLM_ENDPOINT");
    c.model = get("LLM_MODEL");
    c.api_key = get("LLM_API_KEY");
    return c;
}

HttpChatClient::HttpChatClient(LiveClientConfig config) : config_(std::move(config)) {}

std::string HttpChatClient::complete(const std::string& prompt) {
    static const std::regex pattern(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.endpoint, m, pattern)) throw ClientError("invalid endpoint URL: " + config_.endpoint);
    httplib::Client client(m[1].str());
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    const nlohmann::json request{{"model", config_.model},
                                 {"temperature", config_.temperature},
                                 {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    const httplib::Headers headers{{"Authorization", "Bearer " + config_.api_key}};
    auto res = client.Post(m[2].matched ? m[2].str() : std::string("/"), headers, request.dump(), "application/json");
    if (!res) throw ClientError("transport error: " + httplib::to_string(res.error()));
    if (res->status != 200) throw ClientError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    try {
        const auto body = nlohmann::json::parse(res->body);
        return body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ClientError(std::string("malformed completion response: ") + e.what());
    }
}

}  // namespace civic::fewshot
