#include <algorithm>
#include <regex>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "civic/ingest.hpp"

namespace civic::ingest {

const std::string_view kEvidenceQuery = R"(query EvidenceItems($first: Int, $after: String) {
  evidenceItems(first: $first, after: $after) {
    pageInfo { hasNextPage endCursor }
    nodes {
      id
      status
      evidenceLevel
      significance
      description
      molecularProfile { name }
      disease { name }
      therapies { name }
      source { citationId abstract }
    }
  }
})";

namespace {

using nlohmann::json;

std::string optional_string(const json& node, const char* key, const std::string& path) {
    const auto it = node.find(key);
    if (it == node.end() || it->is_null()) return {};
    if (!it->is_string()) throw ParseError(path + "." + key, "expected string");
    return it->get<std::string>();
}

std::string nested_name(const json& node, const char* key, const std::string& path) {
    const auto it = node.find(key);
    if (it == node.end() || it->is_null()) return {};
    if (!it->is_object()) throw ParseError(path + "." + key, "expected object");
    return optional_string(*it, "name", path + "." + key);
}

std::int64_t parse_integer(const json& value, const std::string& field) {
    if (value.is_number_integer()) return value.get<std::int64_t>();
    if (value.is_string()) {
        const auto text = value.get<std::string>();
        try {
            std::size_t used = 0;
            const auto v = std::stoll(text, &used);
            if (used == text.size()) return v;
        } catch (const std::exception&) {
        }
    }
    throw ParseError(field, "expected integer");
}

CurationStatus parse_status(const std::string& text) {
    std::string upper;
    for (char c : text) {
        if (c == ' ' || c == '_') continue;
        upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    if (upper == "ACCEPTED") return CurationStatus::Accepted;
    // The API reports items awaiting review as SUBMITTED.
    if (upper == "SUBMITTED" || upper == "UNDERREVIEW") return CurationStatus::UnderReview;
    return CurationStatus::Other;
}

RawEvidenceRecord parse_node(const json& node, const std::string& path) {
    if (!node.is_object()) throw ParseError(path, "expected object");
    RawEvidenceRecord r;
    const auto id = node.find("id");
    if (id == node.end() || id->is_null()) throw ParseError(path + ".id", "missing");
    r.evidence_id = parse_integer(*id, path + ".id");
    r.status = parse_status(optional_string(node, "status", path));
    const auto level_text = optional_string(node, "evidenceLevel", path);
    if (!level_text.empty()) {
        r.evidence_level = parse_level(level_text);
        if (!r.evidence_level) throw ParseError(path + ".evidenceLevel", "unknown level '" + level_text + "'");
    }
    r.significance = optional_string(node, "significance", path);
    r.molecular_profile = nested_name(node, "molecularProfile", path);
    r.disease = nested_name(node, "disease", path);
    if (const auto th = node.find("therapies"); th != node.end() && !th->is_null()) {
        if (!th->is_array()) throw ParseError(path + ".therapies", "expected array");
        for (std::size_t i = 0; i < th->size(); ++i) {
            const auto& t = (*th)[i];
            const std::string tpath = path + ".therapies[" + std::to_string(i) + "]";
            if (!t.is_object()) throw ParseError(tpath, "expected object");
            r.therapies.push_back(optional_string(t, "name", tpath));
        }
    }
    if (const auto src = node.find("source"); src != node.end() && !src->is_null()) {
        if (!src->is_object()) throw ParseError(path + ".source", "expected object");
        r.abstract = optional_string(*src, "abstract", path + ".source");
        if (const auto cid = src->find("citationId"); cid != src->end() && !cid->is_null())
            r.pubmed_id = parse_integer(*cid, path + ".source.citationId");
    }
    return r;
}

struct Page {
    std::vector<RawEvidenceRecord> records;
    bool has_next{false};
    std::optional<std::string> end_cursor;
};

const json& connection_of(const json& body) {
    const auto data = body.find("data");
    if (data == body.end() || !data->is_object()) throw ParseError("data", "missing GraphQL data object");
    const auto conn = data->find("evidenceItems");
    if (conn == data->end() || !conn->is_object()) throw ParseError("data.evidenceItems", "missing connection object");
    return *conn;
}

std::vector<RawEvidenceRecord> parse_nodes(const json& nodes, const std::string& path) {
    if (!nodes.is_array()) throw ParseError(path, "expected array");
    std::vector<RawEvidenceRecord> out;
    out.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) out.push_back(parse_node(nodes[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

Page parse_page(const std::string& text) {
    json body;
    try {
        body = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("<body>", e.what());
    }
    if (const auto errors = body.find("errors"); errors != body.end() && !errors->empty()) {
        throw ParseError("errors", errors->dump());
    }
    const json& conn = connection_of(body);
    Page page;
    const auto nodes = conn.find("nodes");
    if (nodes == conn.end()) throw ParseError("data.evidenceItems.nodes", "missing");
    page.records = parse_nodes(*nodes, "data.evidenceItems.nodes");
    const auto info = conn.find("pageInfo");
    if (info == conn.end() || !info->is_object()) throw ParseError("data.evidenceItems.pageInfo", "missing");
    const auto has_next = info->find("hasNextPage");
    if (has_next == info->end() || !has_next->is_boolean()) throw ParseError("data.evidenceItems.pageInfo.hasNextPage", "expected boolean");
    page.has_next = has_next->get<bool>();
    if (const auto cursor = info->find("endCursor"); cursor != info->end() && !cursor->is_null()) {
        if (!cursor->is_string()) throw ParseError("data.evidenceItems.pageInfo.endCursor", "expected string");
        page.end_cursor = cursor->get<std::string>();
    }
    if (page.has_next && !page.end_cursor) throw ParseError("data.evidenceItems.pageInfo.endCursor", "missing while hasNextPage is true");
    return page;
}

std::pair<std::string, std::string> split_url(const std::string& url) {
    static const std::regex pattern(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, pattern)) throw FetchError("invalid endpoint URL: " + url, std::nullopt, false);
    return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

}  // namespace

std::vector<RawEvidenceRecord> parse_evidence_json(std::string_view json_text) {
    json body;
    try {
        body = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError("<document>", e.what());
    }
    if (body.is_array()) return parse_nodes(body, "nodes");
    if (body.is_object() && body.contains("data")) {
        const json& conn = connection_of(body);
        const auto nodes = conn.find("nodes");
        if (nodes == conn.end()) throw ParseError("data.evidenceItems.nodes", "missing");
        return parse_nodes(*nodes, "data.evidenceItems.nodes");
    }
    if (body.is_object() && body.contains("nodes")) return parse_nodes(body["nodes"], "nodes");
    throw ParseError("<document>", "expected node array, {nodes: [...]}, or a GraphQL response");
}

std::vector<RawEvidenceRecord> fetch_evidence(const std::string& endpoint_url, int page_size, const FetchOptions& options) {
    if (page_size < 1) throw std::invalid_argument("page_size must be >= 1");
    const auto [base, path] = split_url(endpoint_url);
    httplib::Client client(base);
    client.set_connection_timeout(options.timeout);
    client.set_read_timeout(options.timeout);
    client.set_follow_location(true);

    std::vector<RawEvidenceRecord> records;
    std::optional<std::string> cursor = options.start_cursor;
    for (;;) {
        json request{{"query", kEvidenceQuery}, {"variables", {{"first", page_size}}}};
        request["variables"]["after"] = cursor ? json(*cursor) : json(nullptr);
        const std::string payload = request.dump();

        std::string failure;
        std::optional<std::string> body;
        for (int attempt = 0; attempt < std::max(1, options.max_attempts); ++attempt) {
            if (attempt > 0) std::this_thread::sleep_for(options.retry_backoff * attempt);
            auto res = client.Post(path, payload, "application/json");
            if (!res) {
                failure = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                failure = "server returned HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw FetchError("endpoint returned HTTP " + std::to_string(res->status), cursor, false);
            }
            body = res->body;
            break;
        }
        if (!body) throw FetchError(failure + " (cursor " + cursor.value_or("<start>") + ")", cursor, true);

        Page page = parse_page(*body);
        std::move(page.records.begin(), page.records.end(), std::back_inserter(records));
        if (!page.has_next) break;
        cursor = page.end_cursor;
    }

    std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.evidence_id < b.evidence_id; });
    const auto dup = std::unique(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.evidence_id == b.evidence_id; });
    records.erase(dup, records.end());
    return records;
}

}  // namespace civic::ingest
