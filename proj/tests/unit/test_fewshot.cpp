#include <doctest.h>

#include <set>
#include <thread>

// Eigen must come before httplib, whose resolver header defines _res.
#include "civic/error.hpp"
#include "civic/fewshot.hpp"
#include "helpers.hpp"
#include "synthetic.hpp"

#include <httplib.h>
#include <json.hpp>

using namespace civic;
using namespace civic::fewshot;

namespace {

class ChatServer {
public:
    ChatServer() {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            last_auth = req.get_header_value("Authorization");
            last_body = nlohmann::json::parse(req.body);
            if (fail) {
                res.status = 500;
                res.set_content("boom", "text/plain");
                return;
            }
            res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", "C, D"}}}}}}}.dump(),
                            "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~ChatServer() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

    bool fail{false};
    std::string last_auth;
    nlohmann::json last_body;

private:
    httplib::Server server_;
    int port_{0};
    std::thread thread_;
};

}  // namespace

TEST_SUITE("fewshot") {
    TEST_CASE("sampling draws n distinct items per class") {
        const auto train = testing::keyword_dataset(200, 1);
        Rng rng(4);
        const auto ex = sample_examples(train, 3, rng);
        REQUIRE(ex.size() == 15);
        std::set<std::string> seen;
        for (std::size_t c = 0; c < kNumLevels; ++c)
            for (std::size_t k = 0; k < 3; ++k) {
                const auto& e = ex[c * 3 + k];
                CHECK(e.labels.test(c));
                seen.insert(e.abstract);
            }
        CHECK(seen.size() == 15);
        CHECK(sample_examples(train, 0, rng).empty());

        const auto few = testing::single_label_fixture(2, 1);
        try {
            sample_examples(few, 3, rng);
            FAIL("expected shortage");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find('A') != std::string::npos);
        }
    }

    TEST_CASE("prompt layout and determinism") {
        const auto train = testing::keyword_dataset(100, 2);
        Rng a(9), b(9);
        const PromptSpec s1{default_preamble(), sample_examples(train, 2, a), "target text here"};
        const PromptSpec s2{default_preamble(), sample_examples(train, 2, b), "target text here"};
        const auto p = build_prompt(s1);
        CHECK(p == build_prompt(s2));
        const auto defs = p.find("Evidence levels:");
        const auto examples = p.find("Examples:");
        const auto target = p.find("Target abstract:");
        CHECK(p.find(default_preamble()) == 0);
        CHECK(defs < examples);
        CHECK(examples < target);
        for (const auto& d : level_definitions()) CHECK(p.find(std::string(d.definition)) != std::string::npos);
        CHECK(extract_target_abstract(p) == "target text here");

        const PromptSpec zero{default_preamble(), {}, "x"};
        CHECK(build_prompt(zero).find("Examples:") == std::string::npos);
        CHECK_THROWS_AS(build_prompt(s1, 50), DataError);
        CHECK(estimate_tokens("one two  three") == 4);
        CHECK(estimate_tokens("") == 0);
    }

    TEST_CASE("response parsing") {
        CHECK(parse_response("C,D").labels == LabelVector::of({Level::C, Level::D}));
        CHECK(parse_response("Levels: B").labels == LabelVector::of({Level::B}));
        CHECK(parse_response("b and d").labels == LabelVector::of({Level::B, Level::D}));
        CHECK(parse_response("a B").labels == LabelVector::of({Level::B}));
        const auto none = parse_response("I cannot tell.");
        CHECK_FALSE(none.parseable);
        CHECK_FALSE(parse_response("F G").parseable);
        CHECK(parse_response("Evidence").labels == LabelVector{});
    }

    TEST_CASE("reduced test set") {
        const auto test = testing::keyword_dataset(200, 5);
        const auto r = reduce_test_set(test, 3, 1);
        REQUIRE(r.size() == 15);
        for (std::size_t c = 0; c < kNumLevels; ++c)
            for (std::size_t k = 0; k < 3; ++k) CHECK(r[c * 3 + k].labels.test(c));
        CHECK(r.front().abstract == reduce_test_set(test, 3, 1).front().abstract);
        CHECK_THROWS_AS(reduce_test_set(testing::single_label_fixture(1, 1), 2, 1), DataError);
    }

    TEST_CASE("oracle and constant mocks") {
        const auto train = testing::single_label_fixture(6, 1);
        const auto test = testing::single_label_fixture(4, 2);
        FewShotOptions o;
        o.shots = {0, 2};
        o.repetitions = 2;
        auto oracle = oracle_client(test);
        const auto perfect = evaluate_fewshot(*oracle, train, test, o);
        REQUIRE(perfect.size() == 2);
        for (const auto& s : perfect) {
            CHECK(s.successful == 2);
            CHECK(s.mean.weighted_f1 == doctest::Approx(1.0));
        }
        auto constant = constant_client("B");
        const auto flat = evaluate_fewshot(*constant, train, test, o);
        CHECK(flat[0].mean.f1[1] == doctest::Approx(1.0 / 3));
        CHECK(flat[0].mean.f1[0] == 0.0);
        CHECK(flat[0].mean.weighted_f1 == doctest::Approx(1.0 / 15));
    }

    TEST_CASE("failing client marks repetitions failed") {
        const auto train = testing::single_label_fixture(3, 1);
        const auto test = testing::single_label_fixture(1, 2);
        int calls = 0;
        MockClient flaky([&](const std::string&) -> std::string {
            if (++calls == 1) throw ClientError("rate limited");
            return "A";
        });
        FewShotOptions o;
        o.shots = {1};
        o.repetitions = 2;
        testing::WarningCapture w;
        const auto r = evaluate_fewshot(flaky, train, test, o);
        REQUIRE(r[0].repetitions.size() == 2);
        CHECK(r[0].repetitions[0].failed);
        CHECK_FALSE(r[0].repetitions[1].failed);
        CHECK(r[0].successful == 1);
        CHECK_FALSE(w.messages.empty());
    }

    TEST_CASE("HTTP chat client") {
        ChatServer server;
        LiveClientConfig c;
        c.endpoint = server.url();
        c.model = "test-model";
        c.api_key = "secret";
        c.timeout = std::chrono::seconds(5);
        HttpChatClient client(c);
        CHECK(client.complete("hello") == "C, D");
        CHECK(server.last_auth == "Bearer secret");
        CHECK(server.last_body["model"] == "test-model");
        CHECK(server.last_body["temperature"] == 0.0);
        CHECK(server.last_body["messages"][0]["content"] == "hello");
        server.fail = true;
        CHECK_THROWS_AS(client.complete("hello"), ClientError);
        c.endpoint = "not a url";
        CHECK_THROWS_AS(HttpChatClient(c).complete("x"), ClientError);
    }
}
