#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "helpers.hpp"
#include "synthetic.hpp"

using civic::testing::TempDir;
namespace cli = civic::cli;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run civic_run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string read(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

const std::vector<std::string> kTinyModel{"--blocks", "1", "--context", "32", "--embed", "8", "--hidden", "16", "--heads", "2"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("usage errors") {
        CHECK(civic_run({}).code == cli::kUsage);
        CHECK(civic_run({"no-such-command"}).code == cli::kUsage);
        CHECK(civic_run({"ingest"}).code == cli::kUsage);
        CHECK(civic_run({"--help"}).code == cli::kOk);
        CHECK(civic_run({"ingest", "--out", "x.jsonl", "--ratios", "1,2"}).code == cli::kUsage);
    }

    TEST_CASE("data errors") {
        TempDir dir("cli_data");
        write(dir / "bad.json", "{not json");
        CHECK(civic_run({"ingest", "--from-fixture", (dir / "bad.json").string(), "--out", (dir / "s.jsonl").string()}).code == cli::kDataError);
        write(dir / "few.json", civic::testing::evidence_nodes_json(3, 1));
        CHECK(civic_run({"ingest", "--from-fixture", (dir / "few.json").string(), "--out", (dir / "s.jsonl").string()}).code == cli::kDataError);
    }

    TEST_CASE("toy pipeline end to end") {
        TempDir dir("cli_pipeline");
        const auto p = [&](const std::string& f) { return (dir / f).string(); };
        write(dir / "nodes.json", civic::testing::evidence_nodes_json(300, 4));

        auto r = civic_run({"ingest", "--from-fixture", p("nodes.json"), "--out", p("split.jsonl"), "--seed", "3"});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
        CHECK(std::filesystem::exists(dir / "split.stats.txt"));
        CHECK(std::filesystem::exists(dir / "split.manifest.json"));
        const auto first_split = read(dir / "split.jsonl");
        r = civic_run({"ingest", "--from-fixture", p("nodes.json"), "--out", p("split2.jsonl"), "--seed", "3"});
        CHECK(read(dir / "split2.jsonl") == first_split);

        r = civic_run({"tokenizer", "train", "--corpus", p("split.jsonl"), "--size", "200", "--out", p("vocab.txt")});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);

        r = civic_run({"baseline", "train", "--data", p("split.jsonl"), "--out", p("baseline.json")});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
        r = civic_run({"baseline", "eval", "--data", p("split.jsonl"), "--model", p("baseline.json"), "--out", p("baseline.csv")});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
        const auto csv = read(dir / "baseline.csv");
        CHECK(csv.rfind("model,F1_A,F1_B,F1_C,F1_D,F1_E,weighted_F1\n", 0) == 0);
        CHECK(std::filesystem::exists(dir / "baseline.predictions.jsonl"));

        write(dir / "pretrain.toml", "[pretrain]\nsteps = 4\nbatch = 4\n");
        r = civic_run(concat({"pretrain", "--config", p("pretrain.toml"), "--corpus", p("split.jsonl"), "--vocab", p("vocab.txt"), "--out",
                              p("pre.ckpt"), "--accum", "1", "--warmup", "1", "--lr", "1e-3"},
                             kTinyModel));
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
        {
            const auto trace = read(dir / "pre.loss.csv");
            CHECK(std::count(trace.begin(), trace.end(), '\n') == 5);
        }

        r = civic_run({"extend-context", "--in", p("pre.ckpt"), "--out", p("pre64.ckpt"), "--factor", "2"});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);

        r = civic_run({"finetune", "--data", p("split.jsonl"), "--vocab", p("vocab.txt"), "--init", p("pre64.ckpt"), "--out", p("ft.ckpt"),
                       "--epochs", "1", "--lr", "1e-3", "--batch", "16", "--seeds", "0"});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
        const auto ckpt = read(dir / "ft.ckpt");
        r = civic_run({"finetune", "--data", p("split.jsonl"), "--vocab", p("vocab.txt"), "--init", p("pre64.ckpt"), "--out", p("ft_again.ckpt"),
                       "--epochs", "1", "--lr", "1e-3", "--batch", "16", "--seeds", "0"});
        REQUIRE(r.code == cli::kOk);
        CHECK(read(dir / "ft_again.ckpt") == ckpt);

        r = civic_run(concat({"grid-search", "--data", p("split.jsonl"), "--vocab", p("vocab.txt"), "--out", p("grid.txt"), "--epochs", "1",
                              "--seeds", "0", "--grid-lrs", "1e-3", "--grid-batches", "16"},
                             kTinyModel));
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
        CHECK(read(dir / "grid.txt").find('*') != std::string::npos);

        r = civic_run({"calibrate", "--data", p("split.jsonl"), "--ckpt", p("ft.ckpt"), "--vocab", p("vocab.txt"), "--out", p("thr.json")});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);

        r = civic_run({"evaluate", "--data", p("split.jsonl"), "--ckpt", p("ft.ckpt"), "--vocab", p("vocab.txt"), "--thresholds", p("thr.json"),
                       "--out", p("eval.csv")});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
        CHECK(std::filesystem::exists(dir / "eval.0.predictions.jsonl"));
        const auto eval_csv = read(dir / "eval.csv");
        CHECK(eval_csv.rfind("model,F1_A,F1_B,F1_C,F1_D,F1_E,weighted_F1\n", 0) == 0);

        r = civic_run({"evaluate", "--predictions", p("eval.0.predictions.jsonl"), p("baseline.predictions.jsonl"), "--out", p("both.csv")});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);

        r = civic_run({"report", "--compare", p("eval.0.predictions.jsonl"), p("baseline.predictions.jsonl"), "--names", "encoder,tfidf",
                       "--split", p("split.jsonl"), "--out", p("report.txt")});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
        CHECK(read(dir / "report.txt").find("tfidf") != std::string::npos);
        CHECK(std::filesystem::exists(dir / "report.overlap.csv"));
        CHECK(civic_run({"report", "--compare", p("baseline.predictions.jsonl"), "--out", p("r2.txt")}).code == cli::kUsage);

        r = civic_run({"explain", "--ckpt", p("ft.ckpt"), "--vocab", p("vocab.txt"), "--data", p("split.jsonl"), "--class", "B", "--steps", "8",
                       "--items", "2", "--k", "3", "--out", p("ig.jsonl")});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
        {
            std::istringstream lines(read(dir / "ig.jsonl"));
            std::string line;
            int n = 0;
            while (std::getline(lines, line)) {
                const auto j = nlohmann::json::parse(line);
                CHECK(j["class"] == "B");
                CHECK(j["residual"].get<double>() < 0.05);
                ++n;
            }
            CHECK(n == 2);
        }

        r = civic_run({"fewshot", "--data", p("split.jsonl"), "--client", "mock", "--mock", "oracle", "--shots", "0,1", "--repetitions", "1",
                       "--per-level", "1", "--out", p("fs.jsonl")});
        REQUIRE_MESSAGE(r.code == cli::kOk, r.err);
        CHECK(read(dir / "fs.metrics.csv").find("0-shot,100.0000,100.0000,100.0000,100.0000,100.0000,100.0000") != std::string::npos);

        const auto manifest = nlohmann::json::parse(read(dir / "eval.manifest.json"));
        CHECK(manifest["command"] == "evaluate");
        CHECK_FALSE(manifest["inputs"].empty());
    }

    TEST_CASE("numeric failure exit code") {
        TempDir dir("cli_numeric");
        const auto p = [&](const std::string& f) { return (dir / f).string(); };
        write(dir / "corpus.txt", "alpha beta gamma delta\nbeta gamma delta alpha\ngamma alpha beta delta\n");
        REQUIRE(civic_run({"tokenizer", "train", "--corpus", p("corpus.txt"), "--size", "30", "--out", p("v.txt")}).code == cli::kOk);
        const auto r = civic_run(concat({"pretrain", "--corpus", p("corpus.txt"), "--vocab", p("v.txt"), "--out", p("m.ckpt"), "--steps", "20",
                                         "--batch", "2", "--accum", "1", "--warmup", "0", "--lr", "1e300", "--clip", "0", "--heldout", "0"},
                                        kTinyModel));
        CHECK(r.code == cli::kNumericError);
    }
}
