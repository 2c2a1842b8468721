#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "civic/error.hpp"
#include "civic/labels.hpp"
#include "civic/manifest.hpp"
#include "civic/rng.hpp"
#include "helpers.hpp"

using namespace civic;

TEST_SUITE("core") {
    TEST_CASE("label vector letters round-trip") {
        auto v = LabelVector::of({Level::C, Level::D});
        CHECK(v.to_string() == "C,D");
        CHECK(v.count() == 2);
        CHECK(LabelVector{}.to_string().empty());
        CHECK(parse_level(" e ") == Level::E);
        CHECK_FALSE(parse_level("F").has_value());
        v |= LabelVector::of({Level::A});
        CHECK(v == LabelVector::of({Level::A, Level::C, Level::D}));
    }

    TEST_CASE("rng is reproducible and uniform_index stays in range") {
        Rng a(42), b(42);
        for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
        Rng r(1);
        std::set<std::uint64_t> seen;
        for (int i = 0; i < 1000; ++i) {
            const auto x = r.uniform_index(7);
            CHECK(x < 7);
            seen.insert(x);
        }
        CHECK(seen.size() == 7);
        CHECK(Rng::derive(1, 2) != Rng::derive(1, 3));
    }

    TEST_CASE("normal draws have roughly unit variance") {
        Rng r(5);
        double s = 0, s2 = 0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            const double x = r.normal();
            s += x;
            s2 += x * x;
        }
        CHECK(std::abs(s / n) < 0.03);
        CHECK(std::abs(s2 / n - 1.0) < 0.05);
    }

    TEST_CASE("sha256 known digests") {
        CHECK(manifest::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        CHECK(manifest::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    TEST_CASE("manifest round-trips through JSON") {
        testing::TempDir dir("manifest");
        {
            std::ofstream f(dir / "a.txt");
            f << "abc";
        }
        manifest::RunManifest m;
        m.command = "evaluate";
        m.config["out"] = "x.csv";
        m.seeds = {1, 2};
        m.add_input(dir / "a.txt");
        std::stringstream s;
        manifest::write_manifest(s, m);
        const auto back = manifest::read_manifest(s);
        CHECK(back.command == "evaluate");
        CHECK(back.config.at("out") == "x.csv");
        CHECK(back.seeds == std::vector<std::uint64_t>{1, 2});
        REQUIRE(back.inputs.size() == 1);
        CHECK(back.inputs[0].sha256 == manifest::sha256_hex("abc"));
        CHECK_THROWS_AS(manifest::sha256_file(dir / "missing"), DataError);
    }
}
