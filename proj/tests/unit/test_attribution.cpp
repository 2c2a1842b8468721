#include <doctest.h>

#include <cmath>
#include <sstream>

#include "civic/attribution.hpp"
#include "civic/error.hpp"
#include "helpers.hpp"
#include "synthetic.hpp"

using namespace civic;
using namespace civic::attribution;
using civic::testing::make_seq;
using civic::testing::tiny_config;

namespace {

ValueAndGradient linear(const Matrix& w) {
    return [w](const Matrix& x) { return neural::InputGradient{(w.array() * x.array()).sum(), w}; };
}

ValueAndGradient cubic() {
    return [](const Matrix& x) {
        Matrix g = 3.0 * x.array().square().matrix();
        return neural::InputGradient{x.array().cube().sum(), g};
    };
}

}  // namespace

TEST_SUITE("attribution") {
    TEST_CASE("input equal to baseline gives zero attributions") {
        const Matrix x = Matrix::Random(3, 4);
        const auto r = integrated_gradients(cubic(), x, x, 16);
        CHECK(r.attributions.isZero());
        CHECK(r.residual() == 0.0);
    }

    TEST_CASE("linear functions are attributed exactly") {
        const Matrix w = Matrix::Random(2, 5);
        const Matrix x = Matrix::Random(2, 5);
        const Matrix b = Matrix::Random(2, 5);
        for (Rule rule : {Rule::Midpoint, Rule::LeftRiemann}) {
            const auto r = integrated_gradients(linear(w), x, b, 3, rule);
            const Matrix expected = (w.array() * (x - b).array()).matrix();
            CHECK((r.attributions - expected).cwiseAbs().maxCoeff() < 1e-12);
        }
    }

    TEST_CASE("completeness error shrinks with more steps") {
        const Matrix x = Matrix::Constant(1, 3, 1.0);
        const Matrix b = Matrix::Zero(1, 3);
        const auto coarse = integrated_gradients(cubic(), x, b, 4);
        const auto fine = integrated_gradients(cubic(), x, b, 64);
        CHECK(fine.residual() < coarse.residual());
        CHECK(fine.residual() < 1e-3);
        // Midpoint error for t^3 is m^-2 / 4 per coordinate.
        CHECK(coarse.residual() == doctest::Approx(3.0 * 0.25 / 16.0).epsilon(1e-9));
    }

    TEST_CASE("invalid arguments") {
        const Matrix x = Matrix::Zero(1, 2);
        CHECK_THROWS_AS(integrated_gradients(cubic(), x, x, 0), std::invalid_argument);
        CHECK_THROWS_AS(integrated_gradients(cubic(), x, Matrix::Zero(2, 2), 4), std::invalid_argument);
        const ValueAndGradient nan = [](const Matrix& m) {
            return neural::InputGradient{0.0, Matrix::Constant(m.rows(), m.cols(), std::nan(""))};
        };
        CHECK_THROWS_AS(integrated_gradients(nan, x, Matrix::Ones(1, 2), 4), NumericError);
        AttributionConfig c;
        c.steps = 0;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    }

    TEST_CASE("encoder attributions are complete and sum per token") {
        const auto m = neural::init_model(tiny_config(), 31);
        const auto seq = make_seq({5, 6, 7, 8}, 3);
        AttributionConfig c;
        c.steps = 512;
        c.target = Level::C;
        for (auto kind : {BaselineKind::PadSequence, BaselineKind::ZeroEmbedding}) {
            c.baseline = kind;
            const auto r = integrated_gradients(m, seq, c);
            CHECK(r.attributions.rows() == 6);
            CHECK(r.residual() <= 1e-3);
            const auto scores = token_scores(r.attributions);
            double sum = 0;
            for (double s : scores) sum += s;
            CHECK(sum == doctest::Approx(r.total()).epsilon(1e-12));
        }
    }

    TEST_CASE("pad baseline shares the bos and eos rows") {
        const auto m = neural::init_model(tiny_config(), 32);
        const auto seq = make_seq({5, 6, 7});
        const auto base = baseline_for(m, seq, BaselineKind::PadSequence);
        const auto input = neural::embed(m, std::span<const tokenizer::TokenId>(seq.ids.data(), seq.attention_length));
        CHECK(base.row(0) == input.row(0));
        CHECK(base.row(4) == input.row(4));
        AttributionConfig c;
        c.steps = 32;
        const auto r = integrated_gradients(m, seq, c);
        CHECK(r.attributions.row(0).isZero());
        CHECK(r.attributions.row(4).isZero());
        CHECK(baseline_for(m, seq, BaselineKind::ZeroEmbedding).isZero());
    }

    TEST_CASE("attributions ignore other classes' head columns") {
        auto m = neural::init_model(tiny_config(), 33);
        const auto seq = make_seq({9, 10, 11});
        AttributionConfig c;
        c.steps = 64;
        c.target = Level::B;
        const auto before = integrated_gradients(m, seq, c);
        m.params.cls_head.col(0).setRandom();
        m.params.cls_head.col(4).setRandom();
        const auto after = integrated_gradients(m, seq, c);
        CHECK(after.attributions == before.attributions);
    }

    TEST_CASE("token lists and ranking") {
        IgResult r;
        r.attributions = Matrix(3, 2);
        r.attributions << 0.5, 0.5, -1.0, 0.0, 2.0, 1.0;
        r.f_input = 2.0;
        const std::vector<std::string> texts{"[CLS]", "egfr", "[SEP]"};
        const auto list = token_attributions(r, texts);
        REQUIRE(list.tokens.size() == 3);
        CHECK(list.tokens[1].token == "egfr");
        CHECK(list.tokens[1].score == -1.0);
        CHECK(list.residual == doctest::Approx(1.0));

        const std::map<std::string, double> totals{{"b", 1.0}, {"a", 1.0}, {"c", 3.0}, {"d", -2.0}};
        const auto top = rank_totals(totals, 3);
        REQUIRE(top.size() == 3);
        CHECK(top[0].token == "c");
        CHECK(top[1].token == "a");
        CHECK(top[2].token == "b");
    }

    TEST_CASE("top tokens per class skip specials") {
        const auto items = testing::keyword_dataset(20, 2);
        std::vector<std::string> texts;
        for (const auto& it : items) texts.push_back(it.abstract);
        const auto vocab = tokenizer::train_vocab(texts, 60);
        auto cfg = tiny_config(static_cast<int>(vocab.size()));
        cfg.context_width = 64;
        const auto m = neural::init_model(cfg, 3);
        AttributionConfig c;
        c.steps = 8;
        const auto top = top_tokens_per_class(m, vocab, items, 5, c);
        for (const auto& col : top) {
            CHECK(col.size() <= 5);
            for (const auto& t : col) CHECK(t.token.front() != '[');
        }
        std::ostringstream out;
        write_top_tokens_table(out, top);
        CHECK_FALSE(out.str().empty());
    }

    TEST_CASE("axioms hold on random small networks") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto report = axiom_suite([](std::uint64_t s) { return ToyMlp::random(4, 6, s); }, seed);
            CHECK(report.sensitivity_a_ok);
            CHECK(report.sensitivity_b_ok);
            CHECK(report.invariance_ok);
        }
    }

    TEST_CASE("toy network gradient matches finite differences") {
        const auto net = ToyMlp::random(3, 5, 1);
        Matrix x(1, 3);
        x << 0.3, -0.7, 1.1;
        const auto g = net(x);
        for (int i = 0; i < 3; ++i) {
            Matrix up = x, down = x;
            up(0, i) += 1e-6;
            down(0, i) -= 1e-6;
            CHECK(g.gradient(0, i) == doctest::Approx((net(up).value - net(down).value) / 2e-6).epsilon(1e-6));
        }
    }
}
