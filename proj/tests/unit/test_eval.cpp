#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "civic/eval.hpp"
#include "civic/rng.hpp"
#include "helpers.hpp"

using namespace civic;
using namespace civic::eval;

namespace {

double brute_f1(std::span<const double> scores, const std::vector<bool>& labels, double t) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool p = scores[i] > t;
        if (p && labels[i]) ++tp;
        else if (p) ++fp;
        else if (labels[i]) ++fn;
    }
    return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

std::vector<LabelVector> random_labels(std::size_t n, Rng& rng, double p) {
    std::vector<LabelVector> out(n);
    for (auto& v : out)
        for (std::size_t c = 0; c < kNumLevels; ++c) v.set(c, rng.bernoulli(p));
    return out;
}

}  // namespace

TEST_SUITE("eval") {
    TEST_CASE("four-item precision-recall curve") {
        const std::vector<double> s{0.9, 0.7, 0.4, 0.2};
        const std::vector<bool> y{true, false, true, false};
        const auto curve = pr_curve(s, y);
        REQUIRE(curve.size() == 4);
        CHECK(curve[0].threshold == 0.2);
        CHECK(curve[0].precision == doctest::Approx(2.0 / 3));
        CHECK(curve[0].recall == 1.0);
        CHECK(curve[0].f1 == doctest::Approx(0.8));
        CHECK(curve[1].f1 == doctest::Approx(0.5));
        CHECK(curve[2].precision == 1.0);
        CHECK(curve[2].f1 == doctest::Approx(2.0 / 3));
        CHECK(curve[3].threshold == 0.9);
        CHECK(curve[3].recall == 0.0);
        CHECK(calibrate_threshold(s, y) == 0.2);
    }

    TEST_CASE("all-negative class falls back to one half with a warning") {
        testing::WarningCapture w;
        const std::vector<double> s{0.1, 0.8};
        const std::vector<bool> y{false, false};
        CHECK(calibrate_threshold(s, y) == kDefaultThreshold);
        CHECK(w.messages.size() == 1);
        for (const auto& p : pr_curve(s, y)) CHECK(p.recall == 0.0);
    }

    TEST_CASE("calibration agrees with an exhaustive search") {
        Rng rng(17);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t n = 5 + rng.uniform_index(40);
            std::vector<double> s(n);
            std::vector<bool> y(n);
            bool any = false;
            for (std::size_t i = 0; i < n; ++i) {
                s[i] = static_cast<double>(rng.uniform_index(12)) / 11.0;  // forces ties
                y[i] = rng.bernoulli(0.4);
                any = any || y[i];
            }
            if (!any) y[0] = true;
            std::vector<double> cand(s);
            cand.push_back(0.5);
            double best = -1, best_t = 0;
            for (double t : cand) {
                const double f = brute_f1(s, y, t);
                if (f > best + 1e-12 || (std::abs(f - best) <= 1e-12 && t > best_t)) {
                    best = f;
                    best_t = t;
                }
            }
            const double got = calibrate_threshold(s, y);
            CHECK(got == best_t);
            for (const auto& p : pr_curve(s, y)) CHECK(p.f1 <= brute_f1(s, y, got) + 1e-12);
        }
    }

    TEST_CASE("thresholds are strict") {
        const std::vector<Scores> s{{0.5, 0.6, 0.4, 0.5, 0.0}};
        const auto p = apply_thresholds(s, ThresholdSet{0.5, 0.5, 0.5, 0.4, 0.5});
        CHECK(p[0] == LabelVector::of({Level::B, Level::D}));
    }

    TEST_CASE("metrics from known counts") {
        // Class A: tp=2, fp=1, fn=1.
        const std::vector<LabelVector> gold{LabelVector::of({Level::A}), LabelVector::of({Level::A}), LabelVector::of({Level::A}), LabelVector{}};
        const std::vector<LabelVector> pred{LabelVector::of({Level::A}), LabelVector::of({Level::A}), LabelVector{}, LabelVector::of({Level::A})};
        const auto r = compute_metrics(pred, gold);
        CHECK(r.precision[0] == doctest::Approx(2.0 / 3));
        CHECK(r.recall[0] == doctest::Approx(2.0 / 3));
        CHECK(r.f1[0] == doctest::Approx(2.0 / 3));
        CHECK(r.support[0] == 3);
        CHECK(r.weights[0] == 1.0);
        CHECK(r.weighted_f1 == doctest::Approx(2.0 / 3));
        const auto cc = confusion(pred, gold);
        CHECK(cc.classes[0].tn == 0);
        CHECK(cc.classes[1].tn == 4);
    }

    TEST_CASE("weighted F1 by hand and zero support") {
        CHECK(weighted_f1({0.5, 1.0, 0, 0, 0}, {1, 3, 0, 0, 0}) == doctest::Approx(0.875));
        testing::WarningCapture w;
        CHECK(weighted_f1({0.5, 1, 1, 1, 1}, {0, 0, 0, 0, 0}) == 0.0);
        CHECK_FALSE(w.messages.empty());
    }

    TEST_CASE("metric invariants on random predictions") {
        Rng rng(3);
        for (int trial = 0; trial < 30; ++trial) {
            const auto gold = random_labels(40, rng, 0.3);
            const auto pred = random_labels(40, rng, 0.3);
            const auto r = compute_metrics(pred, gold);
            double wsum = 0;
            std::size_t support = 0;
            for (std::size_t c = 0; c < kNumLevels; ++c) {
                CHECK(r.f1[c] >= 0.0);
                CHECK(r.f1[c] <= 1.0);
                const double p = r.precision[c], q = r.recall[c];
                if (p + q > 0) CHECK(r.f1[c] == doctest::Approx(2 * p * q / (p + q)));
                const auto cc = confusion(pred, gold);
                const auto& k = cc.classes[c];
                CHECK(k.total() == 40);
                wsum += r.weights[c];
                support += r.support[c];
            }
            if (support > 0) CHECK(wsum == doctest::Approx(1.0));
            const double lo = *std::min_element(r.f1.begin(), r.f1.end());
            const double hi = *std::max_element(r.f1.begin(), r.f1.end());
            CHECK(r.weighted_f1 >= lo - 1e-12);
            CHECK(r.weighted_f1 <= hi + 1e-12);
            // Perfect prediction.
            CHECK(compute_metrics(gold, gold).weighted_f1 == doctest::Approx(1.0));
        }
    }

    TEST_CASE("adding a true positive never lowers that class F1") {
        Rng rng(8);
        auto gold = random_labels(30, rng, 0.4);
        auto pred = random_labels(30, rng, 0.4);
        for (std::size_t i = 0; i < gold.size(); ++i) {
            for (std::size_t c = 0; c < kNumLevels; ++c) {
                if (gold[i].test(c) && !pred[i].test(c)) {
                    const double before = compute_metrics(pred, gold).f1[c];
                    pred[i].set(c);
                    CHECK(compute_metrics(pred, gold).f1[c] >= before);
                }
            }
        }
    }

    TEST_CASE("seed aggregation") {
        std::vector<MetricsReport> reps(3);
        reps[0].weighted_f1 = 0.7;
        reps[1].weighted_f1 = 0.9;
        reps[2].weighted_f1 = 0.8;
        for (std::size_t i = 0; i < 3; ++i) reps[i].f1[1] = 0.1 * static_cast<double>(i + 1);
        const auto agg = aggregate_seeds(reps);
        CHECK(agg.weighted_f1.min == 0.7);
        CHECK(agg.weighted_f1.median == 0.8);
        CHECK(agg.weighted_f1.max == 0.9);
        CHECK(agg.mean.weighted_f1 == doctest::Approx(0.8));
        CHECK(agg.f1[1].median == doctest::Approx(0.2));
        CHECK(agg.weighted_f1_values.size() == 3);
    }

    TEST_CASE("misclassification overlap on a three-model fixture") {
        const auto a = LabelVector::of({Level::A}), b = LabelVector::of({Level::B});
        const std::vector<LabelVector> gold{a, a, b, b};
        const std::vector<std::vector<LabelVector>> preds{
            {a, b, b, b},  // errors {1}
            {b, b, b, b},  // errors {0, 1}
            {a, a, b, b},  // no errors
        };
        const auto r = misclassification_analysis(preds, gold);
        CHECK(r.overlap[0][1] == doctest::Approx(50.0));
        CHECK(r.overlap[1][0] == doctest::Approx(50.0));
        CHECK(r.overlap[0][2] == 0.0);
        CHECK(r.overlap[2][2] == 100.0);
        CHECK(r.overlap[0][0] == 100.0);
        CHECK(r.correct_models == std::vector<std::size_t>{2, 1, 3, 3});
        CHECK(r.histogram == std::vector<std::size_t>{0, 1, 1, 2});

        const std::vector<std::vector<LabelVector>> one{preds[0]};
        CHECK_THROWS_AS(misclassification_analysis(one, gold), std::invalid_argument);
    }

    TEST_CASE("relabeling items does not change metrics") {
        Rng rng(21);
        auto gold = random_labels(25, rng, 0.3);
        auto pred = random_labels(25, rng, 0.3);
        const auto before = compute_metrics(pred, gold);
        std::vector<std::size_t> perm(25);
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        rng.shuffle(std::span<std::size_t>(perm));
        std::vector<LabelVector> g2, p2;
        for (auto i : perm) {
            g2.push_back(gold[i]);
            p2.push_back(pred[i]);
        }
        const auto after = compute_metrics(p2, g2);
        CHECK(after.weighted_f1 == before.weighted_f1);
        CHECK(after.f1 == before.f1);
    }

    TEST_CASE("report writers") {
        MetricsReport r;
        r.f1 = {0.5, 0.25, 1.0, 0.0, 0.125};
        r.weighted_f1 = 0.6;
        const std::vector<NamedReport> rows{{"toy", r}};
        std::ostringstream csv;
        write_metrics_csv(csv, rows);
        CHECK(csv.str() == "model,F1_A,F1_B,F1_C,F1_D,F1_E,weighted_F1\ntoy,50.0000,25.0000,100.0000,0.0000,12.5000,60.0000\n");

        std::stringstream io;
        const std::vector<PredictionRecord> recs{{"7", {0.1, 0.9, 0.2, 0.3, 0.4}, LabelVector::of({Level::B}), LabelVector::of({Level::B, Level::C})}};
        write_predictions_jsonl(io, recs);
        const auto back = read_predictions_jsonl(io);
        REQUIRE(back.size() == 1);
        CHECK(back[0].id == "7");
        CHECK(back[0].probabilities == recs[0].probabilities);
        CHECK(back[0].gold == recs[0].gold);

        std::stringstream th;
        write_thresholds_json(th, {0.1, 0.2, 0.3, 0.4, 0.5});
        CHECK(read_thresholds_json(th) == ThresholdSet{0.1, 0.2, 0.3, 0.4, 0.5});
    }
}
