#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtfnet/metrics.hpp"
#include "oracles.hpp"

using namespace mtfnet;

TEST_CASE("perfect predictions give all-ones metrics and a diagonal confusion") {
    const std::vector<int> truth = {0, 1, 2, 1, 0, 2};
    const auto report = compute_metrics(truth, truth, {"a", "b", "c"});
    CHECK(report.macro_f1 == doctest::Approx(1.0));
    CHECK(report.macro_precision == doctest::Approx(1.0));
    CHECK(report.macro_recall == doctest::Approx(1.0));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (i != j) CHECK(report.confusion[i][j] == 0);
    CHECK(report.confusion[0][0] == 2);
    CHECK(report.confusion[1][1] == 2);
}

TEST_CASE("hand-counted binary case: TP=2, FP=1, FN=1") {
    // Class 1: two true positives, one false positive, one false negative.
    const std::vector<int> truth = {1, 1, 1, 0, 0};
    const std::vector<int> pred = {1, 1, 0, 1, 0};
    const auto report = compute_metrics(truth, pred, {"neg", "pos"});
    CHECK(report.per_class[1].precision == doctest::Approx(2.0 / 3));
    CHECK(report.per_class[1].recall == doctest::Approx(2.0 / 3));
    CHECK(report.per_class[1].f1 == doctest::Approx(2.0 / 3));
    CHECK(report.per_class[1].support == 3);
}

TEST_CASE("a never-predicted class has precision 0, not NaN") {
    const std::vector<int> truth = {0, 1, 1};
    const std::vector<int> pred = {0, 0, 0};
    const auto report = compute_metrics(truth, pred, {"a", "b"});
    CHECK(report.per_class[1].precision == 0.0);
    CHECK(report.per_class[1].recall == 0.0);
    CHECK(report.per_class[1].f1 == 0.0);
    CHECK(std::isfinite(report.macro_f1));
}

TEST_CASE("metric identities hold against the hand-rolled oracle") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const int classes = 2 + static_cast<int>(uniform_index(rng, 5));
        const int count = 5 + static_cast<int>(uniform_index(rng, 60));
        std::vector<int> truth(count), pred(count);
        for (int i = 0; i < count; ++i) {
            truth[i] = static_cast<int>(uniform_index(rng, classes));
            pred[i] = static_cast<int>(uniform_index(rng, classes));
        }
        std::vector<std::string> labels;
        for (int c = 0; c < classes; ++c) labels.push_back("c" + std::to_string(c));

        const auto report = compute_metrics(truth, pred, labels);
        const auto hand = oracle::hand_metrics(truth, pred, classes);

        double macro_f1 = 0.0;
        for (int c = 0; c < classes; ++c) {
            const auto& m = report.per_class[c];
            CHECK(m.precision == doctest::Approx(hand.precision[c]).epsilon(1e-12));
            CHECK(m.recall == doctest::Approx(hand.recall[c]).epsilon(1e-12));
            CHECK(m.f1 == doctest::Approx(hand.f1[c]).epsilon(1e-12));
            if (m.precision + m.recall > 0)
                CHECK(m.f1 == doctest::Approx(2 * m.precision * m.recall /
                                              (m.precision + m.recall)).epsilon(1e-12));
            macro_f1 += m.f1;
            long row_sum = 0;
            for (int j = 0; j < classes; ++j) {
                CHECK(report.confusion[c][j] == hand.confusion[c][j]);
                row_sum += report.confusion[c][j];
            }
            CHECK(row_sum == m.support);  // confusion row sums = class counts
        }
        CHECK(report.macro_f1 == doctest::Approx(macro_f1 / classes).epsilon(1e-12));
        long total = 0;
        for (const auto& row : report.confusion)
            for (const long v : row) total += v;
        CHECK(total == count);
    }
}

TEST_CASE("json rendering carries the full report") {
    const auto report = compute_metrics({0, 1}, {0, 1}, {"x", "y"});
    const auto text = metrics_to_json(report);
    CHECK(text.find("\"macro\"") != std::string::npos);
    CHECK(text.find("\"confusion\"") != std::string::npos);
    CHECK(text.find("\"x\"") != std::string::npos);
}
