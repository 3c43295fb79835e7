#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sadreg/losses.hpp"

using namespace sadreg;
using testing::random_tensor;

namespace {

double brute_mse(const Tensor &x, const Tensor &y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return s / static_cast<double>(x.size());
}

double brute_ncc(const Tensor &x, const Tensor &y, std::size_t n) {
    const std::size_t m = x.size() / x.dim(0);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < m; ++i) {
        mx += x[n * m + i];
        my += y[n * m + i];
    }
    mx /= static_cast<double>(m);
    my /= static_cast<double>(m);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double a = x[n * m + i] - mx, b = y[n * m + i] - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    return sxy / std::sqrt(sxx * syy);
}

double brute_cos(const Tensor &x, const Tensor &y, std::size_t n) {
    const std::size_t m = x.size() / x.dim(0);
    double d = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < m; ++i) {
        d += x[n * m + i] * y[n * m + i];
        a += x[n * m + i] * x[n * m + i];
        b += y[n * m + i] * y[n * m + i];
    }
    return d / std::sqrt(a * b);
}

} // namespace

TEST_CASE("ncc properties") {
    const Tensor x = random_tensor({1, 1, 8, 8}, 1);
    CHECK(loss::ncc(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(loss::ncc(x, ops::scale(x, -2.0)) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(loss::ncc(x, ops::add_scalar(ops::scale(x, 3.0), 7.0)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(loss::ncc(x, Tensor({1, 1, 8, 8}, 0.3))) <= 1e-12);
    CHECK(loss::ncc(x, Tensor({1, 1, 8, 8}, 0.0)) == 0.0);
    const Tensor y = random_tensor({1, 1, 8, 8}, 2);
    CHECK(loss::ncc(x, y) == doctest::Approx(brute_ncc(x, y, 0)).epsilon(1e-10));
    CHECK(loss::ncc(x, y) == doctest::Approx(loss::ncc(y, x)).epsilon(1e-14));
}

TEST_CASE("ncc_per_sample and batch mean match brute force") {
    const Tensor x = random_tensor({3, 1, 5, 5}, 3), y = random_tensor({3, 1, 5, 5}, 4);
    ad::Tape tape;
    const Tensor per = loss::ncc_per_sample(tape.constant(x), tape.constant(y)).value();
    double mean = 0.0;
    for (std::size_t n = 0; n < 3; ++n) {
        CHECK(std::abs(per[n] - brute_ncc(x, y, n)) <= 1e-10);
        mean += brute_ncc(x, y, n) / 3.0;
    }
    CHECK(std::abs(loss::ncc(tape.constant(x), tape.constant(y)).value().item() - mean) <= 1e-10);
}

TEST_CASE("scene consistency examples") {
    loss::LossWeights w;
    ad::Tape tape;
    const Tensor sa = random_tensor({2, 3, 4, 4}, 5);
    const auto same = loss::scene_consistency(tape.constant(sa), tape.constant(sa), w);
    CHECK(std::abs(same.value.value().item()) <= 1e-12);
    CHECK(same.cosine.value().item() == doctest::Approx(1.0).epsilon(1e-12));

    // S_B = 2 S_A: mse = mean(S_A^2), cosine 1
    const auto twice = loss::scene_consistency(tape.constant(sa), tape.constant(ops::scale(sa, 2.0)), w);
    CHECK(std::abs(twice.value.value().item() - brute_mse(sa, Tensor::zeros_like(sa))) <= 1e-10);

    const Tensor sb = random_tensor({2, 3, 4, 4}, 6);
    const auto r = loss::scene_consistency(tape.constant(sa), tape.constant(sb), w);
    const double cos_mean = (brute_cos(sa, sb, 0) + brute_cos(sa, sb, 1)) / 2.0;
    CHECK(std::abs(r.mse.value().item() - brute_mse(sa, sb)) <= 1e-10);
    CHECK(std::abs(r.cosine.value().item() - cos_mean) <= 1e-10);
    CHECK(std::abs(r.value.value().item() - (brute_mse(sa, sb) + w.cos * (1.0 - cos_mean))) <= 1e-10);
    CHECK_THROWS_AS(loss::scene_consistency(tape.constant(sa), tape.constant(Tensor::zeros({2, 3, 4, 2})), w),
                    ShapeError);
}

TEST_CASE("cycle loss") {
    ad::Tape tape;
    const Tensor a = random_tensor({1, 1, 4, 4}, 7), b = random_tensor({1, 1, 4, 4}, 8);
    const auto zero = loss::cycle_loss(tape.constant(a), tape.constant(a), tape.constant(b), tape.constant(b));
    CHECK(zero.value.value().item() == 0.0);
    // constant offset 1 on both reconstructions: 1 + 1
    const auto off = loss::cycle_loss(tape.constant(ops::add_scalar(a, 1.0)), tape.constant(a),
                                      tape.constant(ops::add_scalar(b, -1.0)), tape.constant(b));
    CHECK(off.value.value().item() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(off.a.value().item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("align loss") {
    loss::LossWeights w;
    ad::Tape tape;
    const Tensor a = random_tensor({2, 1, 6, 6}, 9), r = random_tensor({2, 1, 6, 6}, 10);
    const auto same = loss::align_loss(tape.constant(a), tape.constant(a), w);
    CHECK(std::abs(same.value.value().item()) <= 1e-12);
    const auto t = loss::align_loss(tape.constant(r), tape.constant(a), w);
    const double n = (brute_ncc(r, a, 0) + brute_ncc(r, a, 1)) / 2.0;
    CHECK(std::abs(t.value.value().item() - (brute_mse(r, a) + w.ncc * (1.0 - n))) <= 1e-10);
}

TEST_CASE("total loss weighting") {
    loss::LossWeights w;
    w.scene = 1.0;
    w.cycle = 0.5;
    w.align = 2.0;
    CHECK(loss::total_loss(0.2, 0.4, 0.1, w) == doctest::Approx(0.6).epsilon(1e-14));
    ad::Tape tape;
    const auto v = loss::total_loss(tape.constant(Tensor::scalar(0.2)), tape.constant(Tensor::scalar(0.4)),
                                    tape.constant(Tensor::scalar(0.1)), w);
    CHECK(v.value().item() == doctest::Approx(0.6).epsilon(1e-14));
    w.align = 0.0;
    CHECK(loss::total_loss(0.2, 0.4, 0.1, w) == doctest::Approx(0.4).epsilon(1e-14));
}

TEST_CASE("weights validation") {
    loss::LossWeights w;
    CHECK_NOTHROW(w.validate());
    w.align = -1.0;
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
    w.align = std::nan("");
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}

TEST_CASE("report csv") {
    loss::LossReport r;
    r.total = 1.5;
    const std::string header = loss::LossReport::csv_header();
    const std::string row = r.csv_row(3, 1);
    CHECK(header.rfind("step,epoch,", 0) == 0);
    CHECK(row.rfind("3,1,", 0) == 0);
    CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
}
