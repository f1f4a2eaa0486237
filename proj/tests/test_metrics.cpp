#include <doctest.h>

#include <cmath>

#include "ganproj/error.hpp"
#include "ganproj/metrics.hpp"
#include "ganproj/rng.hpp"

using namespace ganproj;

TEST_CASE("mse and psnr closed forms") {
    const Image black(4, 4, 3, 0), white(4, 4, 3, 255);
    CHECK(mse_pixels(black, black) == 0.0);
    CHECK(mse_pixels(black, white) == 65025.0);
    CHECK(psnr(black, white) == doctest::Approx(0.0).epsilon(1e-3));
    CHECK(psnr(black, black) == kPsnrInfinity);
    CHECK(std::abs(psnr_from_mse(1.0) - 48.1308) < 1e-3);
    const Image a(2, 2, 1, std::vector<std::uint8_t>{0, 0, 0, 0}), b(2, 2, 1, std::vector<std::uint8_t>{1, 0, 3, 0});
    CHECK(mse_pixels(a, b) == 2.5);
    CHECK_THROWS_AS(mse_pixels(a, black), ShapeError);
    CHECK(format_number(kPsnrInfinity) == "inf");
    CHECK(format_number(2.5) == "2.5");
}

TEST_CASE("psnr symmetry and monotonicity") {
    RandomStream rng(1);
    for (int t = 0; t < 200; ++t) {
        Image x(8, 8, 1), y(8, 8, 1);
        for (auto& p : x.pixels()) p = std::uint8_t(rng.next_u64() & 0xff);
        for (auto& p : y.pixels()) p = std::uint8_t(rng.next_u64() & 0xff);
        CHECK(psnr(x, y) == psnr(y, x));
        const double m1 = 1.0 + 1000.0 * rng.uniform01(), m2 = m1 + 1.0 + 1000.0 * rng.uniform01();
        CHECK(psnr_from_mse(m1) > psnr_from_mse(m2));
    }
}

TEST_CASE("batch evaluation") {
    const Image clean(4, 4, 1, 10), off(4, 4, 1, 11);
    SUBCASE("perfect candidate") {
        const EvalReport r = batch_eval({clean}, {{"lvr", {clean}}}, {127.0});
        REQUIRE(r.records.size() == 1);
        CHECK(r.records[0].psnr_db == kPsnrInfinity);
        CHECK(summary_json(r.summary)["lvr"]["127"]["mean_psnr"] == "inf");
    }
    SUBCASE("ordering, counts and symmetric rows") {
        const EvalReport r = batch_eval({clean, off}, {{"lvr", {off, off}}, {"external", {off, off}}}, {127.0, 127.0});
        REQUIRE(r.records.size() == 4);
        CHECK(r.records[0].image_id == 0);
        CHECK(r.records[0].method == "external");
        CHECK(r.records[1].method == "lvr");
        CHECK(r.records[2].image_id == 1);
        REQUIRE(r.summary.size() == 2);
        CHECK(r.summary[0].mean_psnr == r.summary[1].mean_psnr);
        CHECK(r.summary[0].std_psnr == r.summary[1].std_psnr);
        CHECK(r.summary[0].n == 2);
        CHECK(r.records[0].psnr_db == psnr_from_mse(1.0));
    }
    SUBCASE("three methods at two noise levels") {
        const EvalReport r = batch_eval({clean, off}, {{"external", {off, clean}}, {"lvr", {off, off}}, {"lvr-sa", {clean, clean}}},
                                        {127.0, 184.0});
        CHECK(records_csv(r.records).rfind("image_id,sigma,method,mse,psnr_db\n0,127,external,1,", 0) == 0);
        const auto js = summary_json(r.summary);
        CHECK(js.size() == 3);
        CHECK(js["lvr"].contains("127"));
        CHECK(js["lvr"].contains("184"));
    }
    SUBCASE("sample standard deviation") {
        const Image two(4, 4, 1, 12);
        const EvalReport r = batch_eval({clean, clean}, {{"m", {off, two}}}, {5.0, 5.0});
        const double p1 = psnr_from_mse(1.0), p2 = psnr_from_mse(4.0), mean = (p1 + p2) / 2;
        CHECK(r.summary[0].mean_psnr == doctest::Approx(mean).epsilon(1e-14));
        CHECK(r.summary[0].std_psnr == doctest::Approx(std::sqrt((p1 - mean) * (p1 - mean) * 2)).epsilon(1e-12));
    }
    SUBCASE("length mismatch") {
        CHECK_THROWS_AS(batch_eval({clean, off}, {{"lvr", {off}}}, {1.0, 1.0}), ShapeError);
        CHECK_THROWS_AS(batch_eval({clean}, {{"lvr", {off}}}, {1.0, 1.0}), ShapeError);
    }
}
