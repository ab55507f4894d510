#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "interpomae/data.hpp"
#include "interpomae/generate.hpp"
#include "interpomae/model.hpp"
#include "interpomae/rng.hpp"
#include "interpomae/train.hpp"

using namespace interpomae;

namespace {

// A small bundle with a couple of pretraining epochs so the decoder is not
// at its zero-bias starting point.
struct Fixture {
    ModelConfig cfg;
    ModelBundle bundle;
    std::vector<Series> series;

    Fixture() {
        cfg.patch_count = 4;
        cfg.patch_len = 3;
        cfg.channels = 2;
        cfg.latent_dim = 3;
        cfg.enc_layers = 1;
        cfg.dec_layers = 1;
        cfg.enc_hidden = 8;
        cfg.dec_hidden = 8;
        cfg.interp_layers = 1;
        cfg.interp_hidden = 16;
        cfg.seed = 40;

        series = generate_sines(10, cfg.patch_count * cfg.patch_len, cfg.channels, 77);
        ModelBundle fresh = init_params(cfg);
        fresh.norm = fit_normalizer(series);
        TrainConfig tc;
        tc.phase1_epochs = 10;
        tc.phase2_epochs = 10;
        tc.phase3_epochs = 0;
        tc.batch_size = 5;
        tc.mask_spec = MaskSpec::uniform(1);
        tc.seed = 8;
        const auto grids = prepare_dataset(series, fresh.norm, cfg.patch_len);
        bundle = phase2_interpolator(phase1_pretrain(fresh, grids, tc), grids, tc);
    }
};

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("synthesize with an empty mask equals denoise bitwise") {
    const Fixture fx;
    Rng rng(123);
    const auto state_before = rng.state();
    const Series synth = synthesize(fx.bundle, fx.series[0], MaskSpec::uniform(0), rng);
    CHECK(rng.state() == state_before);  // empty mask consumes no randomness
    const Series den = denoise(fx.bundle, fx.series[0]);
    CHECK(bitwise_equal(synth.values, den.values));
    CHECK(den.values.shape() == fx.series[0].values.shape());
    CHECK(bitwise_equal(den.values, denoise(fx.bundle, fx.series[0]).values));
}

TEST_CASE("synthesize is deterministic per seed and varies across seeds") {
    const Fixture fx;
    const MaskSpec spec = MaskSpec::uniform(2);

    Rng a(55), b(55);
    const Series sa = synthesize(fx.bundle, fx.series[1], spec, a);
    const Series sb = synthesize(fx.bundle, fx.series[1], spec, b);
    CHECK(bitwise_equal(sa.values, sb.values));

    Rng c(56), d(57);
    const Series sc = synthesize(fx.bundle, fx.series[1], spec, c);
    const Series sd = synthesize(fx.bundle, fx.series[1], spec, d);
    CHECK(max_abs_diff(sc.values, sd.values) > 0.0);
}

TEST_CASE("synthesize validates geometry and feasibility") {
    const Fixture fx;
    Rng rng(1);
    const Series wrong = generate_sines(1, 9, fx.cfg.channels, 3)[0];
    CHECK_THROWS_AS(static_cast<void>(synthesize(fx.bundle, wrong, MaskSpec::uniform(1), rng)),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        static_cast<void>(synthesize(fx.bundle, fx.series[0],
                                     MaskSpec::uniform(fx.cfg.patch_count + 1), rng)),
        std::invalid_argument);
    // masking everything leaves the encoder without input
    CHECK_THROWS_AS(
        static_cast<void>(synthesize(fx.bundle, fx.series[0],
                                     MaskSpec::uniform(fx.cfg.patch_count), rng)),
        std::invalid_argument);
}

TEST_CASE("impute splices observed patches verbatim") {
    const Fixture fx;
    const Series& input = fx.series[2];

    MaskPattern none;
    none.total = fx.cfg.patch_count;
    CHECK(bitwise_equal(impute(fx.bundle, input, none).values, input.values));

    MaskPattern missing;
    missing.total = fx.cfg.patch_count;
    missing.masked = {1, 3};
    const Series filled = impute(fx.bundle, input, missing);
    CHECK(filled.values.shape() == input.values.shape());

    const std::size_t p = fx.cfg.patch_len;
    for (std::size_t t = 0; t < fx.cfg.patch_count; ++t) {
        bool observed = !missing.is_masked(t);
        for (std::size_t step = t * p; step < (t + 1) * p; ++step) {
            for (std::size_t c = 0; c < fx.cfg.channels; ++c) {
                if (observed) {
                    CHECK(filled.values.at(step, c) == input.values.at(step, c));
                }
            }
        }
    }
    // the restored patches actually came from the model, not the input
    double restored_diff = 0.0;
    for (std::size_t step = p; step < 2 * p; ++step)
        for (std::size_t c = 0; c < fx.cfg.channels; ++c)
            restored_diff = std::max(
                restored_diff, std::abs(filled.values.at(step, c) - input.values.at(step, c)));
    CHECK(restored_diff > 0.0);

    MaskPattern wrong;
    wrong.total = fx.cfg.patch_count + 1;
    CHECK_THROWS_AS(static_cast<void>(impute(fx.bundle, input, wrong)), std::invalid_argument);
}

TEST_CASE("augment produces n*k labeled copies deterministically") {
    const Fixture fx;
    std::vector<Series> small(fx.series.begin(), fx.series.begin() + 3);

    const std::vector<Series> copies = augment(fx.bundle, small, 2, MaskSpec::uniform(2), 500);
    REQUIRE(copies.size() == 6);
    CHECK(copies[0].id == "0#0");
    CHECK(copies[1].id == "0#1");
    CHECK(copies[4].id == "2#0");

    const std::vector<Series> again = augment(fx.bundle, small, 2, MaskSpec::uniform(2), 500);
    for (std::size_t i = 0; i < copies.size(); ++i)
        CHECK(bitwise_equal(copies[i].values, again[i].values));

    // distinct sub-seeds make the k copies of one source differ
    CHECK(max_abs_diff(copies[0].values, copies[1].values) > 0.0);

    // k=1 with the empty mask reduces to a denoised copy
    const std::vector<Series> plain = augment(fx.bundle, small, 1, MaskSpec::uniform(0), 9);
    for (std::size_t i = 0; i < small.size(); ++i) {
        CHECK(bitwise_equal(plain[i].values, denoise(fx.bundle, small[i]).values));
        CHECK(plain[i].id == small[i].id + "#0");
    }

    CHECK_THROWS_AS(static_cast<void>(augment(fx.bundle, small, 0, MaskSpec::uniform(1), 1)),
                    std::invalid_argument);
}
