#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "interpomae/autodiff.hpp"
#include "interpomae/data.hpp"
#include "interpomae/model.hpp"
#include "interpomae/rng.hpp"
#include "oracles.hpp"

using namespace interpomae;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.patch_count = 3;
    c.patch_len = 2;
    c.channels = 1;
    c.latent_dim = 2;
    c.enc_layers = 2;
    c.dec_layers = 2;
    c.enc_hidden = 4;
    c.dec_hidden = 4;
    c.interp_layers = 2;
    c.interp_hidden = 8;
    c.seed = 21;
    return c;
}

Tensor random_grid(Rng& rng, const ModelConfig& c) {
    Tensor t({c.patch_count, c.patch_len, c.channels});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.0, 1.0);
    return t;
}

ParamStore subset(const ParamStore& params, const std::vector<std::string>& prefixes) {
    ParamStore out;
    for (const std::string& name : params.names()) {
        for (const std::string& p : prefixes) {
            if (name.rfind(p, 0) == 0) {
                out.insert(name, params.at(name));
                break;
            }
        }
    }
    return out;
}

// Rows of a [T,d] code grid at the given slots, stacked to [M,d].
Var take_rows(Tape& tape, Var grid, const std::vector<std::size_t>& slots) {
    std::vector<Var> rows;
    rows.reserve(slots.size());
    for (std::size_t s : slots) rows.push_back(tape.slice(grid, 0, s, 1));
    return tape.concat(rows, 0);
}

std::vector<std::size_t> all_slots(std::size_t t) {
    std::vector<std::size_t> out(t);
    for (std::size_t i = 0; i < t; ++i) out[i] = i;
    return out;
}

}  // namespace

TEST_CASE("init_params is deterministic and respects the init conventions") {
    const ModelConfig cfg = tiny_config();
    const ModelBundle a = init_params(cfg);
    const ModelBundle b = init_params(cfg);
    REQUIRE(a.params.names() == b.params.names());
    for (const std::string& name : a.params.names()) {
        CHECK(bitwise_equal(a.params.at(name), b.params.at(name)));
    }

    const auto expected = expected_param_shapes(cfg);
    REQUIRE(a.params.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        CHECK(a.params.names()[i] == expected[i].first);
        CHECK(a.params.at(expected[i].first).shape() == expected[i].second);
    }

    for (const auto& [name, shape] : expected) {
        const Tensor& t = a.params.at(name);
        if (shape.size() == 2) {
            const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            for (std::size_t i = 0; i < t.numel(); ++i) {
                CHECK(t[i] >= -bound);
                CHECK(t[i] <= bound);
            }
        } else if (name.ends_with("bz")) {
            for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 1.0);
        } else {
            for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0);
        }
    }

    ModelConfig bad = cfg;
    bad.latent_dim = cfg.enc_hidden + 1;
    CHECK_THROWS_AS(static_cast<void>(init_params(bad)), std::invalid_argument);
}

TEST_CASE("parameter inventory holds no mask token") {
    // Every parameter belongs to the encoder GRU stack and projection, the
    // interpolator's dense layers, or the decoder GRU stack and projection.
    // Shapes are fully determined by the config, so there is no room for a
    // learned placeholder embedding.
    const ModelConfig cfg = tiny_config();
    const ModelBundle bundle = init_params(cfg);
    for (const std::string& name : bundle.params.names()) {
        const bool known = name.rfind("enc.", 0) == 0 || name.rfind("dec.", 0) == 0 ||
                           name.rfind("interp.", 0) == 0;
        CHECK(known);
        CHECK(name.find("mask") == std::string::npos);
        CHECK(name.find("token") == std::string::npos);
    }
    // interpolator parameters: dense W/b pairs only, shapes driven by (T, d, width)
    std::size_t interp_params = 0;
    for (const auto& [name, shape] : expected_param_shapes(cfg)) {
        if (name.rfind("interp.", 0) != 0) continue;
        ++interp_params;
        CHECK((name.ends_with(".W") || name.ends_with(".b")));
    }
    CHECK(interp_params == 2 * (cfg.interp_layers + 1));
}

TEST_CASE("encode places codes exactly at the given slots") {
    const ModelConfig cfg = tiny_config();
    const ModelBundle bundle = init_params(cfg);
    Rng rng(3);
    const Tensor grid = random_grid(rng, cfg);

    SUBCASE("full visibility sets every indicator") {
        const LatentGrid enc = encode(bundle, grid, all_slots(cfg.patch_count));
        CHECK(enc.codes.shape() == Shape{cfg.patch_count, cfg.latent_dim});
        CHECK(enc.fully_visible());
    }
    SUBCASE("single patch yields exactly one nonzero slot") {
        Tensor one({1, cfg.patch_len, cfg.channels});
        for (std::size_t i = 0; i < one.numel(); ++i) one[i] = grid[i];
        const LatentGrid enc = encode(bundle, one, {1});
        for (std::size_t t = 0; t < cfg.patch_count; ++t) {
            double row_norm = 0.0;
            for (std::size_t j = 0; j < cfg.latent_dim; ++j)
                row_norm += std::abs(enc.codes.at(t, j));
            if (t == 1) {
                CHECK(enc.visible[t] == 1);
                CHECK(row_norm > 0.0);
            } else {
                CHECK(enc.visible[t] == 0);
                CHECK(row_norm == 0.0);
            }
        }
    }
    SUBCASE("deterministic given bundle and input") {
        const LatentGrid a = encode(bundle, grid, all_slots(cfg.patch_count));
        const LatentGrid b = encode(bundle, grid, all_slots(cfg.patch_count));
        CHECK(bitwise_equal(a.codes, b.codes));
        CHECK(a.visible == b.visible);
    }
    SUBCASE("slot validation") {
        CHECK_THROWS_AS(static_cast<void>(encode(bundle, grid, {0, 1, 5})),
                        std::invalid_argument);
        CHECK_THROWS_AS(static_cast<void>(encode(bundle, grid, {2, 1, 0})),
                        std::invalid_argument);
        CHECK_THROWS_AS(static_cast<void>(encode(bundle, grid, {0, 1})), std::invalid_argument);
    }
}

TEST_CASE("interpolate fills the grid and reads the indicator") {
    const ModelConfig cfg = tiny_config();
    const ModelBundle bundle = init_params(cfg);
    Rng rng(9);

    LatentGrid grid;
    grid.codes = Tensor({cfg.patch_count, cfg.latent_dim});
    grid.visible.assign(cfg.patch_count, 0);
    grid.visible[0] = 1;
    for (std::size_t j = 0; j < cfg.latent_dim; ++j)
        grid.codes.at(0, j) = rng.uniform(-1.0, 1.0);

    const LatentGrid full = interpolate(bundle, grid);
    CHECK(full.codes.shape() == Shape{cfg.patch_count, cfg.latent_dim});
    CHECK(full.fully_visible());

    SUBCASE("deterministic") {
        const LatentGrid again = interpolate(bundle, grid);
        CHECK(bitwise_equal(full.codes, again.codes));
    }
    SUBCASE("indicator is a genuine input") {
        LatentGrid flipped = grid;
        flipped.visible[1] = 1;  // same codes, different indicator
        const LatentGrid other = interpolate(bundle, flipped);
        double diff = 0.0;
        for (std::size_t i = 0; i < full.codes.numel(); ++i)
            diff = std::max(diff, std::abs(full.codes[i] - other.codes[i]));
        CHECK(diff > 0.0);
    }
    SUBCASE("zero visible slots is an error") {
        LatentGrid nothing;
        nothing.codes = Tensor({cfg.patch_count, cfg.latent_dim});
        nothing.visible.assign(cfg.patch_count, 0);
        CHECK_THROWS_WITH_AS(static_cast<void>(interpolate(bundle, nothing)),
                             doctest::Contains("at least one visible code"),
                             std::invalid_argument);
    }
}

TEST_CASE("decode maps a full grid to patches") {
    const ModelConfig cfg = tiny_config();
    const ModelBundle bundle = init_params(cfg);
    Rng rng(5);
    LatentGrid grid;
    grid.codes = Tensor({cfg.patch_count, cfg.latent_dim});
    for (std::size_t i = 0; i < grid.codes.numel(); ++i) grid.codes[i] = rng.uniform(-1.0, 1.0);
    grid.visible.assign(cfg.patch_count, 1);

    const Tensor out = decode(bundle, grid);
    CHECK(out.shape() == Shape{cfg.patch_count, cfg.patch_len, cfg.channels});
    CHECK(bitwise_equal(out, decode(bundle, grid)));

    grid.visible[2] = 0;
    CHECK_THROWS_WITH_AS(static_cast<void>(decode(bundle, grid)),
                         doctest::Contains("partially populated"), std::invalid_argument);
}

TEST_CASE("loss values match the stated examples") {
    // identical inputs: each patch contributes sqrt(eps) = 1e-6
    Rng rng(8);
    Tensor x({6, 4, 5});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    CHECK(loss_auto(x, x) <= 6.0 * 1e-6);

    // single-entry norm
    const Tensor zero({1, 1, 1}, {0.0});
    const Tensor three({1, 1, 1}, {3.0});
    CHECK(loss_auto(zero, three) == doctest::Approx(3.0).epsilon(1e-9));

    // 3-4-5 in latent space
    const Tensor teacher({1, 2}, {0.0, 0.0});
    const Tensor restored({1, 2}, {3.0, 4.0});
    CHECK(loss_embed(teacher, restored) == doctest::Approx(5.0).epsilon(1e-9));

    // shape mismatch and empty-mask errors
    CHECK_THROWS_AS(static_cast<void>(loss_auto(x, zero)), std::invalid_argument);
    CHECK_THROWS_WITH_AS(static_cast<void>(loss_embed(Tensor({0, 2}), Tensor({0, 2}))),
                         doctest::Contains("no masked patches"), std::invalid_argument);
}

TEST_CASE("loss_auto equals the brute-force double loop") {
    Rng rng(14);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t t = 1 + rng.below(6), p = 1 + rng.below(4), c = 1 + rng.below(3);
        Tensor x({t, p, c}), y({t, p, c});
        for (std::size_t i = 0; i < x.numel(); ++i) {
            x[i] = rng.uniform(-2.0, 2.0);
            y[i] = rng.uniform(-2.0, 2.0);
        }
        const double expected = oracles::brute_force_patch_norm_loss(x, y, kSqrtEpsilon);
        CHECK(std::abs(loss_auto(x, y) - expected) <= 1e-12);
        CHECK(loss_auto(x, y) >= 0.0);
        // loss_recon shares the formula bitwise
        CHECK(loss_recon(x, y) == loss_auto(x, y));
    }
}

TEST_CASE("batch mean loss is permutation covariant") {
    Rng rng(15);
    const ModelConfig cfg = tiny_config();
    std::vector<std::pair<Tensor, Tensor>> batch;
    for (int i = 0; i < 8; ++i) {
        batch.emplace_back(random_grid(rng, cfg), random_grid(rng, cfg));
    }
    auto mean_of = [&](const std::vector<std::size_t>& order) {
        double acc = 0.0;
        for (std::size_t idx : order) acc += loss_auto(batch[idx].first, batch[idx].second);
        return acc / static_cast<double>(order.size());
    };
    std::vector<std::size_t> order = {0, 1, 2, 3, 4, 5, 6, 7};
    const double forward_mean = mean_of(order);
    std::reverse(order.begin(), order.end());
    CHECK(std::abs(mean_of(order) - forward_mean) <= 1e-12);
    std::vector<std::size_t> shuffled = {3, 7, 0, 5, 2, 6, 1, 4};
    CHECK(std::abs(mean_of(shuffled) - forward_mean) <= 1e-12);
}

TEST_CASE("embedding loss blocks the teacher branch") {
    Rng rng(22);
    Tensor teacher({2, 3}), restored({2, 3});
    for (std::size_t i = 0; i < teacher.numel(); ++i) {
        teacher[i] = rng.uniform(-1.0, 1.0);
        restored[i] = rng.uniform(-1.0, 1.0);
    }
    ParamStore both;
    both.insert("teacher", teacher);
    both.insert("restored", restored);
    GraphFn f = [&](Tape& tape, ParamBinder& bind) {
        return loss_embed_graph(tape, bind("restored"), both.at("teacher"));
    };
    const GradMap grads = backward(f, both);
    for (std::size_t i = 0; i < teacher.numel(); ++i) CHECK(grads.at("teacher")[i] == 0.0);

    ParamStore restored_only;
    restored_only.insert("restored", restored);
    GraphFn fr = [&](Tape& tape, ParamBinder& bind) {
        return loss_embed_graph(tape, bind("restored"), teacher);
    };
    CHECK(grad_check(fr, restored_only, 1e-5) < 1e-4);
}

TEST_CASE("end-to-end gradients match finite differences on the tiny config") {
    const ModelConfig cfg = tiny_config();
    const ModelBundle bundle = init_params(cfg);
    Rng rng(33);
    const Tensor full = random_grid(rng, cfg);
    const std::vector<std::size_t> visible_slots = {0, 2};
    const std::vector<std::size_t> masked_slots = {1};
    Tensor visible({2, cfg.patch_len, cfg.channels});
    for (std::size_t j = 0; j < cfg.patch_values(); ++j) {
        visible[j] = full[0 * cfg.patch_values() + j];
        visible[cfg.patch_values() + j] = full[2 * cfg.patch_values() + j];
    }

    SUBCASE("autoencoder path differentiates encoder and decoder") {
        ParamStore params = subset(bundle.params, {"enc.", "dec."});
        GraphFn f = [&](Tape& tape, ParamBinder& bind) {
            GridVar enc = encode_graph(tape, bind, cfg, full, all_slots(cfg.patch_count));
            Var dec = decode_graph(tape, bind, cfg, enc.codes);
            return loss_auto_graph(tape, dec, full);
        };
        CHECK(grad_check(f, params, 1e-5) < 1e-4);
    }

    SUBCASE("embedding path differentiates the interpolator under frozen codes") {
        const LatentGrid teacher_grid = encode(bundle, full, all_slots(cfg.patch_count));
        Tensor teacher({1, cfg.latent_dim});
        for (std::size_t j = 0; j < cfg.latent_dim; ++j) teacher[j] = teacher_grid.codes.at(1, j);
        const LatentGrid enc = encode(bundle, visible, visible_slots);

        ParamStore params = subset(bundle.params, {"interp."});
        GraphFn f = [&](Tape& tape, ParamBinder& bind) {
            GridVar gv{tape.constant(enc.codes), enc.visible};
            Var restored_full = interpolate_graph(tape, bind, cfg, gv);
            Var restored = take_rows(tape, restored_full, masked_slots);
            return loss_embed_graph(tape, restored, teacher);
        };
        CHECK(grad_check(f, params, 1e-5) < 1e-4);
    }

    SUBCASE("reconstruction path differentiates all three networks") {
        ParamStore params = subset(bundle.params, {"enc.", "interp.", "dec."});
        GraphFn f = [&](Tape& tape, ParamBinder& bind) {
            GridVar enc = encode_graph(tape, bind, cfg, visible, visible_slots);
            Var codes = interpolate_graph(tape, bind, cfg, enc);
            Var dec = decode_graph(tape, bind, cfg, codes);
            return loss_recon_graph(tape, dec, full);
        };
        CHECK(grad_check(f, params, 1e-5) < 1e-4);
    }
}
