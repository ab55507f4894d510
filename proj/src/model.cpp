#include "interpomae/model.hpp"

#include <cmath>
#include <stdexcept>

#include "interpomae/rng.hpp"

namespace interpomae {

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw std::invalid_argument(std::string("model config: ") + name +
                                                " must be positive");
    };
    positive(patch_count, "patch count");
    positive(patch_len, "patch length");
    positive(channels, "channels");
    positive(latent_dim, "latent dim");
    positive(enc_layers, "encoder layers");
    positive(dec_layers, "decoder layers");
    positive(enc_hidden, "encoder hidden width");
    positive(dec_hidden, "decoder hidden width");
    positive(interp_layers, "interpolator layers");
    positive(interp_hidden, "interpolator hidden width");
    if (latent_dim > enc_hidden) {
        throw std::invalid_argument("model config: latent dim " + std::to_string(latent_dim) +
                                    " exceeds encoder hidden width " +
                                    std::to_string(enc_hidden));
    }
}

bool LatentGrid::fully_visible() const {
    for (std::uint8_t v : visible)
        if (!v) return false;
    return true;
}

namespace {

const char* const kGateNames[3] = {"z", "r", "n"};

void push_gru_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                     std::size_t layers, std::size_t input, std::size_t hidden) {
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = (l == 0) ? input : hidden;
        const std::string base = prefix + ".l" + std::to_string(l) + ".";
        for (const char* g : kGateNames) {
            out.emplace_back(base + "W" + g, Shape{hidden, in});
            out.emplace_back(base + "U" + g, Shape{hidden, hidden});
            out.emplace_back(base + "b" + g, Shape{hidden});
        }
    }
}

}  // namespace

std::vector<std::pair<std::string, Shape>> expected_param_shapes(const ModelConfig& c) {
    std::vector<std::pair<std::string, Shape>> out;
    push_gru_shapes(out, "enc", c.enc_layers, c.patch_values(), c.enc_hidden);
    out.emplace_back("enc.proj.W", Shape{c.latent_dim, c.enc_hidden});
    out.emplace_back("enc.proj.b", Shape{c.latent_dim});

    const std::size_t interp_in = c.patch_count * (c.latent_dim + 1);
    std::size_t in = interp_in;
    for (std::size_t l = 0; l < c.interp_layers; ++l) {
        const std::string base = "interp.l" + std::to_string(l) + ".";
        out.emplace_back(base + "W", Shape{c.interp_hidden, in});
        out.emplace_back(base + "b", Shape{c.interp_hidden});
        in = c.interp_hidden;
    }
    out.emplace_back("interp.out.W", Shape{c.patch_count * c.latent_dim, in});
    out.emplace_back("interp.out.b", Shape{c.patch_count * c.latent_dim});

    push_gru_shapes(out, "dec", c.dec_layers, c.latent_dim, c.dec_hidden);
    out.emplace_back("dec.proj.W", Shape{c.patch_values(), c.dec_hidden});
    out.emplace_back("dec.proj.b", Shape{c.patch_values()});
    return out;
}

ModelBundle init_params(const ModelConfig& config) {
    config.validate();
    Rng rng(config.seed);
    ModelBundle bundle;
    bundle.config = config;
    for (const auto& [name, shape] : expected_param_shapes(config)) {
        Tensor t(shape);
        if (shape.size() == 2) {
            // Xavier uniform over fan_in + fan_out
            const double a = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-a, a);
        } else if (name.size() >= 2 && name.compare(name.size() - 2, 2, "bz") == 0) {
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = 1.0;  // update gate: keep state
        }
        bundle.params.insert(name, std::move(t));
    }
    return bundle;
}

namespace {

// One GRU step: h' = z (.) h + (1 - z) (.) n with
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   n = tanh(Wn x + r (.) (Un h) + bn)
Var gru_step(Tape& tape, ParamBinder& bind, const std::string& base, Var x, Var h, Var ones) {
    Var z = tape.sigmoid(tape.add(
        tape.add(tape.matmul(bind(base + "Wz"), x), tape.matmul(bind(base + "Uz"), h)),
        bind(base + "bz")));
    Var r = tape.sigmoid(tape.add(
        tape.add(tape.matmul(bind(base + "Wr"), x), tape.matmul(bind(base + "Ur"), h)),
        bind(base + "br")));
    Var n = tape.tanh(tape.add(
        tape.add(tape.matmul(bind(base + "Wn"), x), tape.mul(r, tape.matmul(bind(base + "Un"), h))),
        bind(base + "bn")));
    return tape.add(tape.mul(z, h), tape.mul(tape.sub(ones, z), n));
}

// Runs the stacked GRU over a sequence of 1-D step inputs and returns the
// top-layer hidden state after each step.
std::vector<Var> run_stacked_gru(Tape& tape, ParamBinder& bind, const std::string& prefix,
                                 std::size_t layers, std::size_t hidden,
                                 const std::vector<Var>& steps) {
    Var ones = tape.constant(Tensor::full({hidden}, 1.0));
    std::vector<Var> state(layers, tape.constant(Tensor({hidden})));
    std::vector<Var> top;
    top.reserve(steps.size());
    for (Var x : steps) {
        for (std::size_t l = 0; l < layers; ++l) {
            const std::string base = prefix + ".l" + std::to_string(l) + ".";
            state[l] = gru_step(tape, bind, base, x, state[l], ones);
            x = state[l];
        }
        top.push_back(state[layers - 1]);
    }
    return top;
}

Var linear(Tape& tape, ParamBinder& bind, const std::string& base, Var x) {
    return tape.add(tape.matmul(bind(base + "W"), x), bind(base + "b"));
}

Var patch_norm_sum(Tape& tape, Var prediction, const Tensor& target, const char* op_name) {
    const Tensor& pred = tape.value(prediction);
    if (!pred.same_shape(target)) {
        throw std::invalid_argument(std::string(op_name) + ": shape mismatch " +
                                    shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    }
    const std::size_t rows = pred.dim(0);
    if (rows == 0) {
        throw std::invalid_argument(std::string(op_name) + ": no patches to compare");
    }
    Var diff = tape.sub(prediction, tape.constant(target));
    Var total{};
    for (std::size_t t = 0; t < rows; ++t) {
        Var row = tape.slice(diff, 0, t, 1);
        Var term = tape.sqrt_eps(tape.sum(tape.mul(row, row)));
        total = (t == 0) ? term : tape.add(total, term);
    }
    return total;
}

}  // namespace

GridVar encode_graph(Tape& tape, ParamBinder& bind, const ModelConfig& config,
                     const Tensor& patches, const std::vector<std::size_t>& slots) {
    if (patches.rank() != 3 || patches.dim(1) != config.patch_len ||
        patches.dim(2) != config.channels) {
        throw std::invalid_argument("encode: patches shape " + shape_str(patches.shape()) +
                                    " does not match config [K," +
                                    std::to_string(config.patch_len) + "," +
                                    std::to_string(config.channels) + "]");
    }
    const std::size_t k = patches.dim(0);
    if (k == 0) throw std::invalid_argument("encode: at least one visible patch required");
    if (slots.size() != k) {
        throw std::invalid_argument("encode: " + std::to_string(k) + " patches but " +
                                    std::to_string(slots.size()) + " slot indices");
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i] >= config.patch_count) {
            throw std::invalid_argument("encode: slot index " + std::to_string(slots[i]) +
                                        " out of range for T=" +
                                        std::to_string(config.patch_count));
        }
        if (i > 0 && slots[i] <= slots[i - 1]) {
            throw std::invalid_argument("encode: slot indices must be strictly increasing");
        }
    }

    Var inputs = tape.constant(
        Tensor({k, config.patch_values()}, patches.vec()));  // flatten each patch
    std::vector<Var> steps;
    steps.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        steps.push_back(tape.reshape(tape.slice(inputs, 0, i, 1), {config.patch_values()}));
    }
    const std::vector<Var> top =
        run_stacked_gru(tape, bind, "enc", config.enc_layers, config.enc_hidden, steps);

    GridVar grid;
    grid.visible.assign(config.patch_count, 0);
    Var zero_row = tape.constant(Tensor({1, config.latent_dim}));
    std::vector<Var> rows(config.patch_count, zero_row);
    for (std::size_t i = 0; i < k; ++i) {
        Var code = linear(tape, bind, "enc.proj.", top[i]);
        rows[slots[i]] = tape.reshape(code, {1, config.latent_dim});
        grid.visible[slots[i]] = 1;
    }
    grid.codes = tape.concat(rows, 0);
    return grid;
}

Var interpolate_graph(Tape& tape, ParamBinder& bind, const ModelConfig& config,
                      const GridVar& grid) {
    if (grid.visible.size() != config.patch_count) {
        throw std::invalid_argument("interpolate: indicator length " +
                                    std::to_string(grid.visible.size()) + " does not match T=" +
                                    std::to_string(config.patch_count));
    }
    bool any_visible = false;
    Tensor indicator({config.patch_count});
    for (std::size_t t = 0; t < config.patch_count; ++t) {
        indicator[t] = grid.visible[t] ? 1.0 : 0.0;
        any_visible = any_visible || grid.visible[t];
    }
    if (!any_visible) {
        throw std::invalid_argument("interpolate: interpolator requires at least one visible code");
    }
    Var flat = tape.reshape(grid.codes, {config.patch_count * config.latent_dim});
    Var x = tape.concat({flat, tape.constant(std::move(indicator))}, 0);
    for (std::size_t l = 0; l < config.interp_layers; ++l) {
        x = tape.tanh(linear(tape, bind, "interp.l" + std::to_string(l) + ".", x));
    }
    Var out = linear(tape, bind, "interp.out.", x);
    Var restored = tape.reshape(out, {config.patch_count, config.latent_dim});

    // Only missing codes are restored from the network; visible slots pass
    // their encoder codes through unchanged, so a fully visible grid reaches
    // the decoder exactly as the encoder produced it.
    std::vector<Var> rows;
    rows.reserve(config.patch_count);
    for (std::size_t t = 0; t < config.patch_count; ++t) {
        rows.push_back(tape.slice(grid.visible[t] ? grid.codes : restored, 0, t, 1));
    }
    return tape.concat(rows, 0);
}

Var decode_graph(Tape& tape, ParamBinder& bind, const ModelConfig& config, Var codes) {
    const Tensor& cv = tape.value(codes);
    if (cv.rank() != 2 || cv.dim(0) != config.patch_count || cv.dim(1) != config.latent_dim) {
        throw std::invalid_argument("decode: codes shape " + shape_str(cv.shape()) +
                                    " does not match [" + std::to_string(config.patch_count) +
                                    "," + std::to_string(config.latent_dim) + "]");
    }
    std::vector<Var> steps;
    steps.reserve(config.patch_count);
    for (std::size_t t = 0; t < config.patch_count; ++t) {
        steps.push_back(tape.reshape(tape.slice(codes, 0, t, 1), {config.latent_dim}));
    }
    const std::vector<Var> top =
        run_stacked_gru(tape, bind, "dec", config.dec_layers, config.dec_hidden, steps);
    std::vector<Var> rows;
    rows.reserve(config.patch_count);
    for (Var h : top) {
        rows.push_back(tape.reshape(linear(tape, bind, "dec.proj.", h), {1, config.patch_values()}));
    }
    Var grid = tape.concat(rows, 0);
    return tape.reshape(grid, {config.patch_count, config.patch_len, config.channels});
}

Var loss_auto_graph(Tape& tape, Var prediction, const Tensor& target) {
    return patch_norm_sum(tape, prediction, target, "loss_auto");
}

Var loss_recon_graph(Tape& tape, Var prediction, const Tensor& target) {
    return patch_norm_sum(tape, prediction, target, "loss_recon");
}

Var loss_embed_graph(Tape& tape, Var restored, const Tensor& teacher) {
    if (teacher.rank() != 2 || teacher.dim(0) == 0) {
        throw std::invalid_argument(
            "loss_embed: embedding loss undefined with no masked patches");
    }
    return patch_norm_sum(tape, restored, teacher, "loss_embed");
}

// ---------------------------------------------------------------------------
// value-level wrappers: run the graph forward on a throwaway tape

LatentGrid encode(const ModelBundle& bundle, const Tensor& patches,
                  const std::vector<std::size_t>& slots) {
    Tape tape;
    ParamBinder bind(tape, bundle.params);
    const GridVar grid = encode_graph(tape, bind, bundle.config, patches, slots);
    return LatentGrid{tape.value(grid.codes), grid.visible};
}

LatentGrid interpolate(const ModelBundle& bundle, const LatentGrid& grid) {
    Tape tape;
    ParamBinder bind(tape, bundle.params);
    GridVar gv{tape.constant(grid.codes), grid.visible};
    Var full = interpolate_graph(tape, bind, bundle.config, gv);
    return LatentGrid{tape.value(full),
                      std::vector<std::uint8_t>(bundle.config.patch_count, 1)};
}

Tensor decode(const ModelBundle& bundle, const LatentGrid& grid) {
    if (!grid.fully_visible()) {
        throw std::invalid_argument("decode: grid is only partially populated");
    }
    Tape tape;
    ParamBinder bind(tape, bundle.params);
    Var out = decode_graph(tape, bind, bundle.config, tape.constant(grid.codes));
    return tape.value(out);
}

double loss_auto(const Tensor& target, const Tensor& prediction) {
    Tape tape;
    Var loss = loss_auto_graph(tape, tape.constant(prediction), target);
    return tape.value(loss)[0];
}

double loss_recon(const Tensor& target, const Tensor& prediction) {
    Tape tape;
    Var loss = loss_recon_graph(tape, tape.constant(prediction), target);
    return tape.value(loss)[0];
}

double loss_embed(const Tensor& teacher, const Tensor& restored) {
    Tape tape;
    Var loss = loss_embed_graph(tape, tape.constant(restored), teacher);
    return tape.value(loss)[0];
}

}  // namespace interpomae
