#include "interpomae/train.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "interpomae/rng.hpp"

namespace interpomae {

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("train config: learning rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("train config: betas must lie in (0, 1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("train config: adam epsilon must be positive");
}

void AdamState::reset(const ParamStore& params) {
    step = 0;
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (const std::string& name : params.names()) {
        m.emplace_back(params.at(name).shape());
        v.emplace_back(params.at(name).shape());
    }
}

void adam_step(ParamStore& params, const GradMap& grads, AdamState& moments,
               const TrainConfig& cfg, std::size_t t) {
    if (t < 1) throw std::invalid_argument("adam_step: step index must be >= 1");
    if (moments.m.size() != params.size()) {
        throw std::logic_error("adam_step: moments not aligned with parameter store");
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const auto& names = params.names();
    for (std::size_t pi = 0; pi < names.size(); ++pi) {
        auto it = grads.find(names[pi]);
        if (it == grads.end()) continue;  // frozen this phase
        Tensor& p = params.at(names[pi]);
        const Tensor& g = it->second;
        if (!g.same_shape(p)) {
            throw std::invalid_argument("adam_step: gradient shape " + shape_str(g.shape()) +
                                        " does not match parameter '" + names[pi] + "' " +
                                        shape_str(p.shape()));
        }
        Tensor& mt = moments.m[pi];
        Tensor& vt = moments.v[pi];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            mt[i] = cfg.beta1 * mt[i] + (1.0 - cfg.beta1) * g[i];
            vt[i] = cfg.beta2 * vt[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = mt[i] / bc1;
            const double vhat = vt[i] / bc2;
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

Checkpoint make_checkpoint(ModelBundle bundle, TrainConfig cfg) {
    cfg.validate();
    Checkpoint ckpt;
    ckpt.bundle = std::move(bundle);
    ckpt.train = cfg;
    ckpt.phase = 1;
    ckpt.epoch = 0;
    ckpt.moments.reset(ckpt.bundle.params);
    ckpt.rng_state = Rng(cfg.seed).state();
    return ckpt;
}

namespace {

std::vector<std::size_t> phase_slots_all(std::size_t t) {
    std::vector<std::size_t> slots(t);
    for (std::size_t i = 0; i < t; ++i) slots[i] = i;
    return slots;
}

GradMap filter_prefixes(GradMap grads, const std::vector<std::string>& prefixes) {
    GradMap out;
    for (auto& [name, g] : grads) {
        for (const std::string& p : prefixes) {
            if (name.rfind(p, 0) == 0) {
                out.emplace(name, std::move(g));
                break;
            }
        }
    }
    return out;
}

Var take_rows(Tape& tape, Var grid, const std::vector<std::size_t>& slots) {
    std::vector<Var> rows;
    rows.reserve(slots.size());
    for (std::size_t s : slots) rows.push_back(tape.slice(grid, 0, s, 1));
    return tape.concat(rows, 0);
}

Tensor take_rows_value(const Tensor& grid, const std::vector<std::size_t>& slots) {
    const std::size_t width = grid.dim(1);
    Tensor out({slots.size(), width});
    for (std::size_t i = 0; i < slots.size(); ++i)
        for (std::size_t j = 0; j < width; ++j) out.at(i, j) = grid.at(slots[i], j);
    return out;
}

void check_geometry(const ModelConfig& cfg, const std::vector<PatchGrid>& data) {
    if (data.empty()) throw std::invalid_argument("train: dataset is empty");
    for (const PatchGrid& g : data) {
        if (g.patch_count() != cfg.patch_count || g.patch_len() != cfg.patch_len ||
            g.channels() != cfg.channels) {
            throw std::invalid_argument(
                "train: series '" + g.origin_id + "' geometry " + shape_str(g.patches.shape()) +
                " does not match config [" + std::to_string(cfg.patch_count) + "," +
                std::to_string(cfg.patch_len) + "," + std::to_string(cfg.channels) + "]");
        }
    }
}

std::size_t masked_count_of(const MaskSpec& spec) {
    return spec.mode == MaskSpec::Mode::Uniform ? spec.count : spec.count * spec.block_size;
}

void check_mask_for_phase(const TrainConfig& cfg, const ModelConfig& model, int phase) {
    const std::size_t m = masked_count_of(cfg.mask_spec);
    if (phase == 2 && m == 0) {
        throw std::invalid_argument(
            "train: phase 2 requires a mask with M >= 1 (embedding loss undefined otherwise)");
    }
    if (m >= model.patch_count && (phase == 2 || phase == 3) && m != 0) {
        throw std::invalid_argument("train: mask spec leaves no visible patches (M=" +
                                    std::to_string(m) + " of T=" +
                                    std::to_string(model.patch_count) + ")");
    }
}

std::size_t phase_epochs(const TrainConfig& cfg, int phase) {
    switch (phase) {
        case 1: return cfg.phase1_epochs;
        case 2: return cfg.phase2_epochs;
        case 3: return cfg.phase3_epochs;
        default: throw std::invalid_argument("train: phase must be 1, 2 or 3");
    }
}

// One optimization epoch. Returns the mean per-sample loss over the epoch.
double train_epoch(Checkpoint& state, const std::vector<PatchGrid>& data, int phase, Rng& rng,
                   const std::vector<Tensor>& teacher_codes, std::size_t epoch_index) {
    const ModelConfig& cfg = state.bundle.config;
    const TrainConfig& tc = state.train;
    const std::vector<std::size_t> full_slots = phase_slots_all(cfg.patch_count);

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (tc.shuffle) {
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
            std::swap(order[i], order[j]);
        }
    }

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size, ++batch_index) {
        const std::size_t end = std::min(begin + tc.batch_size, order.size());
        const std::size_t batch_n = end - begin;
        try {
            MaskPattern mask;
            std::vector<std::size_t> visible_slots;
            if (phase >= 2) {
                mask = sample_mask(cfg.patch_count, tc.mask_spec, rng);
                visible_slots = mask.visible();
            }

            Tape tape;
            ParamBinder bind(tape, state.bundle.params);
            Var total{};
            for (std::size_t bi = begin; bi < end; ++bi) {
                const PatchGrid& grid = data[order[bi]];
                Var item_loss{};
                if (phase == 1) {
                    GridVar enc = encode_graph(tape, bind, cfg, grid.patches, full_slots);
                    Var dec = decode_graph(tape, bind, cfg, enc.codes);
                    item_loss = loss_auto_graph(tape, dec, grid.patches);
                } else if (phase == 2) {
                    const Tensor teacher = take_rows_value(teacher_codes[order[bi]], mask.masked);
                    auto [visible, masked_part] = split_patches(grid, mask);
                    (void)masked_part;
                    // encoder frozen: codes enter the graph as constants
                    const LatentGrid enc = encode(state.bundle, visible, visible_slots);
                    GridVar gv{tape.constant(enc.codes), enc.visible};
                    Var restored_full = interpolate_graph(tape, bind, cfg, gv);
                    Var restored = take_rows(tape, restored_full, mask.masked);
                    item_loss = loss_embed_graph(tape, restored, teacher);
                } else {
                    auto [visible, masked_part] = split_patches(grid, mask);
                    (void)masked_part;
                    GridVar enc = visible_slots.size() == cfg.patch_count
                                      ? encode_graph(tape, bind, cfg, grid.patches, full_slots)
                                      : encode_graph(tape, bind, cfg, visible, visible_slots);
                    Var codes = interpolate_graph(tape, bind, cfg, enc);
                    Var dec = decode_graph(tape, bind, cfg, codes);
                    item_loss = loss_recon_graph(tape, dec, grid.patches);
                }
                total = (bi == begin) ? item_loss : tape.add(total, item_loss);
            }
            Var batch_mean = tape.mul_scalar(total, 1.0 / static_cast<double>(batch_n));
            const double mean_value = tape.value(batch_mean)[0];
            if (!std::isfinite(mean_value)) throw std::runtime_error("non-finite batch loss");
            tape.backward(batch_mean);

            GradMap grads = bind.grads();
            if (phase == 1) {
                grads = filter_prefixes(std::move(grads), {"enc.", "dec."});
            } else if (phase == 2) {
                grads = filter_prefixes(std::move(grads), {"interp."});
            }
            ++state.moments.step;
            adam_step(state.bundle.params, grads, state.moments, tc, state.moments.step);
            epoch_loss += mean_value * static_cast<double>(batch_n);
        } catch (const std::exception& e) {
            throw std::runtime_error("phase " + std::to_string(phase) + ": aborted at epoch " +
                                     std::to_string(epoch_index + 1) + ", batch " +
                                     std::to_string(batch_index + 1) + ": " + e.what());
        }
    }
    return epoch_loss / static_cast<double>(order.size());
}

}  // namespace

void run_phase(Checkpoint& state, const std::vector<PatchGrid>& data, int phase,
               const EpochCallback& on_epoch) {
    state.train.validate();
    check_geometry(state.bundle.config, data);
    const std::size_t epochs = phase_epochs(state.train, phase);
    if (static_cast<int>(state.phase) != phase) {
        throw std::logic_error("train: checkpoint is at phase " + std::to_string(state.phase) +
                               ", cannot run phase " + std::to_string(phase));
    }
    if (epochs > 0 && phase >= 2) check_mask_for_phase(state.train, state.bundle.config, phase);

    if (state.epoch == 0) state.moments.reset(state.bundle.params);

    // Teacher codes are constant through phase 2 because the encoder is
    // frozen; compute them once per entry.
    std::vector<Tensor> teacher_codes;
    if (phase == 2 && state.epoch < epochs) {
        const std::vector<std::size_t> slots = phase_slots_all(state.bundle.config.patch_count);
        teacher_codes.reserve(data.size());
        for (const PatchGrid& grid : data) {
            teacher_codes.push_back(encode(state.bundle, grid.patches, slots).codes);
        }
    }

    Rng rng(0);
    rng.set_state(state.rng_state);
    while (state.epoch < epochs) {
        const double mean = train_epoch(state, data, phase, rng, teacher_codes, state.epoch);
        ++state.epoch;
        state.rng_state = rng.state();
        if (on_epoch) on_epoch(LossRecord{phase, state.epoch, mean});
    }
    ++state.phase;
    state.epoch = 0;
}

void run_training(Checkpoint& state, const std::vector<PatchGrid>& data,
                  const EpochCallback& on_epoch) {
    while (state.phase <= 3) run_phase(state, data, static_cast<int>(state.phase), on_epoch);
}

namespace {

ModelBundle run_single_phase(const ModelBundle& bundle, const std::vector<PatchGrid>& data,
                             const TrainConfig& cfg, int phase, std::vector<LossRecord>* log) {
    Checkpoint state = make_checkpoint(bundle, cfg);
    state.phase = static_cast<std::uint32_t>(phase);
    run_phase(state, data, phase, [&](const LossRecord& rec) {
        if (log) log->push_back(rec);
    });
    return std::move(state.bundle);
}

}  // namespace

ModelBundle phase1_pretrain(const ModelBundle& bundle, const std::vector<PatchGrid>& data,
                            const TrainConfig& cfg, std::vector<LossRecord>* log) {
    return run_single_phase(bundle, data, cfg, 1, log);
}

ModelBundle phase2_interpolator(const ModelBundle& bundle, const std::vector<PatchGrid>& data,
                                const TrainConfig& cfg, std::vector<LossRecord>* log) {
    return run_single_phase(bundle, data, cfg, 2, log);
}

ModelBundle phase3_joint(const ModelBundle& bundle, const std::vector<PatchGrid>& data,
                         const TrainConfig& cfg, std::vector<LossRecord>* log) {
    return run_single_phase(bundle, data, cfg, 3, log);
}

// ---------------------------------------------------------------------------
// checkpoint serialization
//
// Format version 1, little-endian throughout, doubles stored as raw IEEE-754
// bit patterns. Field order:
//   magic "IMAECKPT", u32 version
//   model config: 10x u64 (T, P, C, d, enc/dec layers, enc/dec hidden,
//                 interp layers, interp hidden), u64 seed
//   norm stats:   u8 fitted; if fitted u64 channels, then (f64 min, f64 max)
//                 per channel
//   train config: 4x u64 (epochs1..3, batch), 4x f64 (lr, beta1, beta2, eps),
//                 u8 mask mode, u64 mask count, u64 block size, u64 seed,
//                 u8 shuffle
//   progress:     u32 phase, u64 epoch
//   parameters:   u64 count, then per parameter: string name (u32 len +
//                 bytes), u64 rank, u64 dims, f64 data
//   adam:         u64 step, then per parameter f64 m[], f64 v[]
//   rng:          4x u64

namespace {

constexpr char kMagic[8] = {'I', 'M', 'A', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.append(s);
    }
    void raw(const char* data, std::size_t n) { buf_.append(data, n); }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(next(1)[0]); }
    std::uint32_t u32() {
        const char* p = next(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const char* p = next(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        const char* p = next(n);
        return std::string(p, n);
    }
    const char* next(std::size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw std::runtime_error("checkpoint: unexpected end of checkpoint");
        }
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool exhausted() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

void write_tensor_data(ByteWriter& w, const Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) w.f64(t[i]);
}

void read_tensor_data(ByteReader& r, Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = r.f64();
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    ByteWriter w;
    w.raw(kMagic, sizeof(kMagic));
    w.u32(kVersion);

    const ModelConfig& mc = ckpt.bundle.config;
    for (std::size_t v : {mc.patch_count, mc.patch_len, mc.channels, mc.latent_dim, mc.enc_layers,
                          mc.dec_layers, mc.enc_hidden, mc.dec_hidden, mc.interp_layers,
                          mc.interp_hidden}) {
        w.u64(v);
    }
    w.u64(mc.seed);

    const NormStats& norm = ckpt.bundle.norm;
    w.u8(norm.fitted() ? 1 : 0);
    if (norm.fitted()) {
        w.u64(norm.channels());
        for (std::size_t c = 0; c < norm.channels(); ++c) {
            w.f64(norm.channel_min(c));
            w.f64(norm.channel_max(c));
        }
    }

    const TrainConfig& tc = ckpt.train;
    w.u64(tc.phase1_epochs);
    w.u64(tc.phase2_epochs);
    w.u64(tc.phase3_epochs);
    w.u64(tc.batch_size);
    w.f64(tc.lr);
    w.f64(tc.beta1);
    w.f64(tc.beta2);
    w.f64(tc.eps);
    w.u8(tc.mask_spec.mode == MaskSpec::Mode::Uniform ? 0 : 1);
    w.u64(tc.mask_spec.count);
    w.u64(tc.mask_spec.block_size);
    w.u64(tc.seed);
    w.u8(tc.shuffle ? 1 : 0);

    w.u32(ckpt.phase);
    w.u64(ckpt.epoch);

    const ParamStore& params = ckpt.bundle.params;
    w.u64(params.size());
    for (const std::string& name : params.names()) {
        const Tensor& t = params.at(name);
        w.str(name);
        w.u64(t.rank());
        for (std::size_t d : t.shape()) w.u64(d);
        write_tensor_data(w, t);
    }

    w.u64(ckpt.moments.step);
    if (ckpt.moments.m.size() != params.size() || ckpt.moments.v.size() != params.size()) {
        throw std::logic_error("checkpoint: moments not aligned with parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        write_tensor_data(w, ckpt.moments.m[i]);
        write_tensor_data(w, ckpt.moments.v[i]);
    }

    for (std::uint64_t word : ckpt.rng_state) w.u64(word);
    return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    ByteReader r(bytes);
    const char* magic = r.next(sizeof(kMagic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: not a checkpoint file (bad magic)");
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                                 " (expected " + std::to_string(kVersion) + ")");
    }

    Checkpoint ckpt;
    ModelConfig& mc = ckpt.bundle.config;
    mc.patch_count = r.u64();
    mc.patch_len = r.u64();
    mc.channels = r.u64();
    mc.latent_dim = r.u64();
    mc.enc_layers = r.u64();
    mc.dec_layers = r.u64();
    mc.enc_hidden = r.u64();
    mc.dec_hidden = r.u64();
    mc.interp_layers = r.u64();
    mc.interp_hidden = r.u64();
    mc.seed = r.u64();
    mc.validate();

    if (r.u8()) {
        const std::size_t channels = r.u64();
        std::vector<double> mins(channels), maxs(channels);
        for (std::size_t c = 0; c < channels; ++c) {
            mins[c] = r.f64();
            maxs[c] = r.f64();
        }
        ckpt.bundle.norm = NormStats(std::move(mins), std::move(maxs));
    }

    TrainConfig& tc = ckpt.train;
    tc.phase1_epochs = r.u64();
    tc.phase2_epochs = r.u64();
    tc.phase3_epochs = r.u64();
    tc.batch_size = r.u64();
    tc.lr = r.f64();
    tc.beta1 = r.f64();
    tc.beta2 = r.f64();
    tc.eps = r.f64();
    tc.mask_spec.mode = r.u8() == 0 ? MaskSpec::Mode::Uniform : MaskSpec::Mode::Blocks;
    tc.mask_spec.count = r.u64();
    tc.mask_spec.block_size = r.u64();
    tc.seed = r.u64();
    tc.shuffle = r.u8() != 0;
    tc.validate();

    ckpt.phase = r.u32();
    ckpt.epoch = r.u64();

    const auto expected = expected_param_shapes(mc);
    const std::uint64_t count = r.u64();
    if (count != expected.size()) {
        throw std::runtime_error("checkpoint: holds " + std::to_string(count) +
                                 " parameters but config implies " +
                                 std::to_string(expected.size()));
    }
    for (const auto& [expected_name, expected_shape] : expected) {
        const std::string name = r.str();
        if (name != expected_name) {
            throw std::runtime_error("checkpoint: parameter '" + name + "' where '" +
                                     expected_name + "' was expected");
        }
        const std::size_t rank = r.u64();
        Shape shape(rank);
        for (std::size_t d = 0; d < rank; ++d) shape[d] = r.u64();
        if (shape != expected_shape) {
            throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " +
                                     shape_str(shape) + " but config implies " +
                                     shape_str(expected_shape));
        }
        Tensor t(shape);
        read_tensor_data(r, t);
        ckpt.bundle.params.insert(name, std::move(t));
    }

    ckpt.moments.step = r.u64();
    for (const auto& [name, shape] : expected) {
        (void)name;
        Tensor m(shape), v(shape);
        read_tensor_data(r, m);
        read_tensor_data(r, v);
        ckpt.moments.m.push_back(std::move(m));
        ckpt.moments.v.push_back(std::move(v));
    }

    for (std::uint64_t& word : ckpt.rng_state) word = r.u64();
    if (!r.exhausted()) {
        throw std::runtime_error("checkpoint: trailing bytes after checkpoint payload");
    }
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    const std::string bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

std::vector<PatchGrid> prepare_dataset(const std::vector<Series>& series, const NormStats& stats,
                                       std::size_t patch_len) {
    std::vector<PatchGrid> out;
    out.reserve(series.size());
    for (const Series& s : series) out.push_back(patchify(apply_normalizer(stats, s), patch_len));
    return out;
}

void write_loss_log(const std::string& path, const std::vector<LossRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("loss log: cannot open '" + path + "' for writing");
    out << "phase,epoch,loss\n";
    char buf[32];
    for (const LossRecord& rec : records) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), rec.loss);
        (void)ec;
        out << rec.phase << ',' << rec.epoch << ',' << std::string(buf, ptr) << "\n";
    }
    if (!out) throw std::runtime_error("loss log: write failed for '" + path + "'");
}

}  // namespace interpomae
