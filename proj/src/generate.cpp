#include "interpomae/generate.hpp"

#include <stdexcept>

namespace interpomae {

namespace {

void check_geometry(const ModelBundle& bundle, const Series& input) {
    const ModelConfig& cfg = bundle.config;
    if (input.length() != cfg.patch_count * cfg.patch_len || input.channels() != cfg.channels) {
        throw std::invalid_argument(
            "generate: series '" + input.id + "' has geometry [" +
            std::to_string(input.length()) + "," + std::to_string(input.channels()) +
            "], model expects [" + std::to_string(cfg.patch_count * cfg.patch_len) + "," +
            std::to_string(cfg.channels) + "]");
    }
    if (!bundle.norm.fitted()) {
        throw std::logic_error("generate: model bundle carries no normalization stats");
    }
}

// The masked encode -> interpolate -> decode pass shared by every task.
// Returns the decoded grid in the original (denormalized) domain.
PatchGrid run_masked_pass(const ModelBundle& bundle, const Series& input,
                          const MaskPattern& mask) {
    const ModelConfig& cfg = bundle.config;
    const Series normalized = apply_normalizer(bundle.norm, input);
    const PatchGrid grid = patchify(normalized, cfg.patch_len);

    LatentGrid enc;
    if (mask.masked_count() == 0) {
        std::vector<std::size_t> all(cfg.patch_count);
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        enc = encode(bundle, grid.patches, all);
    } else {
        auto [visible, masked_part] = split_patches(grid, mask);
        (void)masked_part;
        enc = encode(bundle, visible, mask.visible());
    }
    const LatentGrid full = interpolate(bundle, enc);
    const Tensor decoded = decode(bundle, full);
    const Series out =
        invert_normalizer(bundle.norm, unpatchify(PatchGrid{decoded, input.id}));
    return patchify(out, cfg.patch_len);
}

}  // namespace

Series synthesize(const ModelBundle& bundle, const Series& input, const MaskSpec& spec,
                  Rng& rng) {
    check_geometry(bundle, input);
    const MaskPattern mask = sample_mask(bundle.config.patch_count, spec, rng);
    return unpatchify(run_masked_pass(bundle, input, mask));
}

Series denoise(const ModelBundle& bundle, const Series& input) {
    check_geometry(bundle, input);
    MaskPattern empty;
    empty.total = bundle.config.patch_count;
    return unpatchify(run_masked_pass(bundle, input, empty));
}

Series impute(const ModelBundle& bundle, const Series& input, const MaskPattern& missing) {
    check_geometry(bundle, input);
    if (missing.total != bundle.config.patch_count) {
        throw std::invalid_argument("impute: pattern covers T=" + std::to_string(missing.total) +
                                    " patches, model expects T=" +
                                    std::to_string(bundle.config.patch_count));
    }
    if (missing.masked_count() == 0) return input;  // nothing to restore

    PatchGrid decoded = run_masked_pass(bundle, input, missing);
    const PatchGrid original = patchify(input, bundle.config.patch_len);
    const std::size_t stride = bundle.config.patch_values();
    for (std::size_t t = 0; t < bundle.config.patch_count; ++t) {
        if (missing.is_masked(t)) continue;  // keep the decoded value only where data is missing
        const double* src = original.patches.data() + t * stride;
        std::copy(src, src + stride, decoded.patches.data() + t * stride);
    }
    return unpatchify(decoded);
}

std::vector<Series> augment(const ModelBundle& bundle, const std::vector<Series>& dataset,
                            std::size_t copies, const MaskSpec& spec, std::uint64_t seed) {
    if (copies < 1) throw std::invalid_argument("augment: copies must be >= 1");
    std::vector<Series> out;
    out.reserve(dataset.size() * copies);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        for (std::size_t k = 0; k < copies; ++k) {
            Rng rng(Rng::mix(seed, i, k));
            Series synth = synthesize(bundle, dataset[i], spec, rng);
            synth.id = dataset[i].id + "#" + std::to_string(k);
            out.push_back(std::move(synth));
        }
    }
    return out;
}

}  // namespace interpomae
