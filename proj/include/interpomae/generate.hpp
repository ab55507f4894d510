// Mask-driven synthesis and the downstream tasks built on the trained
// model: denoising (empty mask), imputation (masked forward pass with the
// observed patches spliced back verbatim), and dataset augmentation.
//
// Synthesis returns the full decoded grid, including originally visible
// positions; imputation is the one path that preserves observed values
// bit for bit.
#pragma once

#include <cstdint>
#include <vector>

#include "interpomae/data.hpp"
#include "interpomae/model.hpp"
#include "interpomae/rng.hpp"

namespace interpomae {

// normalize -> patchify -> sample mask -> encode visible -> interpolate ->
// decode -> unpatchify -> denormalize. The mask is drawn from `spec` with
// `rng`; an empty mask consumes no randomness.
Series synthesize(const ModelBundle& bundle, const Series& input, const MaskSpec& spec, Rng& rng);

// synthesize with the empty mask; no rng is consumed.
Series denoise(const ModelBundle& bundle, const Series& input);

// Restores only the missing patches; observed patches are copied from the
// input verbatim.
Series impute(const ModelBundle& bundle, const Series& input, const MaskPattern& missing);

// k synthesize calls per source series, each with a sub-generator derived
// deterministically from (seed, series index, copy index). Output ids are
// "<source-id>#<copy>".
std::vector<Series> augment(const ModelBundle& bundle, const std::vector<Series>& dataset,
                            std::size_t copies, const MaskSpec& spec, std::uint64_t seed);

}  // namespace interpomae
