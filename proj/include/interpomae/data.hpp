// Dataset ingestion, the Sines generator, per-channel min-max normalization,
// and the patch/mask machinery.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "interpomae/rng.hpp"
#include "interpomae/tensor.hpp"

namespace interpomae {

// One multivariate series: values [L, C], L time steps by C channels.
struct Series {
    Tensor values;
    std::string id;

    std::size_t length() const { return values.dim(0); }
    std::size_t channels() const { return values.dim(1); }
};

// A series cut into T non-overlapping patches of P steps: patches [T, P, C].
struct PatchGrid {
    Tensor patches;
    std::string origin_id;

    std::size_t patch_count() const { return patches.dim(0); }
    std::size_t patch_len() const { return patches.dim(1); }
    std::size_t channels() const { return patches.dim(2); }
};

// Partition of the patch slots {0..T-1} into masked and visible index sets.
struct MaskPattern {
    std::size_t total = 0;
    std::vector<std::size_t> masked;  // sorted, distinct, each < total

    std::size_t masked_count() const { return masked.size(); }
    std::size_t visible_count() const { return total - masked.size(); }
    std::vector<std::size_t> visible() const;
    bool is_masked(std::size_t slot) const;
};

// Generation-time knob: how many patches to hide, and in what arrangement.
struct MaskSpec {
    enum class Mode { Uniform, Blocks };
    Mode mode = Mode::Uniform;
    std::size_t count = 0;       // M for Uniform, number of blocks for Blocks
    std::size_t block_size = 0;  // run length for Blocks

    static MaskSpec uniform(std::size_t m) { return {Mode::Uniform, m, 0}; }
    static MaskSpec blocks(std::size_t b, std::size_t s) { return {Mode::Blocks, b, s}; }
};

// Per-channel min/max over the training split; maps channels affinely to
// [0,1]. Channels with max == min are flagged constant and map to 0.5.
class NormStats {
public:
    NormStats() = default;
    NormStats(std::vector<double> mins, std::vector<double> maxs);

    bool fitted() const { return fitted_; }
    std::size_t channels() const { return min_.size(); }
    double channel_min(std::size_t c) const { return min_[c]; }
    double channel_max(std::size_t c) const { return max_[c]; }
    bool is_constant(std::size_t c) const { return constant_[c]; }

private:
    std::vector<double> min_, max_;
    std::vector<bool> constant_;
    bool fitted_ = false;
};

// CSV ingestion. One row per time step; optional header; optional id column
// (requires a header naming it) grouping rows into several series. Numeric
// parsing is locale-independent; non-finite cells are rejected with their
// row/column location.
std::vector<Series> load_csv(const std::string& path, const std::string& id_column = "");

// Writes series with an `id` column and per-channel headers c0..c{C-1},
// 17 significant digits per value.
void write_csv(const std::string& path, const std::vector<Series>& dataset);

// Sinusoid dataset: channel c of series i is sin(2*pi*f*t + phi) with
// f ~ U[0.01, 0.05] cycles/step and phi ~ U[0, 2*pi), drawn per (series,
// channel).
std::vector<Series> generate_sines(std::size_t n, std::size_t length, std::size_t channels,
                                   std::uint64_t seed);

NormStats fit_normalizer(const std::vector<Series>& train);
Series apply_normalizer(const NormStats& stats, const Series& s);
Series invert_normalizer(const NormStats& stats, const Series& s);

// P must divide L exactly; patch t holds steps [t*P, (t+1)*P). unpatchify is
// the bitwise inverse.
PatchGrid patchify(const Series& s, std::size_t patch_len);
Series unpatchify(const PatchGrid& grid);

// Uniform: M distinct slots without replacement. Blocks: B non-overlapping
// runs of S consecutive slots, uniform over valid placements (rejection
// sampling; infeasible specs error out before any draw).
MaskPattern sample_mask(std::size_t total, const MaskSpec& spec, Rng& rng);

// Splits grid rows into (visible [N,P,C], masked [M,P,C]), each preserving
// temporal order.
std::pair<Tensor, Tensor> split_patches(const PatchGrid& grid, const MaskPattern& mask);

}  // namespace interpomae
