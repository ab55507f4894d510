// Three-phase training: (1) encoder+decoder pretraining on full grids,
// (2) interpolator regression onto detached teacher codes with the encoder
// and decoder frozen, (3) joint training of all three networks on masked
// reconstruction. Single-threaded over batches; every loss value and final
// parameter is a bitwise-deterministic function of (seed, data, config).
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "interpomae/autodiff.hpp"
#include "interpomae/data.hpp"
#include "interpomae/model.hpp"

namespace interpomae {

struct TrainConfig {
    std::size_t phase1_epochs = 200;
    std::size_t phase2_epochs = 200;
    std::size_t phase3_epochs = 400;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    MaskSpec mask_spec = MaskSpec::uniform(0);  // phases 2-3
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate() const;
};

struct LossRecord {
    int phase = 0;
    std::size_t epoch = 0;  // 1-based within the phase
    double loss = 0.0;
};

// First/second moments aligned with ParamStore insertion order.
struct AdamState {
    std::size_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    void reset(const ParamStore& params);
};

// Standard Adam with bias correction. Only parameters present in `grads`
// are touched; t is the 1-based step index.
void adam_step(ParamStore& params, const GradMap& grads, AdamState& moments,
               const TrainConfig& cfg, std::size_t t);

// Resumable training state. `phase` is the phase about to run (4 = done) and
// `epoch` the number of epochs of it already completed.
struct Checkpoint {
    ModelBundle bundle;
    TrainConfig train;
    std::uint32_t phase = 1;
    std::size_t epoch = 0;
    AdamState moments;
    std::array<std::uint64_t, 4> rng_state{};
};

Checkpoint make_checkpoint(ModelBundle bundle, TrainConfig cfg);

using EpochCallback = std::function<void(const LossRecord&)>;

// Runs phase `phase` (which must be the checkpoint's current phase) from the
// recorded epoch to its configured epoch count. The state is fully
// consistent every time the callback fires, so saving inside the callback
// yields a resumable epoch-boundary checkpoint.
void run_phase(Checkpoint& state, const std::vector<PatchGrid>& data, int phase,
               const EpochCallback& on_epoch = {});

// Runs all remaining phases in order.
void run_training(Checkpoint& state, const std::vector<PatchGrid>& data,
                  const EpochCallback& on_epoch = {});

// Single-phase conveniences: fresh optimizer/rng from cfg.seed, one phase,
// updated bundle out.
ModelBundle phase1_pretrain(const ModelBundle& bundle, const std::vector<PatchGrid>& data,
                            const TrainConfig& cfg, std::vector<LossRecord>* log = nullptr);
ModelBundle phase2_interpolator(const ModelBundle& bundle, const std::vector<PatchGrid>& data,
                                const TrainConfig& cfg, std::vector<LossRecord>* log = nullptr);
ModelBundle phase3_joint(const ModelBundle& bundle, const std::vector<PatchGrid>& data,
                         const TrainConfig& cfg, std::vector<LossRecord>* log = nullptr);

// Versioned little-endian binary checkpoint; save -> load -> save is
// byte-identical. Loading validates parameter names and shapes against the
// stored config and rejects truncated or over-long files.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Normalize every series with `stats` and cut into P-step patches.
std::vector<PatchGrid> prepare_dataset(const std::vector<Series>& series, const NormStats& stats,
                                       std::size_t patch_len);

void write_loss_log(const std::string& path, const std::vector<LossRecord>& records);

}  // namespace interpomae
