// The three networks: a stacked-GRU encoder that maps visible patches to
// latent codes, a fully connected interpolator that restores codes at masked
// slots, and a stacked-GRU decoder that maps a full code grid back to
// patches. Plus the three norm-based training losses.
//
// The interpolator consumes the zero-filled code grid concatenated with a
// per-slot visibility indicator, flattened to length T*(d+1), and restores
// the codes at masked slots; visible slots keep their encoder codes. There
// is no learned mask-token embedding anywhere in the parameterization;
// masked slots are exactly zero with indicator 0 until restoration.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "interpomae/autodiff.hpp"
#include "interpomae/data.hpp"
#include "interpomae/tensor.hpp"

namespace interpomae {

struct ModelConfig {
    std::size_t patch_count = 0;   // T
    std::size_t patch_len = 0;     // P
    std::size_t channels = 0;      // C
    std::size_t latent_dim = 0;    // d
    std::size_t enc_layers = 2;
    std::size_t dec_layers = 2;
    std::size_t enc_hidden = 24;
    std::size_t dec_hidden = 24;
    std::size_t interp_layers = 2;  // hidden tanh layers; a linear output layer follows
    std::size_t interp_hidden = 0;
    std::uint64_t seed = 0;

    std::size_t patch_values() const { return patch_len * channels; }
    void validate() const;
};

// T slots of d-dimensional codes plus a visibility flag per slot. Slots with
// visible == 0 hold exactly zero vectors until the interpolator fills them.
struct LatentGrid {
    Tensor codes;                        // [T, d]
    std::vector<std::uint8_t> visible;   // length T

    bool fully_visible() const;
};

struct ModelBundle {
    ModelConfig config;
    ParamStore params;
    NormStats norm;
};

// Deterministic initialization: weights ~ U[-a, a] with
// a = sqrt(6 / (fan_in + fan_out)) per matrix, biases zero except the GRU
// update-gate biases, which start at +1.
ModelBundle init_params(const ModelConfig& config);

// Parameter names and shapes implied by a config, in insertion order. Used
// for checkpoint validation and for auditing the parameter inventory.
std::vector<std::pair<std::string, Shape>> expected_param_shapes(const ModelConfig& config);

// --- graph-level forwards (shared by training and inference) ---

struct GridVar {
    Var codes;                          // [T, d]
    std::vector<std::uint8_t> visible;  // length T
};

// patches [K, P, C] consumed in temporal order as K steps of the stacked
// GRU; each patch is flattened step-major, channel-minor to a P*C vector.
// The top hidden state of step k is projected to d dims and written to
// slot slots[k]. slots must be strictly increasing, each in [0, T).
GridVar encode_graph(Tape& tape, ParamBinder& bind, const ModelConfig& config,
                     const Tensor& patches, const std::vector<std::size_t>& slots);

// Restores masked slots from the flattened (codes, indicator) input; visible
// slots pass through unchanged. Requires at least one visible slot.
Var interpolate_graph(Tape& tape, ParamBinder& bind, const ModelConfig& config,
                      const GridVar& grid);

// codes [T, d] -> patches [T, P, C].
Var decode_graph(Tape& tape, ParamBinder& bind, const ModelConfig& config, Var codes);

// Sum over patches of the unsquared Euclidean norm of the per-patch error,
// sqrt(x + 1e-12) at the root. prediction [T,P,C] vs target of equal shape.
Var loss_auto_graph(Tape& tape, Var prediction, const Tensor& target);

// Same functional form; the distinction is the data path (prediction comes
// from masked input through encode -> interpolate -> decode).
Var loss_recon_graph(Tape& tape, Var prediction, const Tensor& target);

// Sum over masked slots of the unsquared Euclidean distance between teacher
// and restored codes, both [M, d] with M >= 1. The teacher enters as plain
// values, so no gradient can reach the encoder through it.
Var loss_embed_graph(Tape& tape, Var restored, const Tensor& teacher);

// --- value-level wrappers ---

LatentGrid encode(const ModelBundle& bundle, const Tensor& patches,
                  const std::vector<std::size_t>& slots);
LatentGrid interpolate(const ModelBundle& bundle, const LatentGrid& grid);
Tensor decode(const ModelBundle& bundle, const LatentGrid& grid);

double loss_auto(const Tensor& target, const Tensor& prediction);
double loss_recon(const Tensor& target, const Tensor& prediction);
double loss_embed(const Tensor& teacher, const Tensor& restored);

}  // namespace interpomae
