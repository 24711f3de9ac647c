#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nbs/common.hpp"
#include "nbs/correlation.hpp"
#include "nbs/cube.hpp"
#include "nbs/recovery.hpp"
#include "nbs/tensor.hpp"

namespace nbs {

// ============================================================================
// Continuous relaxation of band selection. Each band carries a two-way
// softmax over {pass, drop}; the derived priority g_i = softmax weight of
// "pass" scales band i's channel in the gated cube. The gates are trained by
// first-order alternation on the bilevel objective: model weights descend the
// training loss, gate logits descend the validation loss plus an L2 penalty.
// ============================================================================

struct BandGates {
    std::vector<double> pass_logits;
    std::vector<double> drop_logits;

    BandGates() = default;
    explicit BandGates(int bands)
        : pass_logits(bands, 0.0), drop_logits(bands, 0.0) {}

    int bands() const { return static_cast<int>(pass_logits.size()); }

    // g_i = exp(pass_i) / (exp(pass_i) + exp(drop_i)), always in (0, 1).
    std::vector<double> priority() const {
        std::vector<double> g(pass_logits.size());
        for (size_t i = 0; i < g.size(); ++i) {
            const double m = std::max(pass_logits[i], drop_logits[i]);
            const double ep = std::exp(pass_logits[i] - m);
            const double ed = std::exp(drop_logits[i] - m);
            g[i] = ep / (ep + ed);
        }
        return g;
    }
};

struct SearchConfig {
    int epochs = 50;
    double lr_w = 0.0004;
    double lr_alpha = 0.0004;
    double l2_alpha = 0.01;
    double val_fraction = 0.2;
    double beta = 0.5;
    ModelKind model_kind = ModelKind::kConvSpatial;
    int hidden_width = 16;
    int kernel_size = 3;
    uint64_t seed = 0;
    int batch = 12;  // cubes per step, truncated to dataset size

    void validate() const {
        require(epochs >= 1, "search config: epochs must be >= 1");
        require(lr_w > 0.0, "search config: lr_w must be > 0");
        require(lr_alpha >= 0.0, "search config: lr_alpha must be >= 0");  // 0 freezes alpha
        require(l2_alpha >= 0.0, "search config: l2_alpha must be >= 0");
        require(val_fraction > 0.0 && val_fraction < 1.0,
                "search config: val_fraction must be in (0, 1)");
        require(beta >= 0.0, "search config: beta must be >= 0");
        require(batch >= 1, "search config: batch must be >= 1");
    }
};

struct SearchEpoch {
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::vector<double> priorities;
};

struct SearchResult {
    BandGates gates;
    CorrelationMatrix correlation;
    std::vector<SearchEpoch> history;
    std::vector<double> wavelengths_nm;
    SearchConfig config;
    std::string mode = "nbs";  // "nbs" | "spectral"
};

// Embeds one band plane into an N-channel tensor, all other channels zero
// (the padding operation that gives every gated contribution full cube shape).
inline Tensor spectral_pad(const SpectralCube& cube, int band) {
    require(band >= 0 && band < cube.bands, "spectral_pad: band index out of range");
    Tensor out(cube.height, cube.width, cube.bands);
    std::copy(cube.band_plane(band), cube.band_plane(band) + cube.plane_size(),
              out.plane(band));
    return out;
}

// Channel i = g_i * band plane i. Identical to summing the gated spectral
// paddings (asserted in tests) without materializing N padded tensors.
inline Tensor gated_cube(const SpectralCube& cube, const BandGates& gates) {
    require(gates.bands() == cube.bands, "gated_cube: gate length mismatch");
    const std::vector<double> g = gates.priority();
    Tensor out(cube.height, cube.width, cube.bands);
    for (int b = 0; b < cube.bands; ++b) {
        const double* src = cube.band_plane(b);
        double* dst = out.plane(b);
        for (size_t p = 0; p < cube.plane_size(); ++p) dst[p] = g[b] * src[p];
    }
    return out;
}

struct AlphaPenalty {
    double value = 0.0;
    std::vector<double> grad_pass;
    std::vector<double> grad_drop;
};

// penalty = weight * sum(logit^2) over both logit vectors; gradient 2*w*logit.
inline AlphaPenalty alpha_l2_penalty(const BandGates& gates, double weight) {
    require(weight >= 0.0, "alpha_l2_penalty: weight must be >= 0");
    AlphaPenalty p;
    p.grad_pass.resize(gates.pass_logits.size());
    p.grad_drop.resize(gates.drop_logits.size());
    for (size_t i = 0; i < gates.pass_logits.size(); ++i) {
        p.value += weight * (gates.pass_logits[i] * gates.pass_logits[i] +
                             gates.drop_logits[i] * gates.drop_logits[i]);
        p.grad_pass[i] = 2.0 * weight * gates.pass_logits[i];
        p.grad_drop[i] = 2.0 * weight * gates.drop_logits[i];
    }
    return p;
}

namespace detail {

inline std::vector<std::vector<size_t>> epoch_batches(size_t count, int batch,
                                                      Rng& rng) {
    std::vector<size_t> order(count);
    for (size_t i = 0; i < count; ++i) order[i] = i;
    rng.shuffle(order);
    const size_t step = std::min<size_t>(static_cast<size_t>(batch), count);
    std::vector<std::vector<size_t>> batches;
    for (size_t start = 0; start < count; start += step)
        batches.emplace_back(order.begin() + start,
                             order.begin() + std::min(start + step, count));
    return batches;
}

// dL/dg_i = <grad wrt gated channel i, band plane i>.
inline void accumulate_gate_grad(const Tensor& grad_input, const SpectralCube& cube,
                                 std::vector<double>& dg) {
    for (int b = 0; b < cube.bands; ++b) {
        const double* gi = grad_input.plane(b);
        const double* plane = cube.band_plane(b);
        double acc = 0.0;
        for (size_t p = 0; p < cube.plane_size(); ++p) acc += gi[p] * plane[p];
        dg[b] += acc;
    }
}

}  // namespace detail

// First-order alternating optimization of the bilevel search:
//   (a) w-step over training batches at cosine-annealed lr_w, gates fixed;
//   (b) alpha-step over validation batches at lr_alpha (validation loss plus
//       L2 penalty on the logits), weights fixed.
// History records the reconstruction losses seen during each epoch and the
// priorities after it. Deterministic under config.seed.
inline SearchResult bilevel_search(const SplitDataset& split, const SearchConfig& config) {
    config.validate();
    split.train.validate();
    split.validation.validate();
    const SpectralCube& ref = split.train.cubes.front();
    require(ref.same_shape(split.validation.cubes.front()),
            "bilevel_search: train/validation shape mismatch");
    const int n = ref.bands;

    RecoveryModel model =
        make_model(config.model_kind, n, n, config.hidden_width, config.kernel_size,
                   Rng(config.seed).derive(0x6d6f64ULL).seed());
    BandGates gates(n);  // logits zero: unbiased g = 0.5 start
    Rng shuffle_rng = Rng(config.seed).derive(0x7368ULL);

    SearchResult result;
    result.wavelengths_nm = ref.wavelengths_nm;
    result.config = config;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, config.epochs, config.lr_w);
        SearchEpoch record;

        // (a) w-step
        double train_loss_sum = 0.0;
        size_t train_steps = 0;
        for (const auto& batch :
             detail::epoch_batches(split.train.cubes.size(), config.batch, shuffle_rng)) {
            GradientBundle mean;
            mean.grad_params.assign(model.params.size(), 0.0);
            double batch_loss = 0.0;
            for (size_t idx : batch) {
                const SpectralCube& cube = split.train.cubes[idx];
                const GradientBundle bundle =
                    loss_and_gradients(model, gated_cube(cube, gates), cube);
                batch_loss += bundle.loss;
                for (size_t i = 0; i < mean.grad_params.size(); ++i)
                    mean.grad_params[i] += bundle.grad_params[i];
            }
            const double inv = 1.0 / static_cast<double>(batch.size());
            for (double& g : mean.grad_params) g *= inv;
            model = sgd_step(model, mean, lr);
            train_loss_sum += batch_loss * inv;
            ++train_steps;
        }

        // (b) alpha-step
        double val_loss_sum = 0.0;
        size_t val_steps = 0;
        for (const auto& batch : detail::epoch_batches(split.validation.cubes.size(),
                                                       config.batch, shuffle_rng)) {
            std::vector<double> dg(n, 0.0);
            double batch_loss = 0.0;
            for (size_t idx : batch) {
                const SpectralCube& cube = split.validation.cubes[idx];
                const GradientBundle bundle =
                    loss_and_gradients(model, gated_cube(cube, gates), cube);
                batch_loss += bundle.loss;
                detail::accumulate_gate_grad(bundle.grad_input, cube, dg);
            }
            const double inv = 1.0 / static_cast<double>(batch.size());
            const std::vector<double> g = gates.priority();
            const AlphaPenalty penalty = alpha_l2_penalty(gates, config.l2_alpha);
            for (int b = 0; b < n; ++b) {
                const double sens = g[b] * (1.0 - g[b]);  // two-way softmax jacobian
                const double dloss_dg = dg[b] * inv;
                gates.pass_logits[b] -=
                    config.lr_alpha * (dloss_dg * sens + penalty.grad_pass[b]);
                gates.drop_logits[b] -=
                    config.lr_alpha * (-dloss_dg * sens + penalty.grad_drop[b]);
            }
            val_loss_sum += batch_loss * inv;
            ++val_steps;
        }

        record.train_loss = train_loss_sum / static_cast<double>(train_steps);
        record.val_loss = val_loss_sum / static_cast<double>(val_steps);
        require(std::isfinite(record.train_loss) && std::isfinite(record.val_loss),
                "bilevel_search: non-finite loss at epoch " + std::to_string(epoch));
        record.priorities = gates.priority();
        result.history.push_back(std::move(record));
    }

    result.gates = gates;
    result.correlation = detail::band_correlation_impl(split.train, true);
    return result;
}

// Spectral-wise variant: the same loop with a recovery model that has no
// spatial receptive field. Post-processing is shared with the default search.
inline SearchResult spectral_mode_search(const SplitDataset& split,
                                         SearchConfig config) {
    config.model_kind = ModelKind::kMlpPerPixel;
    SearchResult result = bilevel_search(split, config);
    result.mode = "spectral";
    return result;
}

}  // namespace nbs
