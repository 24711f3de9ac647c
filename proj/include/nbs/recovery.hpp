#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbs/common.hpp"
#include "nbs/cube.hpp"
#include "nbs/metrics.hpp"
#include "nbs/tensor.hpp"

namespace nbs {

// ============================================================================
// Small differentiable spectral-recovery models mapping Cin input channels to
// the full N-band cube. Three kinds:
//
//   linear-per-pixel  pred = A·x + b per pixel
//   mlp-per-pixel     pred = W2·tanh(W1·x + b1) + b2 per pixel (no spatial
//                     receptive field; the spectral-only variant)
//   conv-spatial      pred = A2·tanh(conv_k(x) + bc) + b2, conv with same
//                     (zero) padding; the spatial-spectral variant. With a
//                     1×1 kernel this is parameter-for-parameter the MLP.
//
// Parameter layout (flat vector, row-major):
//   linear: A[n][c], b[n]
//   mlp:    W1[h][c], b1[h], W2[n][h], b2[n]
//   conv:   K[f][c][ky][kx], bc[f], A2[n][f], b2[n]
//
// Gradients are reverse-mode through the fixed graph, computed analytically;
// the MRAE kink uses subgradient 0.
// ============================================================================

enum class ModelKind { kLinearPerPixel, kMlpPerPixel, kConvSpatial };

inline const char* model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::kLinearPerPixel: return "linear";
        case ModelKind::kMlpPerPixel: return "mlp";
        case ModelKind::kConvSpatial: return "conv";
    }
    return "unknown";
}

inline ModelKind model_kind_from_name(const std::string& name) {
    if (name == "linear") return ModelKind::kLinearPerPixel;
    if (name == "mlp") return ModelKind::kMlpPerPixel;
    if (name == "conv") return ModelKind::kConvSpatial;
    fail("unknown model kind '" + name + "' (want linear | mlp | conv)");
}

struct RecoveryModel {
    ModelKind kind = ModelKind::kLinearPerPixel;
    int in_channels = 0;
    int out_bands = 0;
    int hidden_width = 0;   // mlp / conv
    int kernel_size = 0;    // conv (odd)
    uint64_t seed = 0;      // init seed echo
    std::vector<double> params;

    size_t expected_param_count() const {
        const size_t cin = in_channels, n = out_bands, h = hidden_width,
                     k = kernel_size;
        switch (kind) {
            case ModelKind::kLinearPerPixel: return n * cin + n;
            case ModelKind::kMlpPerPixel: return h * cin + h + n * h + n;
            case ModelKind::kConvSpatial: return h * cin * k * k + h + n * h + n;
        }
        return 0;
    }

    void validate() const {
        require(in_channels >= 1 && out_bands >= 1, "model: bad dimensions");
        if (kind != ModelKind::kLinearPerPixel)
            require(hidden_width >= 1, "model: hidden width must be >= 1");
        if (kind == ModelKind::kConvSpatial)
            require(kernel_size >= 1 && kernel_size % 2 == 1,
                    "model: conv kernel size must be odd and >= 1");
        require(params.size() == expected_param_count(),
                "model: parameter count does not match dimensions");
        require(all_finite(params), "model: non-finite parameter");
    }
};

struct GradientBundle {
    double loss = 0.0;
    std::vector<double> grad_params;
    Tensor grad_input;
};

// Weights ~ uniform(-s, s) with s = 1/sqrt(fan_in); biases zero. Weight draws
// happen in parameter-layout order, so the conv model with kernel 1 draws the
// exact values the MLP draws under the same seed.
inline RecoveryModel make_model(ModelKind kind, int in_channels, int out_bands,
                                int hidden_width, int kernel_size, uint64_t seed) {
    RecoveryModel model;
    model.kind = kind;
    model.in_channels = in_channels;
    model.out_bands = out_bands;
    model.hidden_width = kind == ModelKind::kLinearPerPixel ? 0 : hidden_width;
    model.kernel_size = kind == ModelKind::kConvSpatial ? kernel_size : 0;
    model.seed = seed;
    model.params.assign(model.expected_param_count(), 0.0);

    Rng rng = Rng(seed).derive(0x696e6974ULL);
    auto fill_uniform = [&rng](double* dst, size_t count, int fan_in) {
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (size_t i = 0; i < count; ++i) dst[i] = rng.uniform(-s, s);
    };

    double* p = model.params.data();
    const size_t cin = in_channels, n = out_bands, h = model.hidden_width,
                 k = model.kernel_size;
    switch (kind) {
        case ModelKind::kLinearPerPixel:
            fill_uniform(p, n * cin, in_channels);
            break;
        case ModelKind::kMlpPerPixel:
            fill_uniform(p, h * cin, in_channels);                 // W1
            fill_uniform(p + h * cin + h, n * h, hidden_width);    // W2
            break;
        case ModelKind::kConvSpatial:
            fill_uniform(p, h * cin * k * k,
                         in_channels * kernel_size * kernel_size);            // K
            fill_uniform(p + h * cin * k * k + h, n * h, hidden_width);       // A2
            break;
    }
    model.validate();
    return model;
}

namespace detail {

// Hidden activations for the conv model, cached for backward.
struct ConvCache {
    Tensor hidden;  // tanh output, H×W×F
};

inline void conv_hidden_forward(const RecoveryModel& m, const Tensor& input,
                                Tensor& hidden) {
    const int k = m.kernel_size, r = k / 2, f_count = m.hidden_width;
    const int h = input.height, w = input.width, cin = m.in_channels;
    const double* kernels = m.params.data();
    const double* bias = kernels + static_cast<size_t>(f_count) * cin * k * k;

    for (int f = 0; f < f_count; ++f) {
        for (int u = 0; u < h; ++u) {
            for (int v = 0; v < w; ++v) {
                double acc = bias[f];
                for (int c = 0; c < cin; ++c) {
                    const double* kf =
                        kernels + ((static_cast<size_t>(f) * cin + c) * k) * k;
                    for (int ky = 0; ky < k; ++ky) {
                        const int uu = u + ky - r;
                        if (uu < 0 || uu >= h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int vv = v + kx - r;
                            if (vv < 0 || vv >= w) continue;
                            acc += kf[ky * k + kx] * input.at(c, uu, vv);
                        }
                    }
                }
                hidden.at(f, u, v) = std::tanh(acc);
            }
        }
    }
}

}  // namespace detail

inline Tensor forward(const RecoveryModel& model, const Tensor& input) {
    model.validate();
    require(input.channels == model.in_channels, "forward: channel mismatch");
    const int h = input.height, w = input.width;
    const int n = model.out_bands, cin = model.in_channels;
    Tensor out(h, w, n);

    switch (model.kind) {
        case ModelKind::kLinearPerPixel: {
            const double* a = model.params.data();
            const double* b = a + static_cast<size_t>(n) * cin;
            for (int u = 0; u < h; ++u)
                for (int v = 0; v < w; ++v)
                    for (int row = 0; row < n; ++row) {
                        double acc = b[row];
                        for (int c = 0; c < cin; ++c)
                            acc += a[static_cast<size_t>(row) * cin + c] * input.at(c, u, v);
                        out.at(row, u, v) = acc;
                    }
            break;
        }
        case ModelKind::kMlpPerPixel: {
            const int hw = model.hidden_width;
            const double* w1 = model.params.data();
            const double* b1 = w1 + static_cast<size_t>(hw) * cin;
            const double* w2 = b1 + hw;
            const double* b2 = w2 + static_cast<size_t>(n) * hw;
            std::vector<double> hidden(hw);
            for (int u = 0; u < h; ++u)
                for (int v = 0; v < w; ++v) {
                    for (int j = 0; j < hw; ++j) {
                        double acc = b1[j];
                        for (int c = 0; c < cin; ++c)
                            acc += w1[static_cast<size_t>(j) * cin + c] * input.at(c, u, v);
                        hidden[j] = std::tanh(acc);
                    }
                    for (int row = 0; row < n; ++row) {
                        double acc = b2[row];
                        for (int j = 0; j < hw; ++j)
                            acc += w2[static_cast<size_t>(row) * hw + j] * hidden[j];
                        out.at(row, u, v) = acc;
                    }
                }
            break;
        }
        case ModelKind::kConvSpatial: {
            const int f_count = model.hidden_width, k = model.kernel_size;
            Tensor hidden(h, w, f_count);
            detail::conv_hidden_forward(model, input, hidden);
            const double* head =
                model.params.data() + static_cast<size_t>(f_count) * cin * k * k + f_count;
            const double* b2 = head + static_cast<size_t>(n) * f_count;
            for (int u = 0; u < h; ++u)
                for (int v = 0; v < w; ++v)
                    for (int row = 0; row < n; ++row) {
                        double acc = b2[row];
                        for (int f = 0; f < f_count; ++f)
                            acc += head[static_cast<size_t>(row) * f_count + f] *
                                   hidden.at(f, u, v);
                        out.at(row, u, v) = acc;
                    }
            break;
        }
    }
    return out;
}

// loss = MRAE(target, forward(input)); gradients w.r.t. params and input.
inline GradientBundle loss_and_gradients(const RecoveryModel& model,
                                         const Tensor& input,
                                         const SpectralCube& target) {
    model.validate();
    require(input.channels == model.in_channels,
            "loss_and_gradients: channel mismatch");
    require(input.height == target.height && input.width == target.width &&
                model.out_bands == target.bands,
            "loss_and_gradients: target shape mismatch");

    const int h = input.height, w = input.width;
    const int n = model.out_bands, cin = model.in_channels;
    const size_t total = target.size();

    const Tensor pred = forward(model, input);

    GradientBundle bundle;
    bundle.grad_params.assign(model.params.size(), 0.0);
    bundle.grad_input = Tensor(h, w, cin);

    // dL/dpred for MRAE; subgradient 0 at the kink.
    Tensor dpred(h, w, n);
    double loss = 0.0;
    for (size_t i = 0; i < total; ++i) {
        const double denom = std::max(std::abs(target.data[i]), kMraeEpsilon);
        const double diff = pred.data[i] - target.data[i];
        loss += std::abs(diff) / denom;
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        dpred.data[i] = sign / (denom * static_cast<double>(total));
    }
    bundle.loss = loss / static_cast<double>(total);
    require(std::isfinite(bundle.loss), "loss_and_gradients: non-finite loss");

    double* gp = bundle.grad_params.data();
    switch (model.kind) {
        case ModelKind::kLinearPerPixel: {
            const double* a = model.params.data();
            double* ga = gp;
            double* gb = gp + static_cast<size_t>(n) * cin;
            for (int u = 0; u < h; ++u)
                for (int v = 0; v < w; ++v)
                    for (int row = 0; row < n; ++row) {
                        const double g = dpred.at(row, u, v);
                        if (g == 0.0) continue;
                        gb[row] += g;
                        for (int c = 0; c < cin; ++c) {
                            ga[static_cast<size_t>(row) * cin + c] += g * input.at(c, u, v);
                            bundle.grad_input.at(c, u, v) +=
                                g * a[static_cast<size_t>(row) * cin + c];
                        }
                    }
            break;
        }
        case ModelKind::kMlpPerPixel: {
            const int hw = model.hidden_width;
            const double* w1 = model.params.data();
            const double* b1 = w1 + static_cast<size_t>(hw) * cin;
            const double* w2 = b1 + hw;
            double* gw1 = gp;
            double* gb1 = gp + static_cast<size_t>(hw) * cin;
            double* gw2 = gb1 + hw;
            double* gb2 = gw2 + static_cast<size_t>(n) * hw;
            std::vector<double> hidden(hw), dhidden(hw);
            for (int u = 0; u < h; ++u)
                for (int v = 0; v < w; ++v) {
                    for (int j = 0; j < hw; ++j) {
                        double acc = b1[j];
                        for (int c = 0; c < cin; ++c)
                            acc += w1[static_cast<size_t>(j) * cin + c] * input.at(c, u, v);
                        hidden[j] = std::tanh(acc);
                        dhidden[j] = 0.0;
                    }
                    for (int row = 0; row < n; ++row) {
                        const double g = dpred.at(row, u, v);
                        if (g == 0.0) continue;
                        gb2[row] += g;
                        for (int j = 0; j < hw; ++j) {
                            gw2[static_cast<size_t>(row) * hw + j] += g * hidden[j];
                            dhidden[j] += g * w2[static_cast<size_t>(row) * hw + j];
                        }
                    }
                    for (int j = 0; j < hw; ++j) {
                        const double dz = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
                        if (dz == 0.0) continue;
                        gb1[j] += dz;
                        for (int c = 0; c < cin; ++c) {
                            gw1[static_cast<size_t>(j) * cin + c] += dz * input.at(c, u, v);
                            bundle.grad_input.at(c, u, v) +=
                                dz * w1[static_cast<size_t>(j) * cin + c];
                        }
                    }
                }
            break;
        }
        case ModelKind::kConvSpatial: {
            const int f_count = model.hidden_width, k = model.kernel_size, r = k / 2;
            const size_t kernel_count = static_cast<size_t>(f_count) * cin * k * k;
            const double* kernels = model.params.data();
            const double* head = kernels + kernel_count + f_count;
            double* gk = gp;
            double* gbc = gp + kernel_count;
            double* ghead = gbc + f_count;
            double* gb2 = ghead + static_cast<size_t>(n) * f_count;

            Tensor hidden(h, w, f_count);
            detail::conv_hidden_forward(model, input, hidden);

            // Backprop through the linear head into dz (pre-tanh), then the conv.
            Tensor dz(h, w, f_count);
            for (int u = 0; u < h; ++u)
                for (int v = 0; v < w; ++v) {
                    for (int row = 0; row < n; ++row) {
                        const double g = dpred.at(row, u, v);
                        if (g == 0.0) continue;
                        gb2[row] += g;
                        for (int f = 0; f < f_count; ++f) {
                            ghead[static_cast<size_t>(row) * f_count + f] +=
                                g * hidden.at(f, u, v);
                            dz.at(f, u, v) +=
                                g * head[static_cast<size_t>(row) * f_count + f];
                        }
                    }
                    for (int f = 0; f < f_count; ++f) {
                        const double hv = hidden.at(f, u, v);
                        dz.at(f, u, v) *= (1.0 - hv * hv);
                    }
                }
            for (int f = 0; f < f_count; ++f)
                for (int u = 0; u < h; ++u)
                    for (int v = 0; v < w; ++v) {
                        const double g = dz.at(f, u, v);
                        if (g == 0.0) continue;
                        gbc[f] += g;
                        for (int c = 0; c < cin; ++c) {
                            double* gkf = gk + ((static_cast<size_t>(f) * cin + c) * k) * k;
                            const double* kf =
                                kernels + ((static_cast<size_t>(f) * cin + c) * k) * k;
                            for (int ky = 0; ky < k; ++ky) {
                                const int uu = u + ky - r;
                                if (uu < 0 || uu >= h) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    const int vv = v + kx - r;
                                    if (vv < 0 || vv >= w) continue;
                                    gkf[ky * k + kx] += g * input.at(c, uu, vv);
                                    bundle.grad_input.at(c, uu, vv) += g * kf[ky * k + kx];
                                }
                            }
                        }
                    }
            break;
        }
    }
    return bundle;
}

inline RecoveryModel sgd_step(const RecoveryModel& model, const GradientBundle& grads,
                              double lr) {
    require(grads.grad_params.size() == model.params.size(),
            "sgd_step: gradient size mismatch");
    require(all_finite(grads.grad_params), "sgd_step: non-finite gradient");
    RecoveryModel next = model;
    for (size_t i = 0; i < next.params.size(); ++i)
        next.params[i] -= lr * grads.grad_params[i];
    return next;
}

inline double cosine_lr(int epoch, int total_epochs, double base_lr) {
    require(total_epochs >= 1, "cosine_lr: total_epochs must be >= 1");
    require(epoch >= 0 && epoch < total_epochs, "cosine_lr: epoch out of range");
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                           static_cast<double>(total_epochs)));
}

// Checkpoints mirror the cube format: "<stem>.json" header + "<stem>.raw"
// little-endian f32 parameter payload.

inline void save_model(const RecoveryModel& model, const std::filesystem::path& path) {
    model.validate();
    const auto stem = detail::strip_cube_extension(path);

    nlohmann::ordered_json header;
    header["kind"] = model_kind_name(model.kind);
    header["in_channels"] = model.in_channels;
    header["out_bands"] = model.out_bands;
    header["hidden_width"] = model.hidden_width;
    header["kernel_size"] = model.kernel_size;
    header["seed"] = model.seed;

    std::ofstream hf(stem.string() + ".json", std::ios::binary);
    require(hf.good(), "save_model: cannot open header: " + stem.string());
    hf << header.dump(2) << "\n";
    require(hf.good(), "save_model: header write failed: " + stem.string());

    std::vector<float> payload(model.params.size());
    for (size_t i = 0; i < payload.size(); ++i)
        payload[i] = static_cast<float>(model.params[i]);
    std::ofstream pf(stem.string() + ".raw", std::ios::binary);
    require(pf.good(), "save_model: cannot open payload: " + stem.string());
    pf.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
    require(pf.good(), "save_model: payload write failed: " + stem.string());
}

inline RecoveryModel load_model(const std::filesystem::path& path) {
    const auto stem = detail::strip_cube_extension(path);
    std::ifstream hf(stem.string() + ".json", std::ios::binary);
    require(hf.good(), "load_model: missing header: " + stem.string());
    nlohmann::json header;
    try {
        hf >> header;
    } catch (const std::exception& e) {
        fail("load_model: malformed header: " + std::string(e.what()));
    }

    RecoveryModel model;
    model.kind = model_kind_from_name(header.at("kind").get<std::string>());
    model.in_channels = header.at("in_channels").get<int>();
    model.out_bands = header.at("out_bands").get<int>();
    model.hidden_width = header.at("hidden_width").get<int>();
    model.kernel_size = header.at("kernel_size").get<int>();
    model.seed = header.at("seed").get<uint64_t>();

    std::ifstream pf(stem.string() + ".raw", std::ios::binary);
    require(pf.good(), "load_model: missing payload: " + stem.string());
    pf.seekg(0, std::ios::end);
    const size_t bytes = static_cast<size_t>(pf.tellg());
    pf.seekg(0, std::ios::beg);
    const size_t expected = model.expected_param_count();
    require(bytes == expected * sizeof(float),
            "load_model: payload size mismatch: " + stem.string());
    std::vector<float> payload(expected);
    pf.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(bytes));
    require(pf.good(), "load_model: payload read failed: " + stem.string());
    model.params.resize(expected);
    for (size_t i = 0; i < expected; ++i)
        model.params[i] = static_cast<double>(payload[i]);
    model.validate();
    return model;
}

}  // namespace nbs
