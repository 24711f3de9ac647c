#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbs/common.hpp"
#include "nbs/correlation.hpp"
#include "nbs/cube.hpp"
#include "nbs/relax_search.hpp"

namespace nbs {

// Ordered band selection. `beta` is recorded when the selection came from the
// correlation-suppressed post-processing; NaN (serialized as null) otherwise.
struct SelectionResult {
    std::vector<int> indices;  // selection order preserved
    std::vector<double> wavelengths_nm;
    std::string method;  // nbs | manual | m-equal-split | spectral | full
    double beta = std::numeric_limits<double>::quiet_NaN();

    int m() const { return static_cast<int>(indices.size()); }
};

namespace detail {

inline void check_selection(const std::vector<int>& indices, int bands,
                            bool allow_full) {
    const int m = static_cast<int>(indices.size());
    require(m >= 1, "selection: M must be >= 1");
    require(allow_full ? m <= bands : m < bands,
            allow_full ? "selection: M must satisfy M <= N"
                       : "selection: M must satisfy M < N");
    std::vector<bool> seen(bands, false);
    for (int idx : indices) {
        require(idx >= 0 && idx < bands, "selection: band index out of range");
        require(!seen[idx], "selection: duplicate band index");
        seen[idx] = true;
    }
}

}  // namespace detail

// Greedy correlation-suppressed extraction: pick the band with the largest
// working priority (ties to the lowest index), then scale every entry l by
// (1 - clamp01(C[k,l]))^beta. The unit diagonal zeroes the picked entry; with
// beta = 0 the convention 0^0 = 1 makes suppression a no-op, so picked entries
// are zeroed explicitly and never re-picked.
inline SelectionResult select_bands(const std::vector<double>& priorities,
                                    const CorrelationMatrix& correlation, int m,
                                    double beta,
                                    const std::vector<double>& wavelengths_nm = {}) {
    const int n = static_cast<int>(priorities.size());
    require(correlation.size == n, "select_bands: correlation dimension mismatch");
    require(m >= 1 && m < n, "select_bands: M must satisfy 1 <= M < N");
    require(beta >= 0.0, "select_bands: beta must be >= 0");
    for (double p : priorities)
        require(p >= 0.0 && std::isfinite(p), "select_bands: priorities must be >= 0");
    if (!wavelengths_nm.empty())
        require(static_cast<int>(wavelengths_nm.size()) == n,
                "select_bands: wavelength list length mismatch");

    std::vector<double> work = priorities;
    std::vector<bool> picked(n, false);
    SelectionResult result;
    result.method = "nbs";
    result.beta = beta;

    for (int step = 0; step < m; ++step) {
        int best = -1;
        for (int i = 0; i < n; ++i) {
            if (picked[i]) continue;
            if (best < 0 || work[i] > work[best]) best = i;
        }
        picked[best] = true;
        result.indices.push_back(best);
        if (!wavelengths_nm.empty())
            result.wavelengths_nm.push_back(wavelengths_nm[best]);

        if (beta == 0.0) {
            work[best] = 0.0;
        } else {
            for (int l = 0; l < n; ++l) {
                const double c = std::clamp(correlation.at(best, l), 0.0, 1.0);
                work[l] *= std::pow(1.0 - c, beta);
            }
        }
    }
    return result;
}

// One selection per M from a single learned priority vector; the working
// vector resets to the learned priorities for each M, so no M depends on the
// ones before it.
inline std::vector<SelectionResult> select_multi(
    const std::vector<double>& priorities, const CorrelationMatrix& correlation,
    const std::vector<int>& ms, double beta,
    const std::vector<double>& wavelengths_nm = {}) {
    std::vector<SelectionResult> results;
    results.reserve(ms.size());
    for (int m : ms)
        results.push_back(select_bands(priorities, correlation, m, beta, wavelengths_nm));
    return results;
}

// Maps each target wavelength to the nearest available band (ties to the
// lower wavelength). Two targets resolving to one band is an error.
inline SelectionResult manual_selection(const std::vector<double>& cube_wavelengths,
                                        const std::vector<double>& targets_nm) {
    require(!targets_nm.empty(), "manual_selection: no target wavelengths");
    require(cube_wavelengths.size() >= 2, "manual_selection: need at least 2 bands");
    require(targets_nm.size() < cube_wavelengths.size(),
            "manual_selection: M must satisfy M < N");

    SelectionResult result;
    result.method = "manual";
    std::vector<bool> taken(cube_wavelengths.size(), false);
    for (double target : targets_nm) {
        require(target >= cube_wavelengths.front() && target <= cube_wavelengths.back(),
                "manual_selection: target wavelength " + format_number(target) +
                    " outside available range");
        int best = 0;
        for (size_t i = 1; i < cube_wavelengths.size(); ++i)
            if (std::abs(cube_wavelengths[i] - target) <
                std::abs(cube_wavelengths[best] - target))
                best = static_cast<int>(i);
        require(!taken[best], "manual_selection: two targets map to band " +
                                  std::to_string(best));
        taken[best] = true;
        result.indices.push_back(best);
        result.wavelengths_nm.push_back(cube_wavelengths[best]);
    }
    return result;
}

// Diagnostic all-bands selection for the eval module's full-input row. Not a
// valid selection in the M < N sense; tagged "full" and only accepted where
// the eval harness explicitly allows it.
inline SelectionResult full_band_selection(const std::vector<double>& wavelengths_nm) {
    SelectionResult result;
    result.method = "full";
    for (size_t i = 0; i < wavelengths_nm.size(); ++i)
        result.indices.push_back(static_cast<int>(i));
    result.wavelengths_nm = wavelengths_nm;
    return result;
}

// Contiguous near-equal partition of 0..n-1 into m splits; the first (n mod m)
// splits take the extra band.
inline std::vector<std::vector<int>> equal_splits(int n, int m) {
    require(m >= 1 && m <= n, "equal_splits: need 1 <= M <= N");
    std::vector<std::vector<int>> splits(m);
    const int base = n / m, extra = n % m;
    int next = 0;
    for (int s = 0; s < m; ++s) {
        const int size = base + (s < extra ? 1 : 0);
        for (int i = 0; i < size; ++i) splits[s].push_back(next++);
    }
    return splits;
}

// M-equal-split baseline: one softmax per contiguous split weights its member
// band planes; the M weighted split sums feed the recovery model. Trained with
// the same alternating loop as the relaxed search (weights on the training
// loss, split logits on the validation loss plus L2), then each split elects
// its softmax argmax. Needs retraining for every M.
inline SelectionResult m_equal_split_search(const SplitDataset& split_data, int m,
                                            const SearchConfig& config) {
    config.validate();
    split_data.train.validate();
    split_data.validation.validate();
    const SpectralCube& ref = split_data.train.cubes.front();
    const int n = ref.bands;
    require(m >= 2 && m < n, "m_equal_split_search: M must satisfy 2 <= M < N");

    const auto splits = equal_splits(n, m);
    std::vector<double> logits(n, 0.0);

    RecoveryModel model =
        make_model(config.model_kind, m, n, config.hidden_width, config.kernel_size,
                   Rng(config.seed).derive(0x6d6f64ULL).seed());
    Rng shuffle_rng = Rng(config.seed).derive(0x7368ULL);

    auto split_weights = [&](int s) {
        std::vector<double> w(splits[s].size());
        double max_logit = -kInf, sum = 0.0;
        for (size_t j = 0; j < splits[s].size(); ++j)
            max_logit = std::max(max_logit, logits[splits[s][j]]);
        for (size_t j = 0; j < splits[s].size(); ++j) {
            w[j] = std::exp(logits[splits[s][j]] - max_logit);
            sum += w[j];
        }
        for (double& v : w) v /= sum;
        return w;
    };

    auto build_input = [&](const SpectralCube& cube) {
        Tensor input(cube.height, cube.width, m);
        for (int s = 0; s < m; ++s) {
            const auto w = split_weights(s);
            double* dst = input.plane(s);
            for (size_t j = 0; j < splits[s].size(); ++j) {
                const double* src = cube.band_plane(splits[s][j]);
                for (size_t p = 0; p < cube.plane_size(); ++p) dst[p] += w[j] * src[p];
            }
        }
        return input;
    };

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, config.epochs, config.lr_w);

        for (const auto& batch : detail::epoch_batches(split_data.train.cubes.size(),
                                                       config.batch, shuffle_rng)) {
            GradientBundle mean;
            mean.grad_params.assign(model.params.size(), 0.0);
            for (size_t idx : batch) {
                const SpectralCube& cube = split_data.train.cubes[idx];
                const GradientBundle bundle =
                    loss_and_gradients(model, build_input(cube), cube);
                for (size_t i = 0; i < mean.grad_params.size(); ++i)
                    mean.grad_params[i] += bundle.grad_params[i];
            }
            const double inv = 1.0 / static_cast<double>(batch.size());
            for (double& g : mean.grad_params) g *= inv;
            model = sgd_step(model, mean, lr);
        }

        for (const auto& batch : detail::epoch_batches(
                 split_data.validation.cubes.size(), config.batch, shuffle_rng)) {
            std::vector<double> dweight(n, 0.0);  // dL/d softmax weight of band j
            for (size_t idx : batch) {
                const SpectralCube& cube = split_data.validation.cubes[idx];
                const GradientBundle bundle =
                    loss_and_gradients(model, build_input(cube), cube);
                for (int s = 0; s < m; ++s) {
                    const double* gi = bundle.grad_input.plane(s);
                    for (int j : splits[s]) {
                        const double* plane = cube.band_plane(j);
                        double acc = 0.0;
                        for (size_t p = 0; p < cube.plane_size(); ++p)
                            acc += gi[p] * plane[p];
                        dweight[j] += acc;
                    }
                }
            }
            const double inv = 1.0 / static_cast<double>(batch.size());
            for (int s = 0; s < m; ++s) {
                const auto w = split_weights(s);
                double weighted_sum = 0.0;
                for (size_t j = 0; j < splits[s].size(); ++j)
                    weighted_sum += w[j] * dweight[splits[s][j]] * inv;
                for (size_t j = 0; j < splits[s].size(); ++j) {
                    const int band = splits[s][j];
                    const double dlogit =
                        w[j] * (dweight[band] * inv - weighted_sum) +
                        2.0 * config.l2_alpha * logits[band];
                    logits[band] -= config.lr_alpha * dlogit;
                }
            }
        }
    }

    SelectionResult result;
    result.method = "m-equal-split";
    for (int s = 0; s < m; ++s) {
        int best = splits[s].front();
        for (int j : splits[s])
            if (logits[j] > logits[best]) best = j;
        result.indices.push_back(best);
        result.wavelengths_nm.push_back(ref.wavelengths_nm[best]);
    }
    detail::check_selection(result.indices, n, false);
    return result;
}

// ----------------------------------------------------------------------------
// JSON serialization
// ----------------------------------------------------------------------------

inline nlohmann::ordered_json selection_to_json(const SelectionResult& selection) {
    nlohmann::ordered_json j;
    j["method"] = selection.method;
    j["m"] = selection.m();
    if (std::isnan(selection.beta))
        j["beta"] = nullptr;
    else
        j["beta"] = selection.beta;
    j["indices"] = selection.indices;
    j["wavelengths_nm"] = selection.wavelengths_nm;
    return j;
}

inline void save_selection(const SelectionResult& selection,
                           const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "save_selection: cannot open " + path.string());
    out << selection_to_json(selection).dump(2) << "\n";
    require(out.good(), "save_selection: write failed: " + path.string());
}

inline SelectionResult load_selection(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_selection: missing file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail("load_selection: malformed JSON " + path.string() + ": " + e.what());
    }
    SelectionResult selection;
    selection.method = j.at("method").get<std::string>();
    selection.indices = j.at("indices").get<std::vector<int>>();
    selection.wavelengths_nm = j.at("wavelengths_nm").get<std::vector<double>>();
    if (j.contains("beta") && !j["beta"].is_null())
        selection.beta = j["beta"].get<double>();
    return selection;
}

}  // namespace nbs
