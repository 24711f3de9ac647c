#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nbs/common.hpp"
#include "nbs/cube.hpp"
#include "nbs/recovery.hpp"

namespace nbs {

// Brute-force selection ground truth: every M-combination scored by the
// closed-form ridge least-squares linear recovery. Independent of the
// gradient-trained stack by construction.

constexpr double kOracleRidge = 1e-8;
constexpr size_t kMaxCombinations = 100000;

struct ComboScore {
    std::vector<int> indices;  // sorted
    double train_error = 0.0;  // RMSE of linear recovery on the training set
    double val_error = 0.0;    // RMSE on the validation set
};

namespace detail {

// Cholesky solve of the SPD system G x = rhs (in place on copies).
// G is PD here: the ridge covers the weight block and the bias row carries
// the pixel count.
inline std::vector<double> cholesky_solve(std::vector<double> g,
                                          std::vector<double> rhs, int dim) {
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j <= i; ++j) {
            double sum = g[static_cast<size_t>(i) * dim + j];
            for (int k = 0; k < j; ++k)
                sum -= g[static_cast<size_t>(i) * dim + k] *
                       g[static_cast<size_t>(j) * dim + k];
            if (i == j) {
                require(sum > 0.0 && std::isfinite(sum),
                        "linear_lsq_recovery: singular system beyond ridge rescue");
                g[static_cast<size_t>(i) * dim + j] = std::sqrt(sum);
            } else {
                g[static_cast<size_t>(i) * dim + j] =
                    sum / g[static_cast<size_t>(j) * dim + j];
            }
        }
    }
    // forward then back substitution
    for (int i = 0; i < dim; ++i) {
        double sum = rhs[i];
        for (int k = 0; k < i; ++k) sum -= g[static_cast<size_t>(i) * dim + k] * rhs[k];
        rhs[i] = sum / g[static_cast<size_t>(i) * dim + i];
    }
    for (int i = dim - 1; i >= 0; --i) {
        double sum = rhs[i];
        for (int k = i + 1; k < dim; ++k)
            sum -= g[static_cast<size_t>(k) * dim + i] * rhs[k];
        rhs[i] = sum / g[static_cast<size_t>(i) * dim + i];
    }
    require(all_finite(rhs), "linear_lsq_recovery: non-finite solution");
    return rhs;
}

}  // namespace detail

// Solves min over (A, b) of sum ||A x + b - y||^2 + ridge ||A||^2 over all
// training pixels, x = selected-band spectrum, y = full spectrum, via normal
// equations. Returns a linear-per-pixel RecoveryModel.
inline RecoveryModel linear_lsq_recovery(const CubeDataset& train,
                                         const std::vector<int>& bands) {
    train.validate();
    require(!bands.empty(), "linear_lsq_recovery: empty band list");
    const SpectralCube& ref = train.cubes.front();
    const int n = ref.bands;
    for (int b : bands)
        require(b >= 0 && b < n, "linear_lsq_recovery: band index out of range");

    const int d = static_cast<int>(bands.size());
    const int dim = d + 1;  // bias-augmented

    // Accumulate Gram = sum [x;1][x;1]^T and Rhs = sum [x;1] y^T.
    std::vector<double> gram(static_cast<size_t>(dim) * dim, 0.0);
    std::vector<double> rhs(static_cast<size_t>(dim) * n, 0.0);
    std::vector<double> x(dim);
    x[d] = 1.0;
    for (const auto& cube : train.cubes) {
        for (size_t p = 0; p < cube.plane_size(); ++p) {
            for (int c = 0; c < d; ++c) x[c] = cube.band_plane(bands[c])[p];
            for (int i = 0; i < dim; ++i) {
                for (int j = 0; j <= i; ++j)
                    gram[static_cast<size_t>(i) * dim + j] += x[i] * x[j];
                for (int row = 0; row < n; ++row)
                    rhs[static_cast<size_t>(i) * n + row] += x[i] * cube.band_plane(row)[p];
            }
        }
    }
    for (int i = 0; i < dim; ++i)
        for (int j = i + 1; j < dim; ++j)
            gram[static_cast<size_t>(i) * dim + j] = gram[static_cast<size_t>(j) * dim + i];
    for (int i = 0; i < d; ++i)
        gram[static_cast<size_t>(i) * dim + i] += kOracleRidge;  // ridge on A only

    RecoveryModel model;
    model.kind = ModelKind::kLinearPerPixel;
    model.in_channels = d;
    model.out_bands = n;
    model.params.assign(model.expected_param_count(), 0.0);
    double* a = model.params.data();
    double* bias = a + static_cast<size_t>(n) * d;

    std::vector<double> column(dim);
    for (int row = 0; row < n; ++row) {
        for (int i = 0; i < dim; ++i) column[i] = rhs[static_cast<size_t>(i) * n + row];
        const auto solution = detail::cholesky_solve(gram, column, dim);
        for (int c = 0; c < d; ++c) a[static_cast<size_t>(row) * d + c] = solution[c];
        bias[row] = solution[d];
    }
    model.validate();
    return model;
}

namespace detail {

inline double linear_model_rmse(const RecoveryModel& model,
                                const std::vector<int>& bands,
                                const CubeDataset& set) {
    double sum_sq = 0.0;
    size_t count = 0;
    for (const auto& cube : set.cubes) {
        Tensor input(cube.height, cube.width, static_cast<int>(bands.size()));
        for (size_t c = 0; c < bands.size(); ++c)
            std::copy(cube.band_plane(bands[c]),
                      cube.band_plane(bands[c]) + cube.plane_size(),
                      input.plane(static_cast<int>(c)));
        const Tensor pred = forward(model, input);
        for (size_t i = 0; i < cube.size(); ++i) {
            const double diff = pred.data[i] - cube.data[i];
            sum_sq += diff * diff;
        }
        count += cube.size();
    }
    return std::sqrt(sum_sq / static_cast<double>(count));
}

inline size_t combination_count(int n, int m) {
    size_t result = 1;
    for (int i = 0; i < m; ++i) {
        result = result * static_cast<size_t>(n - i) / static_cast<size_t>(i + 1);
        if (result > 10 * kMaxCombinations) return result;  // early out, caller errors
    }
    return result;
}

}  // namespace detail

// Scores every M-combination (lexicographic enumeration) and returns them
// ascending by validation RMSE (ties keep enumeration order). Deterministic
// regardless of `jobs`.
inline std::vector<ComboScore> exhaustive_search(const SplitDataset& split, int m,
                                                 int jobs = 1) {
    split.train.validate();
    split.validation.validate();
    const int n = split.train.cubes.front().bands;
    require(m >= 1 && m < n, "exhaustive_search: M must satisfy 1 <= M < N");
    const size_t combos = detail::combination_count(n, m);
    require(combos <= kMaxCombinations,
            "exhaustive_search: C(" + std::to_string(n) + "," + std::to_string(m) +
                ") = " + std::to_string(combos) + " exceeds the guard of " +
                std::to_string(kMaxCombinations));

    std::vector<std::vector<int>> all;
    all.reserve(combos);
    std::vector<int> current(m);
    for (int i = 0; i < m; ++i) current[i] = i;
    while (true) {
        all.push_back(current);
        int i = m - 1;
        while (i >= 0 && current[i] == n - m + i) --i;
        if (i < 0) break;
        ++current[i];
        for (int j = i + 1; j < m; ++j) current[j] = current[j - 1] + 1;
    }

    std::vector<ComboScore> scores(all.size());
    parallel_for(all.size(), jobs, [&](size_t idx) {
        const auto& bands = all[idx];
        const RecoveryModel model = linear_lsq_recovery(split.train, bands);
        ComboScore score;
        score.indices = bands;
        score.train_error = detail::linear_model_rmse(model, bands, split.train);
        score.val_error = detail::linear_model_rmse(model, bands, split.validation);
        scores[idx] = std::move(score);
    });

    std::stable_sort(scores.begin(), scores.end(),
                     [](const ComboScore& a, const ComboScore& b) {
                         return a.val_error < b.val_error;
                     });
    return scores;
}

inline void write_oracle_csv(const std::vector<ComboScore>& scores,
                             const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_oracle_csv: cannot open " + path.string());
    out << "rank,indices,train_rmse,val_rmse\n";
    for (size_t i = 0; i < scores.size(); ++i) {
        out << i << ",";
        for (size_t j = 0; j < scores[i].indices.size(); ++j) {
            if (j) out << ";";
            out << scores[i].indices[j];
        }
        out << "," << format_number(scores[i].train_error) << ","
            << format_number(scores[i].val_error) << "\n";
    }
    require(out.good(), "write_oracle_csv: write failed: " + path.string());
}

}  // namespace nbs
