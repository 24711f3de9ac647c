#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "nbs/common.hpp"
#include "nbs/cube.hpp"

namespace nbs {

// Band-wise cosine-similarity matrix C. Symmetric, unit diagonal (pinned, not
// computed, so a picked band suppresses itself totally in post-processing).
struct CorrelationMatrix {
    int size = 0;
    std::vector<double> values;  // row-major N×N

    CorrelationMatrix() = default;
    explicit CorrelationMatrix(int n)
        : size(n), values(static_cast<size_t>(n) * n, 0.0) {
        for (int i = 0; i < n; ++i) at(i, i) = 1.0;
    }

    double& at(int k, int l) { return values[static_cast<size_t>(k) * size + l]; }
    double at(int k, int l) const { return values[static_cast<size_t>(k) * size + l]; }
};

namespace detail {

// `tolerate_zero_bands` maps a dead band to zero off-diagonal entries instead
// of erroring; the search loop uses this so degenerate instrumentation data
// (a band that never lights up) can still be searched.
inline CorrelationMatrix band_correlation_impl(const CubeDataset& train,
                                               bool tolerate_zero_bands) {
    train.validate();
    const int n = train.cubes.front().bands;

    std::vector<double> norms_sq(n, 0.0);
    for (const auto& cube : train.cubes)
        for (int b = 0; b < n; ++b) {
            const double* plane = cube.band_plane(b);
            for (size_t p = 0; p < cube.plane_size(); ++p)
                norms_sq[b] += plane[p] * plane[p];
        }
    if (!tolerate_zero_bands)
        for (int b = 0; b < n; ++b)
            require(norms_sq[b] > 0.0,
                    "band_correlation: band " + std::to_string(b) +
                        " is identically zero (cosine undefined)");

    CorrelationMatrix c(n);
    for (int k = 0; k < n; ++k) {
        if (norms_sq[k] == 0.0) continue;
        for (int l = k + 1; l < n; ++l) {
            if (norms_sq[l] == 0.0) continue;
            double dot = 0.0;
            for (const auto& cube : train.cubes) {
                const double* pk = cube.band_plane(k);
                const double* pl = cube.band_plane(l);
                for (size_t p = 0; p < cube.plane_size(); ++p) dot += pk[p] * pl[p];
            }
            const double cosine = dot / (std::sqrt(norms_sq[k]) * std::sqrt(norms_sq[l]));
            const double clamped = std::min(1.0, std::max(-1.0, cosine));
            c.at(k, l) = clamped;
            c.at(l, k) = clamped;
        }
    }
    return c;
}

}  // namespace detail

// Each band's plane over every pixel of every training cube is treated as one
// long vector; C[k,l] is the cosine of the two band vectors. Computed cosines
// are clamped to [-1, 1] so floating-point overshoot cannot leak past the
// mathematical bound (identical bands then yield exactly 1.0).
inline CorrelationMatrix band_correlation(const CubeDataset& train) {
    return detail::band_correlation_impl(train, false);
}

inline void write_correlation_csv(const CorrelationMatrix& c,
                                  const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_correlation_csv: cannot open " + path.string());
    for (int k = 0; k < c.size; ++k) {
        for (int l = 0; l < c.size; ++l) {
            if (l) out << ",";
            out << format_number(c.at(k, l));
        }
        out << "\n";
    }
    require(out.good(), "write_correlation_csv: write failed: " + path.string());
}

inline CorrelationMatrix load_correlation_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_correlation_csv: missing file: " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        size_t pos = 0;
        while (pos <= line.size()) {
            size_t comma = line.find(',', pos);
            if (comma == std::string::npos) comma = line.size();
            row.push_back(std::stod(line.substr(pos, comma - pos)));
            pos = comma + 1;
        }
        rows.push_back(std::move(row));
    }
    require(!rows.empty(), "load_correlation_csv: empty file: " + path.string());
    const int n = static_cast<int>(rows.size());
    CorrelationMatrix c(n);
    for (int k = 0; k < n; ++k) {
        require(static_cast<int>(rows[k].size()) == n,
                "load_correlation_csv: ragged row in " + path.string());
        for (int l = 0; l < n; ++l) c.at(k, l) = rows[k][l];
    }
    return c;
}

}  // namespace nbs
