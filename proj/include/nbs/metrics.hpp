#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "nbs/common.hpp"
#include "nbs/cube.hpp"

namespace nbs {

// Image-quality metrics (MRAE / RMSE / PSNR). PSNR assumes peak 1.0, which
// normalize() guarantees; zero MSE yields an explicit +inf sentinel rather
// than a NaN.

// Denominator floor for MRAE; ground-truth zeros would otherwise blow up the
// relative error.
constexpr double kMraeEpsilon = 1e-3;

struct ImageMetrics {
    double mrae = 0.0;
    double rmse = 0.0;
    double psnr = 0.0;
};

struct MetricsReport {
    double mrae = 0.0;
    double rmse = 0.0;
    double psnr = 0.0;                  // mean over finite per-image values
    int psnr_inf_count = 0;             // images excluded from the PSNR mean
    std::vector<std::pair<double, double>> per_wavelength_psnr;  // (nm, dB)
    std::vector<ImageMetrics> per_image;
};

namespace detail {

inline void require_same_shape(const SpectralCube& gt, const SpectralCube& pred,
                               const char* op) {
    require(gt.same_shape(pred), std::string(op) + ": shape mismatch");
}

inline double mrae_span(const double* gt, const double* pred, size_t count) {
    double sum = 0.0;
    for (size_t i = 0; i < count; ++i)
        sum += std::abs(gt[i] - pred[i]) / std::max(std::abs(gt[i]), kMraeEpsilon);
    return sum / static_cast<double>(count);
}

inline double mse_span(const double* gt, const double* pred, size_t count) {
    double sum = 0.0;
    for (size_t i = 0; i < count; ++i) {
        const double d = gt[i] - pred[i];
        sum += d * d;
    }
    return sum / static_cast<double>(count);
}

inline double psnr_from_mse(double mse) {
    return mse == 0.0 ? kInf : 10.0 * std::log10(1.0 / mse);
}

}  // namespace detail

inline double mrae(const SpectralCube& gt, const SpectralCube& pred) {
    detail::require_same_shape(gt, pred, "mrae");
    return detail::mrae_span(gt.data.data(), pred.data.data(), gt.size());
}

inline double rmse(const SpectralCube& gt, const SpectralCube& pred) {
    detail::require_same_shape(gt, pred, "rmse");
    return std::sqrt(detail::mse_span(gt.data.data(), pred.data.data(), gt.size()));
}

inline double psnr(const SpectralCube& gt, const SpectralCube& pred) {
    detail::require_same_shape(gt, pred, "psnr");
    return detail::psnr_from_mse(
        detail::mse_span(gt.data.data(), pred.data.data(), gt.size()));
}

inline std::vector<std::pair<double, double>> per_wavelength_psnr(
    const SpectralCube& gt, const SpectralCube& pred) {
    detail::require_same_shape(gt, pred, "per_wavelength_psnr");
    std::vector<std::pair<double, double>> out;
    out.reserve(gt.bands);
    for (int b = 0; b < gt.bands; ++b) {
        const double mse =
            detail::mse_span(gt.band_plane(b), pred.band_plane(b), gt.plane_size());
        out.emplace_back(gt.wavelengths_nm[b], detail::psnr_from_mse(mse));
    }
    return out;
}

// Per-image metrics averaged arithmetically; +inf PSNR sentinels are excluded
// from the PSNR mean and counted. Per-wavelength PSNR pools each band's MSE
// over the whole set.
inline MetricsReport aggregate_report(const CubeDataset& gt_set,
                                      const std::vector<SpectralCube>& pred_set) {
    gt_set.validate();
    require(gt_set.cubes.size() == pred_set.size(), "aggregate_report: count mismatch");

    MetricsReport report;
    const SpectralCube& ref = gt_set.cubes.front();
    std::vector<double> band_mse(ref.bands, 0.0);

    double psnr_sum = 0.0;
    for (size_t i = 0; i < pred_set.size(); ++i) {
        const SpectralCube& gt = gt_set.cubes[i];
        const SpectralCube& pred = pred_set[i];
        detail::require_same_shape(gt, pred, "aggregate_report");

        ImageMetrics m;
        m.mrae = mrae(gt, pred);
        m.rmse = rmse(gt, pred);
        m.psnr = psnr(gt, pred);
        report.per_image.push_back(m);

        report.mrae += m.mrae;
        report.rmse += m.rmse;
        if (std::isinf(m.psnr))
            ++report.psnr_inf_count;
        else
            psnr_sum += m.psnr;

        for (int b = 0; b < gt.bands; ++b)
            band_mse[b] +=
                detail::mse_span(gt.band_plane(b), pred.band_plane(b), gt.plane_size());
    }

    const double count = static_cast<double>(pred_set.size());
    report.mrae /= count;
    report.rmse /= count;
    const int finite = static_cast<int>(pred_set.size()) - report.psnr_inf_count;
    report.psnr = finite > 0 ? psnr_sum / finite : kInf;

    for (int b = 0; b < ref.bands; ++b)
        report.per_wavelength_psnr.emplace_back(ref.wavelengths_nm[b],
                                                detail::psnr_from_mse(band_mse[b] / count));
    return report;
}

// CSV interfaces: one row per image, plus the per-wavelength table.

inline void write_report_csv(const MetricsReport& report,
                             const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_report_csv: cannot open " + path.string());
    out << "image_id,mrae,rmse,psnr\n";
    for (size_t i = 0; i < report.per_image.size(); ++i) {
        const auto& m = report.per_image[i];
        out << i << "," << format_number(m.mrae) << "," << format_number(m.rmse)
            << "," << format_number(m.psnr) << "\n";
    }
    require(out.good(), "write_report_csv: write failed: " + path.string());
}

inline void write_per_wavelength_csv(const MetricsReport& report,
                                     const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_per_wavelength_csv: cannot open " + path.string());
    out << "wavelength_nm,psnr_db\n";
    for (const auto& [wavelength, value] : report.per_wavelength_psnr)
        out << format_number(wavelength) << "," << format_number(value) << "\n";
    require(out.good(), "write_per_wavelength_csv: write failed: " + path.string());
}

}  // namespace nbs
