#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbs/common.hpp"
#include "nbs/tensor.hpp"

namespace nbs {

// ============================================================================
// SpectralCube - an H×W×N reflectance cube with per-band wavelengths.
//
// Storage is band-sequential (BSQ): band 0's full H×W plane row-major, then
// band 1, and so on. Values are held at 64-bit precision in memory; the file
// payload is 32-bit little-endian (see save_cube/load_cube).
//
// File format: "<name>.json" header + "<name>.raw" payload.
//   header keys: height, width, bands, wavelengths_nm (strictly increasing),
//                dtype ("f32le"), layout ("bsq")
//   payload: height*width*bands little-endian f32 in BSQ order.
// ============================================================================

struct SpectralCube {
    int height = 0;
    int width = 0;
    int bands = 0;
    std::vector<double> wavelengths_nm;
    std::vector<double> data;  // BSQ: (band*H + row)*W + col

    SpectralCube() = default;
    SpectralCube(int h, int w, std::vector<double> wavelengths)
        : height(h), width(w), bands(static_cast<int>(wavelengths.size())),
          wavelengths_nm(std::move(wavelengths)),
          data(static_cast<size_t>(h) * w * bands, 0.0) {}

    size_t plane_size() const { return static_cast<size_t>(height) * width; }
    size_t size() const { return data.size(); }

    double& at(int band, int u, int v) {
        return data[(static_cast<size_t>(band) * height + u) * width + v];
    }
    double at(int band, int u, int v) const {
        return data[(static_cast<size_t>(band) * height + u) * width + v];
    }

    double* band_plane(int band) { return data.data() + band * plane_size(); }
    const double* band_plane(int band) const {
        return data.data() + band * plane_size();
    }

    bool same_shape(const SpectralCube& other) const {
        return height == other.height && width == other.width &&
               bands == other.bands;
    }

    Tensor to_tensor() const {
        Tensor t(height, width, bands);
        t.data = data;
        return t;
    }

    void validate() const {
        require(bands >= 2, "cube: band count must be >= 2");
        require(height >= 1 && width >= 1, "cube: spatial dims must be >= 1");
        require(static_cast<int>(wavelengths_nm.size()) == bands,
                "cube: wavelength list length must equal band count");
        for (int i = 1; i < bands; ++i)
            require(wavelengths_nm[i] > wavelengths_nm[i - 1],
                    "cube: wavelengths must be strictly increasing");
        require(data.size() == plane_size() * bands, "cube: payload size mismatch");
        require(all_finite(data), "cube: non-finite data value");
    }
};

struct PixelSpectrum {
    std::vector<double> values;  // length N
};

enum class DatasetRole { kTrain, kValidation };

struct CubeDataset {
    std::vector<SpectralCube> cubes;
    DatasetRole role = DatasetRole::kTrain;

    void validate() const {
        require(!cubes.empty(), "dataset: must contain at least one cube");
        for (const auto& c : cubes)
            require(c.same_shape(cubes.front()) &&
                        c.wavelengths_nm == cubes.front().wavelengths_nm,
                    "dataset: cubes must be dimensionally identical");
    }
};

struct SplitDataset {
    CubeDataset train;
    CubeDataset validation;
};

// Generator config for synthetic cubes. Bands are random nonnegative mixtures
// of K shared smooth latent band-images plus Gaussian noise; with K == bands
// the mixing is the identity (band i = latent i).
struct SynthConfig {
    int bands = 8;        // N
    int height = 8;
    int width = 8;
    int latents = 3;      // K
    double noise_sigma = 0.0;
    std::vector<std::pair<int, int>> duplicate_pairs;  // (i, j): band j := band i
    uint64_t seed = 0;

    void validate() const {
        require(bands >= 2, "synth: bands must be >= 2");
        require(height >= 1 && width >= 1, "synth: spatial dims must be >= 1");
        require(latents >= 1 && latents <= bands,
                "synth: latents must satisfy 1 <= K <= bands");
        require(noise_sigma >= 0.0, "synth: noise_sigma must be >= 0");
        for (auto [i, j] : duplicate_pairs) {
            require(i >= 0 && i < bands && j >= 0 && j < bands,
                    "synth: duplicate index out of range");
            require(i != j, "synth: duplicate pair must name two distinct bands");
        }
    }
};

// ----------------------------------------------------------------------------
// File I/O
// ----------------------------------------------------------------------------

namespace detail {

inline std::filesystem::path strip_cube_extension(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".json" || ext == ".raw") {
        auto stem = path;
        stem.replace_extension();
        return stem;
    }
    return path;
}

}  // namespace detail

// `path` names the header+payload pair by stem; "<stem>.json" and "<stem>.raw"
// are written. The payload is produced from f64 by a narrowing cast, so a
// load/save round trip is lossless at 32-bit payload precision.
inline void save_cube(const SpectralCube& cube, const std::filesystem::path& path) {
    cube.validate();
    const auto stem = detail::strip_cube_extension(path);

    nlohmann::ordered_json header;
    header["height"] = cube.height;
    header["width"] = cube.width;
    header["bands"] = cube.bands;
    header["wavelengths_nm"] = cube.wavelengths_nm;
    header["dtype"] = "f32le";
    header["layout"] = "bsq";

    std::ofstream hf(stem.string() + ".json", std::ios::binary);
    require(hf.good(), "save_cube: cannot open header for writing: " + stem.string());
    hf << header.dump(2) << "\n";
    require(hf.good(), "save_cube: header write failed: " + stem.string());
    hf.close();

    std::vector<float> payload(cube.data.size());
    for (size_t i = 0; i < cube.data.size(); ++i)
        payload[i] = static_cast<float>(cube.data[i]);

    std::ofstream pf(stem.string() + ".raw", std::ios::binary);
    require(pf.good(), "save_cube: cannot open payload for writing: " + stem.string());
    pf.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
    require(pf.good(), "save_cube: payload write failed: " + stem.string());
}

inline SpectralCube load_cube(const std::filesystem::path& path) {
    const auto stem = detail::strip_cube_extension(path);
    const auto header_path = stem.string() + ".json";
    const auto payload_path = stem.string() + ".raw";

    std::ifstream hf(header_path, std::ios::binary);
    require(hf.good(), "load_cube: missing header file: " + header_path);
    nlohmann::json header;
    try {
        hf >> header;
    } catch (const std::exception& e) {
        fail("load_cube: malformed header " + header_path + ": " + e.what());
    }

    for (const char* key : {"height", "width", "bands", "wavelengths_nm", "dtype", "layout"})
        require(header.contains(key),
                std::string("load_cube: header missing key '") + key + "': " + header_path);
    require(header["dtype"] == "f32le", "load_cube: unsupported dtype (want f32le)");
    require(header["layout"] == "bsq", "load_cube: unsupported layout (want bsq)");

    SpectralCube cube;
    cube.height = header["height"].get<int>();
    cube.width = header["width"].get<int>();
    cube.bands = header["bands"].get<int>();
    cube.wavelengths_nm = header["wavelengths_nm"].get<std::vector<double>>();

    require(cube.height >= 1 && cube.width >= 1 && cube.bands >= 2,
            "load_cube: invalid dimensions in header: " + header_path);
    require(static_cast<int>(cube.wavelengths_nm.size()) == cube.bands,
            "load_cube: wavelength count does not match bands: " + header_path);
    for (int i = 1; i < cube.bands; ++i)
        require(cube.wavelengths_nm[i] > cube.wavelengths_nm[i - 1],
                "load_cube: wavelengths not strictly increasing: " + header_path);

    std::ifstream pf(payload_path, std::ios::binary);
    require(pf.good(), "load_cube: missing payload file: " + payload_path);
    pf.seekg(0, std::ios::end);
    const auto actual_bytes = static_cast<size_t>(pf.tellg());
    pf.seekg(0, std::ios::beg);

    const size_t expected = cube.plane_size() * cube.bands;
    require(actual_bytes == expected * sizeof(float),
            "load_cube: payload size mismatch (" + std::to_string(actual_bytes) +
                " bytes, expected " + std::to_string(expected * sizeof(float)) +
                "): " + payload_path);

    std::vector<float> payload(expected);
    pf.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(expected * sizeof(float)));
    require(pf.good(), "load_cube: payload read failed: " + payload_path);

    cube.data.resize(expected);
    for (size_t i = 0; i < expected; ++i) {
        cube.data[i] = static_cast<double>(payload[i]);
        require(std::isfinite(cube.data[i]),
                "load_cube: non-finite value in payload: " + payload_path);
    }
    return cube;
}

// ----------------------------------------------------------------------------
// Operations
// ----------------------------------------------------------------------------

// Rescales so the maximum equals 1.0. Reflectance is nonnegative; cubes with
// negative values cannot be brought into [0, 1] by a scale and are rejected.
inline SpectralCube normalize(const SpectralCube& cube) {
    double max_value = 0.0;
    for (double v : cube.data) {
        require(v >= 0.0, "normalize: negative reflectance value");
        max_value = std::max(max_value, v);
    }
    require(max_value > 0.0, "normalize: all-zero cube");
    SpectralCube out = cube;
    if (max_value != 1.0) {
        const double inv = 1.0 / max_value;
        for (double& v : out.data) v *= inv;
    }
    return out;
}

inline PixelSpectrum pixel_spectrum(const SpectralCube& cube, int u, int v) {
    require(u >= 0 && u < cube.height, "pixel_spectrum: row out of range");
    require(v >= 0 && v < cube.width, "pixel_spectrum: column out of range");
    PixelSpectrum s;
    s.values.resize(cube.bands);
    for (int b = 0; b < cube.bands; ++b) s.values[b] = cube.at(b, u, v);
    return s;
}

// Deterministic shuffle under `seed`; validation gets round(fraction * count)
// cubes with at least one cube on each side.
inline SplitDataset split_train_val(const std::vector<SpectralCube>& cubes,
                                    double val_fraction, uint64_t seed) {
    require(cubes.size() >= 2, "split_train_val: need at least 2 cubes");
    require(val_fraction > 0.0 && val_fraction < 1.0,
            "split_train_val: val_fraction must be in (0, 1)");

    const size_t count = cubes.size();
    size_t val_count = static_cast<size_t>(
        std::llround(val_fraction * static_cast<double>(count)));
    val_count = std::clamp<size_t>(val_count, 1, count - 1);

    std::vector<size_t> order(count);
    for (size_t i = 0; i < count; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<size_t> val_idx(order.begin(), order.begin() + val_count);
    std::vector<size_t> train_idx(order.begin() + val_count, order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());

    SplitDataset split;
    split.train.role = DatasetRole::kTrain;
    split.validation.role = DatasetRole::kValidation;
    for (size_t i : train_idx) split.train.cubes.push_back(cubes[i]);
    for (size_t i : val_idx) split.validation.cubes.push_back(cubes[i]);
    split.train.validate();
    split.validation.validate();
    return split;
}

namespace detail {

// Smooth positive latent field: a handful of low-frequency cosines, min-max
// mapped into [0.1, 1.0] so MRAE denominators stay well away from the floor.
// The peak maps to 1.0 exactly ((hi-lo)/span is an exact 1.0), which keeps the
// K == N identity-mixing case invariant under the final normalize.
inline void fill_latent_field(Rng& rng, int height, int width, double* out) {
    struct Wave {
        double pu, pv, phase, amp;
    };
    Wave waves[3];
    for (auto& w : waves) {
        w.pu = static_cast<double>(rng.below(3));
        w.pv = static_cast<double>(rng.below(3));
        w.phase = rng.uniform(0.0, 2.0 * M_PI);
        w.amp = rng.uniform(0.3, 1.0);
    }
    double lo = kInf, hi = -kInf;
    for (int u = 0; u < height; ++u) {
        for (int v = 0; v < width; ++v) {
            double s = 0.0;
            for (const auto& w : waves)
                s += w.amp * std::cos(2.0 * M_PI * (w.pu * u / height + w.pv * v / width) +
                                      w.phase);
            out[u * width + v] = s;
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
    }
    const double span = hi - lo;
    for (int i = 0; i < height * width; ++i)
        out[i] = span > 1e-12 ? 0.1 + 0.9 * ((out[i] - lo) / span) : 0.55;
}

}  // namespace detail

// Desk-scale synthetic datasets with a computable selection ground truth.
// The mixing matrix is drawn once per dataset (fixed band identities across
// cubes); latent fields are fresh per cube. Each latent carries a smooth
// spectral profile (a Gaussian bump over the band axis with jittered center
// and width), so adjacent bands are redundant the way real reflectance
// spectra are and band choice has a meaningful ground truth.
inline std::vector<SpectralCube> synth_dataset(const SynthConfig& config, int count) {
    config.validate();
    require(count >= 2, "synth_dataset: count must be >= 2");

    const int n = config.bands;
    const int k = config.latents;
    Rng mix_rng = Rng(config.seed).derive(0x6d69780aULL);

    std::vector<double> mixing(static_cast<size_t>(n) * k, 0.0);
    if (k == n) {
        for (int i = 0; i < n; ++i) mixing[static_cast<size_t>(i) * k + i] = 1.0;
    } else {
        std::vector<double> center(k), width(k);
        for (int j = 0; j < k; ++j) {
            center[j] = (j + 0.5) / k + mix_rng.uniform(-0.15, 0.15) / k;
            width[j] = mix_rng.uniform(0.35, 0.65) / k;
        }
        for (int i = 0; i < n; ++i) {
            const double pos = n > 1 ? static_cast<double>(i) / (n - 1) : 0.5;
            double row_sum = 0.0;
            for (int j = 0; j < k; ++j) {
                const double z = (pos - center[j]) / width[j];
                const double w = std::exp(-0.5 * z * z);
                mixing[static_cast<size_t>(i) * k + j] = w;
                row_sum += w;
            }
            const double amp = mix_rng.uniform(0.6, 1.0);
            for (int j = 0; j < k; ++j)
                mixing[static_cast<size_t>(i) * k + j] *= amp / row_sum;
        }
    }

    std::vector<double> wavelengths(n);
    for (int i = 0; i < n; ++i)
        wavelengths[i] = 400.0 + (n > 1 ? 300.0 * i / (n - 1) : 0.0);

    std::vector<SpectralCube> cubes;
    cubes.reserve(count);
    const size_t plane = static_cast<size_t>(config.height) * config.width;

    for (int c = 0; c < count; ++c) {
        Rng cube_rng = Rng(config.seed).derive(0x63756265ULL + static_cast<uint64_t>(c));

        std::vector<double> latents(static_cast<size_t>(k) * plane);
        for (int j = 0; j < k; ++j)
            detail::fill_latent_field(cube_rng, config.height, config.width,
                                      latents.data() + j * plane);

        SpectralCube cube(config.height, config.width, wavelengths);
        for (int b = 0; b < n; ++b) {
            double* dst = cube.band_plane(b);
            for (size_t p = 0; p < plane; ++p) {
                double s = 0.0;
                for (int j = 0; j < k; ++j)
                    s += mixing[static_cast<size_t>(b) * k + j] * latents[j * plane + p];
                dst[p] = s;
            }
        }
        if (config.noise_sigma > 0.0)
            for (double& v : cube.data) v += cube_rng.normal(0.0, config.noise_sigma);
        for (double& v : cube.data) v = std::clamp(v, 0.0, 1.0);
        for (auto [i, j] : config.duplicate_pairs)
            std::memcpy(cube.band_plane(j), cube.band_plane(i), plane * sizeof(double));

        cubes.push_back(normalize(cube));
    }
    return cubes;
}

}  // namespace nbs
