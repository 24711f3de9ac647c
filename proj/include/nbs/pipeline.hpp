#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbs/common.hpp"
#include "nbs/correlation.hpp"
#include "nbs/cube.hpp"
#include "nbs/eval.hpp"
#include "nbs/oracle.hpp"
#include "nbs/relax_search.hpp"
#include "nbs/select.hpp"

namespace nbs {

// File-level pipelines: synth writes cubes + manifest.json, search reads a
// manifest and writes search.json + correlation.csv, select turns search.json
// into selection JSONs, eval writes CSV reports + summary.json. Stages talk
// through files only, so any stage can be rerun in isolation.

struct Manifest {
    std::filesystem::path dir;
    std::vector<std::string> cube_stems;
    nlohmann::json config_echo;
};

inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_manifest: missing file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail("load_manifest: malformed JSON " + path.string() + ": " + e.what());
    }
    Manifest manifest;
    manifest.dir = path.parent_path();
    manifest.cube_stems = j.at("cubes").get<std::vector<std::string>>();
    if (j.contains("config")) manifest.config_echo = j["config"];
    require(!manifest.cube_stems.empty(), "load_manifest: empty cube list");
    return manifest;
}

inline std::vector<SpectralCube> load_manifest_cubes(const Manifest& manifest) {
    std::vector<SpectralCube> cubes;
    cubes.reserve(manifest.cube_stems.size());
    for (const auto& stem : manifest.cube_stems)
        cubes.push_back(load_cube(manifest.dir / stem));
    return cubes;
}

inline std::filesystem::path cmd_synth(const SynthConfig& config, int count,
                                       const std::filesystem::path& out_dir) {
    config.validate();
    std::filesystem::create_directories(out_dir);
    const auto cubes = synth_dataset(config, count);

    nlohmann::ordered_json manifest;
    manifest["cubes"] = nlohmann::ordered_json::array();
    for (size_t i = 0; i < cubes.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "cube_%03zu", i);
        save_cube(cubes[i], out_dir / name);
        manifest["cubes"].push_back(name);
    }
    nlohmann::ordered_json cfg;
    cfg["bands"] = config.bands;
    cfg["height"] = config.height;
    cfg["width"] = config.width;
    cfg["latents"] = config.latents;
    cfg["noise_sigma"] = config.noise_sigma;
    cfg["duplicate_pairs"] = nlohmann::ordered_json::array();
    for (auto [i, j] : config.duplicate_pairs) {
        nlohmann::ordered_json pair = nlohmann::ordered_json::array();
        pair.push_back(i);
        pair.push_back(j);
        cfg["duplicate_pairs"].push_back(pair);
    }
    cfg["seed"] = config.seed;
    cfg["count"] = count;
    manifest["config"] = cfg;

    const auto manifest_path = out_dir / "manifest.json";
    std::ofstream out(manifest_path, std::ios::binary);
    require(out.good(), "cmd_synth: cannot write " + manifest_path.string());
    out << manifest.dump(2) << "\n";
    require(out.good(), "cmd_synth: write failed: " + manifest_path.string());
    return manifest_path;
}

inline std::filesystem::path cmd_corr(const std::filesystem::path& manifest_path,
                                      const std::filesystem::path& out_path) {
    const auto manifest = load_manifest(manifest_path);
    CubeDataset all;
    all.cubes = load_manifest_cubes(manifest);
    const CorrelationMatrix c = band_correlation(all);
    if (out_path.has_parent_path())
        std::filesystem::create_directories(out_path.parent_path());
    write_correlation_csv(c, out_path);
    return out_path;
}

inline nlohmann::ordered_json search_to_json(const SearchResult& result,
                                             const std::string& correlation_file) {
    nlohmann::ordered_json j;
    j["mode"] = result.mode;
    j["config"] = search_config_to_json(result.config);
    j["bands"] = static_cast<int>(result.wavelengths_nm.size());
    j["wavelengths_nm"] = result.wavelengths_nm;
    j["priorities"] = result.gates.priority();
    j["pass_logits"] = result.gates.pass_logits;
    j["drop_logits"] = result.gates.drop_logits;
    j["correlation_csv"] = correlation_file;
    nlohmann::ordered_json history;
    history["train_loss"] = nlohmann::ordered_json::array();
    history["val_loss"] = nlohmann::ordered_json::array();
    history["priorities"] = nlohmann::ordered_json::array();
    for (const auto& epoch : result.history) {
        history["train_loss"].push_back(epoch.train_loss);
        history["val_loss"].push_back(epoch.val_loss);
        history["priorities"].push_back(epoch.priorities);
    }
    j["history"] = history;
    return j;
}

// Loaded view of a search.json: enough to run post-processing and evaluation.
struct LoadedSearch {
    std::string mode;
    SearchConfig config;
    std::vector<double> wavelengths_nm;
    std::vector<double> priorities;
    std::vector<double> pass_logits;
    std::vector<double> drop_logits;
    CorrelationMatrix correlation;
};

inline SearchConfig search_config_from_json(const nlohmann::json& j) {
    SearchConfig config;
    config.epochs = j.at("epochs").get<int>();
    config.lr_w = j.at("lr_w").get<double>();
    config.lr_alpha = j.at("lr_alpha").get<double>();
    config.l2_alpha = j.at("l2_alpha").get<double>();
    config.val_fraction = j.at("val_fraction").get<double>();
    config.beta = j.at("beta").get<double>();
    config.model_kind = model_kind_from_name(j.at("model_kind").get<std::string>());
    config.hidden_width = j.at("hidden_width").get<int>();
    config.kernel_size = j.at("kernel_size").get<int>();
    config.seed = j.at("seed").get<uint64_t>();
    config.batch = j.at("batch").get<int>();
    return config;
}

inline LoadedSearch load_search(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_search: missing file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail("load_search: malformed JSON " + path.string() + ": " + e.what());
    }
    LoadedSearch search;
    search.mode = j.at("mode").get<std::string>();
    search.config = search_config_from_json(j.at("config"));
    search.wavelengths_nm = j.at("wavelengths_nm").get<std::vector<double>>();
    search.priorities = j.at("priorities").get<std::vector<double>>();
    search.pass_logits = j.at("pass_logits").get<std::vector<double>>();
    search.drop_logits = j.at("drop_logits").get<std::vector<double>>();
    const auto corr_file = j.at("correlation_csv").get<std::string>();
    search.correlation = load_correlation_csv(path.parent_path() / corr_file);
    require(search.correlation.size ==
                static_cast<int>(search.wavelengths_nm.size()),
            "load_search: correlation size does not match band count");
    return search;
}

inline std::filesystem::path cmd_search(const std::filesystem::path& manifest_path,
                                        const SearchConfig& config,
                                        const std::string& mode,
                                        const std::filesystem::path& out_dir) {
    require(mode == "nbs" || mode == "spectral",
            "cmd_search: mode must be nbs or spectral");
    const auto manifest = load_manifest(manifest_path);
    const auto cubes = load_manifest_cubes(manifest);
    const SplitDataset split = split_train_val(cubes, config.val_fraction, config.seed);

    const SearchResult result = mode == "spectral"
                                    ? spectral_mode_search(split, config)
                                    : bilevel_search(split, config);

    std::filesystem::create_directories(out_dir);
    write_correlation_csv(result.correlation, out_dir / "correlation.csv");
    const auto search_path = out_dir / "search.json";
    std::ofstream out(search_path, std::ios::binary);
    require(out.good(), "cmd_search: cannot write " + search_path.string());
    out << search_to_json(result, "correlation.csv").dump(2) << "\n";
    require(out.good(), "cmd_search: write failed: " + search_path.string());
    return search_path;
}

inline std::vector<std::filesystem::path> cmd_select(
    const std::filesystem::path& search_path, const std::vector<int>& ms,
    double beta, const std::filesystem::path& out_dir) {
    const LoadedSearch search = load_search(search_path);
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    for (const int m : ms) {
        SelectionResult selection = select_bands(search.priorities, search.correlation,
                                                 m, beta, search.wavelengths_nm);
        if (search.mode == "spectral") selection.method = "spectral";
        char name[32];
        std::snprintf(name, sizeof(name), "selection_m%d.json", m);
        const auto path = out_dir / name;
        save_selection(selection, path);
        written.push_back(path);
    }
    return written;
}

}  // namespace nbs
