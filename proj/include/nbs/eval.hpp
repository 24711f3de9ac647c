#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nbs/common.hpp"
#include "nbs/cube.hpp"
#include "nbs/metrics.hpp"
#include "nbs/recovery.hpp"
#include "nbs/relax_search.hpp"
#include "nbs/select.hpp"

namespace nbs {

// One (selection × recovery model) evaluation cell: train on the selected
// band planes, score on the validation split. runtime_seconds is an in-memory
// diagnostic and is deliberately never serialized (outputs must be
// byte-identical across runs).
struct EvalRun {
    SelectionResult selection;
    ModelKind model_kind = ModelKind::kLinearPerPixel;
    SearchConfig config;
    MetricsReport report;
    double runtime_seconds = 0.0;
};

namespace detail {

inline Tensor selected_channels(const SpectralCube& cube,
                                const std::vector<int>& bands) {
    Tensor input(cube.height, cube.width, static_cast<int>(bands.size()));
    for (size_t c = 0; c < bands.size(); ++c)
        std::copy(cube.band_plane(bands[c]),
                  cube.band_plane(bands[c]) + cube.plane_size(),
                  input.plane(static_cast<int>(c)));
    return input;
}

}  // namespace detail

// Trains a recovery model on the selected channels (cosine-annealed SGD on
// the training split) and reports aggregate metrics on the validation split.
// Deterministic under config.seed. The diagnostic all-bands selection
// (method "full") is accepted; every other method must satisfy M < N.
inline EvalRun train_and_evaluate(const SplitDataset& split,
                                  const SelectionResult& selection,
                                  ModelKind model_kind, const SearchConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    config.validate();
    split.train.validate();
    split.validation.validate();
    const SpectralCube& ref = split.train.cubes.front();
    detail::check_selection(selection.indices, ref.bands,
                            selection.method == "full");

    RecoveryModel model =
        make_model(model_kind, selection.m(), ref.bands, config.hidden_width,
                   config.kernel_size, Rng(config.seed).derive(0x6d6f64ULL).seed());
    Rng shuffle_rng = Rng(config.seed).derive(0x7368ULL);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, config.epochs, config.lr_w);
        for (const auto& batch :
             detail::epoch_batches(split.train.cubes.size(), config.batch, shuffle_rng)) {
            GradientBundle mean;
            mean.grad_params.assign(model.params.size(), 0.0);
            for (size_t idx : batch) {
                const SpectralCube& cube = split.train.cubes[idx];
                const GradientBundle bundle = loss_and_gradients(
                    model, detail::selected_channels(cube, selection.indices), cube);
                for (size_t i = 0; i < mean.grad_params.size(); ++i)
                    mean.grad_params[i] += bundle.grad_params[i];
            }
            const double inv = 1.0 / static_cast<double>(batch.size());
            for (double& g : mean.grad_params) g *= inv;
            model = sgd_step(model, mean, lr);
        }
    }

    std::vector<SpectralCube> predictions;
    predictions.reserve(split.validation.cubes.size());
    for (const auto& cube : split.validation.cubes) {
        const Tensor pred =
            forward(model, detail::selected_channels(cube, selection.indices));
        SpectralCube out(cube.height, cube.width, cube.wavelengths_nm);
        out.data = pred.data;
        predictions.push_back(std::move(out));
    }

    EvalRun run;
    run.selection = selection;
    run.model_kind = model_kind;
    run.config = config;
    run.report = aggregate_report(split.validation, predictions);
    run.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

// (M, beta) grid: every selection derives from the single search result (the
// one-shot property under test); training config and seed come from the
// search config, so rows differ only in the selection.
inline std::vector<EvalRun> ablation_m_beta(const SplitDataset& split,
                                            const SearchResult& search,
                                            const std::vector<int>& ms,
                                            const std::vector<double>& betas,
                                            ModelKind model_kind, int jobs = 1) {
    require(!ms.empty() && !betas.empty(), "ablation_m_beta: empty M or beta list");
    const std::vector<double> priorities = search.gates.priority();

    std::vector<std::pair<int, double>> grid;
    for (int m : ms)
        for (double beta : betas) grid.emplace_back(m, beta);

    std::vector<EvalRun> runs(grid.size());
    parallel_for(grid.size(), jobs, [&](size_t i) {
        const auto [m, beta] = grid[i];
        SelectionResult selection = select_bands(priorities, search.correlation, m,
                                                 beta, search.wavelengths_nm);
        if (search.mode == "spectral") selection.method = "spectral";
        runs[i] = train_and_evaluate(split, selection, model_kind, search.config);
    });
    return runs;
}

struct NamedEvalRun {
    std::string name;
    EvalRun run;
};

// One run per method under the identical training config and seed, so rows
// differ only through the selections. All selections must share M.
inline std::vector<NamedEvalRun> compare_methods(
    const SplitDataset& split,
    const std::vector<std::pair<std::string, SelectionResult>>& methods,
    ModelKind model_kind, const SearchConfig& config, int jobs = 1) {
    require(!methods.empty(), "compare_methods: no methods given");
    for (const auto& [name, selection] : methods)
        require(selection.m() == methods.front().second.m(),
                "compare_methods: mixed M across methods");

    std::vector<NamedEvalRun> runs(methods.size());
    parallel_for(methods.size(), jobs, [&](size_t i) {
        runs[i].name = methods[i].first;
        runs[i].run = train_and_evaluate(split, methods[i].second, model_kind, config);
    });
    return runs;
}

// ----------------------------------------------------------------------------
// Output writers
// ----------------------------------------------------------------------------

namespace detail {

inline std::string joined_wavelengths(const SelectionResult& selection) {
    std::string out;
    for (size_t i = 0; i < selection.wavelengths_nm.size(); ++i) {
        if (i) out += ";";
        out += format_number(selection.wavelengths_nm[i]);
    }
    return out;
}

}  // namespace detail

inline void write_compare_csv(const std::vector<NamedEvalRun>& runs,
                              const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_compare_csv: cannot open " + path.string());
    out << "method,wavelengths,mrae,rmse,psnr\n";
    for (const auto& [name, run] : runs)
        out << name << "," << detail::joined_wavelengths(run.selection) << ","
            << format_number(run.report.mrae) << "," << format_number(run.report.rmse)
            << "," << format_number(run.report.psnr) << "\n";
    require(out.good(), "write_compare_csv: write failed: " + path.string());
}

inline void write_ablation_csv(const std::vector<EvalRun>& runs,
                               const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_ablation_csv: cannot open " + path.string());
    out << "m,beta,indices,wavelengths,mrae,rmse,psnr\n";
    for (const auto& run : runs) {
        out << run.selection.m() << ","
            << (std::isnan(run.selection.beta) ? "" : format_number(run.selection.beta))
            << ",";
        for (size_t i = 0; i < run.selection.indices.size(); ++i) {
            if (i) out << ";";
            out << run.selection.indices[i];
        }
        out << "," << detail::joined_wavelengths(run.selection) << ","
            << format_number(run.report.mrae) << "," << format_number(run.report.rmse)
            << "," << format_number(run.report.psnr) << "\n";
    }
    require(out.good(), "write_ablation_csv: write failed: " + path.string());
}

inline nlohmann::ordered_json search_config_to_json(const SearchConfig& config) {
    nlohmann::ordered_json j;
    j["epochs"] = config.epochs;
    j["lr_w"] = config.lr_w;
    j["lr_alpha"] = config.lr_alpha;
    j["l2_alpha"] = config.l2_alpha;
    j["val_fraction"] = config.val_fraction;
    j["beta"] = config.beta;
    j["model_kind"] = model_kind_name(config.model_kind);
    j["hidden_width"] = config.hidden_width;
    j["kernel_size"] = config.kernel_size;
    j["seed"] = config.seed;
    j["batch"] = config.batch;
    return j;
}

inline nlohmann::ordered_json metrics_to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["mrae"] = report.mrae;
    j["rmse"] = report.rmse;
    if (std::isinf(report.psnr))
        j["psnr"] = "inf";
    else
        j["psnr"] = report.psnr;
    j["psnr_inf_count"] = report.psnr_inf_count;
    nlohmann::ordered_json per_wl = nlohmann::ordered_json::array();
    for (const auto& [wl, value] : report.per_wavelength_psnr) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        row.push_back(wl);
        if (std::isinf(value))
            row.push_back("inf");
        else
            row.push_back(value);
        per_wl.push_back(row);
    }
    j["per_wavelength_psnr"] = per_wl;
    return j;
}

inline nlohmann::ordered_json eval_run_to_json(const EvalRun& run,
                                               const std::string& name) {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["model"] = model_kind_name(run.model_kind);
    j["selection"] = selection_to_json(run.selection);
    j["config"] = search_config_to_json(run.config);
    j["metrics"] = metrics_to_json(run.report);
    return j;
}

inline void write_summary_json(const std::vector<NamedEvalRun>& runs,
                               const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["runs"] = nlohmann::ordered_json::array();
    for (const auto& [name, run] : runs) j["runs"].push_back(eval_run_to_json(run, name));
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_summary_json: cannot open " + path.string());
    out << j.dump(2) << "\n";
    require(out.good(), "write_summary_json: write failed: " + path.string());
}

}  // namespace nbs
