#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nbs/eval.hpp"
#include "nbs/oracle.hpp"
#include "nbs/pipeline.hpp"

namespace nbs {

// Command-line entry point wiring the pipeline stages together:
//   synth -> manifest.json + cube files
//   corr / search -> correlation.csv, search.json
//   select -> selection_m<M>.json (any number of Ms from one search)
//   eval -> report/ablation/compare/oracle CSVs + summary.json
//   report -> console table from a summary.json
// All stages are deterministic under --seed; identical flags produce
// byte-identical outputs.

namespace detail {

inline SearchResult to_search_result(const LoadedSearch& loaded,
                                     const BandGates& gates) {
    SearchResult result;
    result.gates = gates;
    result.correlation = loaded.correlation;
    result.wavelengths_nm = loaded.wavelengths_nm;
    result.config = loaded.config;
    result.mode = loaded.mode;
    return result;
}

inline std::string beta_tag(double beta) {
    std::string s = format_number(beta);
    for (char& c : s)
        if (c == '.') c = 'p';
    return s;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Neural band selection for spectral recovery"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "Generate a synthetic cube dataset");
    SynthConfig synth_config;
    int synth_count = 6;
    std::vector<int> synth_dup_flat;
    std::string synth_out = ".";
    synth->add_option("--bands", synth_config.bands, "Band count N");
    synth->add_option("--height", synth_config.height, "Cube height");
    synth->add_option("--width", synth_config.width, "Cube width");
    synth->add_option("--latents", synth_config.latents, "Latent band-image count K");
    synth->add_option("--noise", synth_config.noise_sigma, "Additive noise std");
    synth->add_option("--duplicate", synth_dup_flat,
                      "Duplicate pair i,j (band j := band i); repeatable")
        ->delimiter(',');
    synth->add_option("--count", synth_count, "Number of cubes");
    synth->add_option("--seed", synth_config.seed, "RNG seed");
    synth->add_option("--out", synth_out, "Output directory")->required();

    // ---- corr ----
    auto* corr = app.add_subcommand("corr", "Band-wise cosine correlation matrix");
    std::string corr_manifest, corr_out = "correlation.csv";
    corr->add_option("--manifest", corr_manifest, "manifest.json path")->required();
    corr->add_option("--out", corr_out, "Output CSV path");

    // ---- search ----
    auto* search = app.add_subcommand("search", "Run the relaxed band search");
    SearchConfig search_config;
    std::string search_manifest, search_mode = "nbs", search_model = "conv",
                search_out = ".";
    search->add_option("--manifest", search_manifest, "manifest.json path")->required();
    search->add_option("--mode", search_mode, "nbs | spectral");
    search->add_option("--model", search_model, "linear | mlp | conv");
    search->add_option("--epochs", search_config.epochs, "Search epochs");
    search->add_option("--lr-w", search_config.lr_w, "Model learning rate");
    search->add_option("--lr-alpha", search_config.lr_alpha, "Gate learning rate");
    search->add_option("--l2", search_config.l2_alpha, "L2 weight on gate logits");
    search->add_option("--beta", search_config.beta, "Suppression exponent echo");
    search->add_option("--val-fraction", search_config.val_fraction,
                       "Validation fraction");
    search->add_option("--batch", search_config.batch, "Cubes per step");
    search->add_option("--hidden", search_config.hidden_width, "Hidden width");
    search->add_option("--kernel", search_config.kernel_size, "Conv kernel size");
    search->add_option("--seed", search_config.seed, "RNG seed");
    search->add_option("--out", search_out, "Output directory");

    // ---- select ----
    auto* select = app.add_subcommand("select", "One-shot band selection from a search");
    std::string select_search, select_out = ".";
    std::vector<int> select_ms;
    double select_beta = 0.5;
    select->add_option("--search", select_search, "search.json path")->required();
    select->add_option("--m", select_ms, "Band counts, e.g. 2,3,4")
        ->required()
        ->delimiter(',');
    select->add_option("--beta", select_beta, "Suppression exponent");
    select->add_option("--out", select_out, "Output directory");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "Train recovery models and report metrics");
    std::string eval_manifest, eval_selection, eval_search, eval_spectral_search,
        eval_model = "linear", eval_out = ".";
    std::vector<std::string> eval_compare;
    std::vector<int> eval_ms;
    std::vector<double> eval_betas{0.5};
    std::vector<double> eval_targets;
    SearchConfig eval_config;
    bool eval_ablation = false, eval_oracle = false, eval_per_wavelength = false,
         eval_full_diag = false;
    int eval_jobs = 1;
    eval->add_option("--manifest", eval_manifest, "manifest.json path")->required();
    eval->add_option("--selection", eval_selection, "Selection JSON to evaluate");
    eval->add_flag("--ablation", eval_ablation, "M/beta grid from one search");
    eval->add_option("--compare", eval_compare,
                     "Methods: nbs,spectral,manual,m-equal-split or file:<path>")
        ->delimiter(',');
    eval->add_flag("--oracle", eval_oracle, "Exhaustive combination ranking");
    eval->add_option("--search", eval_search, "search.json (nbs rows, ablation)");
    eval->add_option("--spectral-search", eval_spectral_search,
                     "search.json from --mode spectral (spectral rows)");
    eval->add_option("--m", eval_ms, "Band counts")->delimiter(',');
    eval->add_option("--beta", eval_betas, "Suppression exponents")->delimiter(',');
    eval->add_option("--targets", eval_targets, "Manual wavelengths, e.g. 630,530,470")
        ->delimiter(',');
    auto* eval_model_opt = eval->add_option("--model", eval_model, "linear | mlp | conv");
    auto* eval_epochs_opt =
        eval->add_option("--epochs", eval_config.epochs, "Training epochs");
    auto* eval_lr_opt = eval->add_option("--lr", eval_config.lr_w, "Learning rate");
    auto* eval_batch_opt = eval->add_option("--batch", eval_config.batch, "Batch size");
    auto* eval_hidden_opt =
        eval->add_option("--hidden", eval_config.hidden_width, "Hidden width");
    auto* eval_kernel_opt =
        eval->add_option("--kernel", eval_config.kernel_size, "Conv kernel size");
    auto* eval_vf_opt = eval->add_option("--val-fraction", eval_config.val_fraction,
                                         "Validation fraction");
    auto* eval_seed_opt = eval->add_option("--seed", eval_config.seed, "RNG seed");
    eval->add_flag("--per-wavelength", eval_per_wavelength,
                   "Also write per_wavelength.csv");
    eval->add_flag("--full-diagnostic", eval_full_diag,
                   "Append the all-bands diagnostic row to the ablation");
    eval->add_option("--jobs", eval_jobs, "Parallel evaluation workers");
    eval->add_option("--out", eval_out, "Output directory");

    // ---- report ----
    auto* report = app.add_subcommand("report", "Render a summary.json as a table");
    std::string report_summary, report_csv;
    report->add_option("--summary", report_summary, "summary.json path")->required();
    report->add_option("--csv", report_csv, "Optional CSV re-emit path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*synth) {
            require(synth_dup_flat.size() % 2 == 0,
                    "synth: --duplicate expects pairs i,j");
            for (size_t i = 0; i + 1 < synth_dup_flat.size(); i += 2)
                synth_config.duplicate_pairs.emplace_back(synth_dup_flat[i],
                                                          synth_dup_flat[i + 1]);
            const auto path = cmd_synth(synth_config, synth_count, synth_out);
            std::cout << "wrote " << path.string() << " (" << synth_count << " cubes)\n";
        } else if (*corr) {
            const auto path = cmd_corr(corr_manifest, corr_out);
            std::cout << "wrote " << path.string() << "\n";
        } else if (*search) {
            search_config.model_kind = model_kind_from_name(search_model);
            if (search_mode == "spectral") search_config.model_kind = ModelKind::kMlpPerPixel;
            const auto path =
                cmd_search(search_manifest, search_config, search_mode, search_out);
            std::cout << "wrote " << path.string() << "\n";
        } else if (*select) {
            const auto files = cmd_select(select_search, select_ms, select_beta, select_out);
            for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
        } else if (*eval) {
            const int modes = (eval_selection.empty() ? 0 : 1) + (eval_ablation ? 1 : 0) +
                              (eval_compare.empty() ? 0 : 1) + (eval_oracle ? 1 : 0);
            require(modes == 1,
                    "eval: choose exactly one of --selection, --ablation, --compare, "
                    "--oracle");

            const auto manifest = load_manifest(eval_manifest);
            const auto cubes = load_manifest_cubes(manifest);

            // Ablation rows inherit the search's training config; explicit
            // flags override either base.
            LoadedSearch loaded_nbs;
            bool have_search = !eval_search.empty();
            if (have_search) loaded_nbs = load_search(eval_search);
            SearchConfig config = (eval_ablation && have_search) ? loaded_nbs.config
                                                                 : eval_config;
            if (*eval_epochs_opt) config.epochs = eval_config.epochs;
            if (*eval_lr_opt) config.lr_w = eval_config.lr_w;
            if (*eval_batch_opt) config.batch = eval_config.batch;
            if (*eval_hidden_opt) config.hidden_width = eval_config.hidden_width;
            if (*eval_kernel_opt) config.kernel_size = eval_config.kernel_size;
            if (*eval_vf_opt) config.val_fraction = eval_config.val_fraction;
            if (*eval_seed_opt) config.seed = eval_config.seed;
            ModelKind model_kind = ModelKind::kLinearPerPixel;
            if (*eval_model_opt)
                model_kind = model_kind_from_name(eval_model);
            else if (eval_ablation && have_search)
                model_kind = config.model_kind;
            config.model_kind = model_kind;  // m-equal-split trains the same kind

            const SplitDataset split =
                split_train_val(cubes, config.val_fraction, config.seed);
            std::filesystem::create_directories(eval_out);
            const std::filesystem::path out_dir = eval_out;

            if (eval_oracle) {
                require(eval_ms.size() == 1, "eval --oracle: need exactly one --m");
                const auto scores = exhaustive_search(split, eval_ms.front(), eval_jobs);
                write_oracle_csv(scores, out_dir / "oracle.csv");
                std::cout << "wrote " << (out_dir / "oracle.csv").string() << "\n";
            } else if (!eval_selection.empty()) {
                const SelectionResult selection = load_selection(eval_selection);
                const EvalRun run = train_and_evaluate(split, selection, model_kind, config);
                write_report_csv(run.report, out_dir / "report.csv");
                if (eval_per_wavelength)
                    write_per_wavelength_csv(run.report, out_dir / "per_wavelength.csv");
                write_summary_json({{selection.method, run}}, out_dir / "summary.json");
                std::cout << "wrote " << (out_dir / "summary.json").string() << "\n";
            } else if (eval_ablation) {
                require(have_search, "eval --ablation: --search is required");
                require(!eval_ms.empty(), "eval --ablation: --m list is required");
                BandGates gates(static_cast<int>(loaded_nbs.wavelengths_nm.size()));
                gates.pass_logits = loaded_nbs.pass_logits;
                gates.drop_logits = loaded_nbs.drop_logits;
                SearchResult result = detail::to_search_result(loaded_nbs, gates);
                result.config = config;
                auto runs = ablation_m_beta(split, result, eval_ms, eval_betas,
                                            model_kind, eval_jobs);
                if (eval_full_diag) {
                    const SelectionResult full =
                        full_band_selection(loaded_nbs.wavelengths_nm);
                    runs.push_back(train_and_evaluate(split, full, model_kind, config));
                }
                write_ablation_csv(runs, out_dir / "ablation.csv");
                std::vector<NamedEvalRun> named;
                for (const auto& run : runs) {
                    std::string name = run.selection.method == "full"
                                           ? "full"
                                           : "m" + std::to_string(run.selection.m()) +
                                                 "_beta" +
                                                 detail::beta_tag(run.selection.beta);
                    named.push_back({name, run});
                }
                write_summary_json(named, out_dir / "summary.json");
                std::cout << "wrote " << (out_dir / "ablation.csv").string() << "\n";
            } else {
                require(!eval_ms.empty() || !eval_targets.empty(),
                        "eval --compare: need --m (or --targets for manual-only)");
                std::vector<std::pair<std::string, SelectionResult>> methods;
                for (const auto& name : eval_compare) {
                    if (name == "nbs" || name == "spectral") {
                        const std::string& path =
                            name == "nbs" ? eval_search : eval_spectral_search;
                        require(!path.empty(), "eval --compare: " + name + " needs --" +
                                                   (name == "nbs"
                                                        ? std::string("search")
                                                        : std::string("spectral-search")));
                        const LoadedSearch s = load_search(path);
                        require(!eval_ms.empty(), "eval --compare: --m is required");
                        SelectionResult sel =
                            select_bands(s.priorities, s.correlation, eval_ms.front(),
                                         eval_betas.front(), s.wavelengths_nm);
                        sel.method = name;
                        methods.emplace_back(name, sel);
                    } else if (name == "manual") {
                        require(!eval_targets.empty(),
                                "eval --compare: manual needs --targets");
                        methods.emplace_back(
                            name, manual_selection(cubes.front().wavelengths_nm,
                                                   eval_targets));
                    } else if (name == "m-equal-split") {
                        require(!eval_ms.empty(), "eval --compare: --m is required");
                        methods.emplace_back(
                            name, m_equal_split_search(split, eval_ms.front(), config));
                    } else if (name.rfind("file:", 0) == 0) {
                        const auto path = name.substr(5);
                        methods.emplace_back(
                            std::filesystem::path(path).stem().string(),
                            load_selection(path));
                    } else {
                        fail("eval --compare: unknown method '" + name + "'");
                    }
                }
                const auto runs =
                    compare_methods(split, methods, model_kind, config, eval_jobs);
                write_compare_csv(runs, out_dir / "compare.csv");
                write_summary_json(runs, out_dir / "summary.json");
                std::cout << "wrote " << (out_dir / "compare.csv").string() << "\n";
            }
        } else if (*report) {
            std::ifstream in(report_summary, std::ios::binary);
            require(in.good(), "report: missing file: " + report_summary);
            nlohmann::json j;
            in >> j;
            require(j.contains("runs"), "report: not a summary.json (no 'runs')");
            std::printf("%-18s %-8s %4s %10s %10s %10s\n", "name", "model", "M",
                        "MRAE", "RMSE", "PSNR");
            for (const auto& run : j["runs"]) {
                const auto& metrics = run.at("metrics");
                const std::string psnr_str =
                    metrics.at("psnr").is_string()
                        ? metrics.at("psnr").get<std::string>()
                        : format_number(metrics.at("psnr").get<double>());
                std::printf("%-18s %-8s %4d %10s %10s %10s\n",
                            run.at("name").get<std::string>().c_str(),
                            run.at("model").get<std::string>().c_str(),
                            run.at("selection").at("m").get<int>(),
                            format_number(metrics.at("mrae").get<double>()).c_str(),
                            format_number(metrics.at("rmse").get<double>()).c_str(),
                            psnr_str.c_str());
            }
            if (!report_csv.empty()) {
                std::ofstream out(report_csv, std::ios::binary);
                require(out.good(), "report: cannot open " + report_csv);
                out << "name,model,m,mrae,rmse,psnr\n";
                for (const auto& run : j["runs"]) {
                    const auto& metrics = run.at("metrics");
                    const std::string psnr_str =
                        metrics.at("psnr").is_string()
                            ? metrics.at("psnr").get<std::string>()
                            : format_number(metrics.at("psnr").get<double>());
                    out << run.at("name").get<std::string>() << ","
                        << run.at("model").get<std::string>() << ","
                        << run.at("selection").at("m").get<int>() << ","
                        << format_number(metrics.at("mrae").get<double>()) << ","
                        << format_number(metrics.at("rmse").get<double>()) << ","
                        << psnr_str << "\n";
                }
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace nbs
