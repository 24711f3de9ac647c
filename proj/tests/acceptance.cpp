// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Each criterion carries its runtime budget; exceeding the
// budget is a failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "nbs/cli.hpp"
#include "nbs/cube.hpp"
#include "nbs/eval.hpp"
#include "nbs/metrics.hpp"
#include "nbs/oracle.hpp"
#include "nbs/relax_search.hpp"
#include "nbs/select.hpp"

using namespace nbs;

namespace {

struct Check {
    bool ok = true;
    std::string detail;

    void expect(bool condition, const std::string& message) {
        if (!condition) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += message;
        }
    }
};

double rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double d = analytic[i] - numeric[i];
        diff_sq += d * d;
        a_sq += analytic[i] * analytic[i];
        n_sq += numeric[i] * numeric[i];
    }
    const double denom = std::sqrt(a_sq) + std::sqrt(n_sq);
    return denom < 1e-12 ? std::sqrt(diff_sq) : std::sqrt(diff_sq) / denom;
}

template <typename Fn>
std::vector<double> central_diff(std::vector<double> x, Fn&& fn, double h = 1e-5) {
    std::vector<double> grad(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double plus = fn(x);
        x[i] = saved - h;
        const double minus = fn(x);
        x[i] = saved;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    return grad;
}

double mrae_flat(const std::vector<double>& gt, const std::vector<double>& pred) {
    double sum = 0.0;
    for (size_t i = 0; i < gt.size(); ++i)
        sum += std::abs(gt[i] - pred[i]) / std::max(std::abs(gt[i]), 1e-3);
    return sum / static_cast<double>(gt.size());
}

std::vector<double> wavelengths_of(int n) {
    std::vector<double> wl(n);
    for (int i = 0; i < n; ++i) wl[i] = 400.0 + (n > 1 ? 300.0 * i / (n - 1) : 0.0);
    return wl;
}

SpectralCube target_away_from_kinks(const Tensor& pred, Rng& rng) {
    SpectralCube target(pred.height, pred.width, wavelengths_of(pred.channels));
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const double offset = 0.05 + rng.uniform(0.0, 0.3);
        target.data[i] = pred.data[i] + (rng.uniform() < 0.5 ? -offset : offset);
    }
    return target;
}

// ---------------------------------------------------------------------------
// A1: analytic gradients vs central finite differences (h = 1e-5, rel 1e-4)
// ---------------------------------------------------------------------------
Check criterion_a1() {
    Check check;
    Rng rng(1001);
    for (ModelKind kind : {ModelKind::kLinearPerPixel, ModelKind::kMlpPerPixel,
                           ModelKind::kConvSpatial}) {
        for (int trial = 0; trial < 20; ++trial) {
            const int h = 1 + static_cast<int>(rng.below(4));
            const int w = 1 + static_cast<int>(rng.below(4));
            const int cin = 1 + static_cast<int>(rng.below(6));
            const int n = 2 + static_cast<int>(rng.below(5));
            const RecoveryModel model =
                make_model(kind, cin, n, 3 + static_cast<int>(rng.below(4)),
                           rng.uniform() < 0.5 ? 1 : 3, rng.next_u64());
            Tensor input(h, w, cin);
            for (double& v : input.data) v = rng.uniform(-0.8, 0.8);
            const SpectralCube target = target_away_from_kinks(forward(model, input), rng);

            const GradientBundle bundle = loss_and_gradients(model, input, target);
            const auto fd_params =
                central_diff(model.params, [&](const std::vector<double>& params) {
                    RecoveryModel probe = model;
                    probe.params = params;
                    return mrae_flat(target.data, forward(probe, input).data);
                });
            const auto fd_input =
                central_diff(input.data, [&](const std::vector<double>& data) {
                    Tensor probe = input;
                    probe.data = data;
                    return mrae_flat(target.data, forward(model, probe).data);
                });
            const double param_err = rel_error(bundle.grad_params, fd_params);
            const double input_err = rel_error(bundle.grad_input.data, fd_input);
            check.expect(param_err < 1e-4, std::string(model_kind_name(kind)) +
                                               " param rel err " +
                                               format_number(param_err));
            check.expect(input_err < 1e-4, std::string(model_kind_name(kind)) +
                                               " input rel err " +
                                               format_number(input_err));
        }
    }

    // alpha logits through gated_cube (validation objective incl. L2 penalty)
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(5));
        const int h = 1 + static_cast<int>(rng.below(4));
        const int w = 1 + static_cast<int>(rng.below(4));
        SpectralCube cube(h, w, wavelengths_of(n));
        for (double& v : cube.data) v = rng.uniform(0.05, 1.0);
        const RecoveryModel model =
            make_model(trial % 2 ? ModelKind::kConvSpatial : ModelKind::kLinearPerPixel,
                       n, n, 4, 3, rng.next_u64());
        BandGates gates(n);
        for (int i = 0; i < n; ++i) {
            gates.pass_logits[i] = rng.uniform(-0.5, 0.5);
            gates.drop_logits[i] = rng.uniform(-0.5, 0.5);
        }
        const SpectralCube target =
            target_away_from_kinks(forward(model, gated_cube(cube, gates)), rng);

        const GradientBundle bundle =
            loss_and_gradients(model, gated_cube(cube, gates), target);
        std::vector<double> dg(n, 0.0);
        detail::accumulate_gate_grad(bundle.grad_input, cube, dg);
        const auto g = gates.priority();
        const AlphaPenalty penalty = alpha_l2_penalty(gates, 0.01);

        std::vector<double> analytic, flat;
        for (int i = 0; i < n; ++i) {
            analytic.push_back(dg[i] * g[i] * (1.0 - g[i]) + penalty.grad_pass[i]);
            flat.push_back(gates.pass_logits[i]);
        }
        for (int i = 0; i < n; ++i) {
            analytic.push_back(-dg[i] * g[i] * (1.0 - g[i]) + penalty.grad_drop[i]);
            flat.push_back(gates.drop_logits[i]);
        }
        const auto fd = central_diff(flat, [&](const std::vector<double>& logits) {
            BandGates probe(n);
            probe.pass_logits.assign(logits.begin(), logits.begin() + n);
            probe.drop_logits.assign(logits.begin() + n, logits.end());
            return mrae_flat(target.data, forward(model, gated_cube(cube, probe)).data) +
                   alpha_l2_penalty(probe, 0.01).value;
        });
        const double alpha_err = rel_error(analytic, fd);
        check.expect(alpha_err < 1e-4, "alpha rel err " + format_number(alpha_err));
    }
    return check;
}

// ---------------------------------------------------------------------------
// A2: post-processing exactness (hand example + literal re-implementation)
// ---------------------------------------------------------------------------
std::vector<int> literal_postprocess(std::vector<double> alpha,
                                     const CorrelationMatrix& c, int m, double beta) {
    std::vector<int> picks;
    const int n = static_cast<int>(alpha.size());
    for (int j = 0; j < m; ++j) {
        int k = 0;
        for (int i = 1; i < n; ++i)
            if (alpha[i] > alpha[k]) k = i;
        picks.push_back(k);
        for (int l = 0; l < n; ++l) {
            const double clamped = std::min(1.0, std::max(0.0, c.at(k, l)));
            alpha[l] *= std::pow(1.0 - clamped, beta);
        }
    }
    return picks;
}

Check criterion_a2() {
    Check check;
    CorrelationMatrix hand(3);
    hand.at(0, 1) = hand.at(1, 0) = 0.96;
    const SelectionResult sel = select_bands({0.9, 0.8, 0.1}, hand, 2, 0.5);
    check.expect(sel.indices == std::vector<int>({0, 1}),
                 "hand example picked a different pair");

    Rng rng(2002);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(9));
        std::vector<double> priorities(n);
        for (double& p : priorities) p = rng.uniform(0.01, 1.0);
        CorrelationMatrix c(n);
        for (int k = 0; k < n; ++k)
            for (int l = k + 1; l < n; ++l)
                c.at(k, l) = c.at(l, k) = rng.uniform(-0.99, 0.99);
        const double beta = rng.uniform(0.1, 2.0);
        const int m = 1 + static_cast<int>(rng.below(n - 1));
        const SelectionResult library = select_bands(priorities, c, m, beta);
        check.expect(library.indices == literal_postprocess(priorities, c, m, beta),
                     "divergence from the literal execution at trial " +
                         std::to_string(trial));
    }
    return check;
}

// ---------------------------------------------------------------------------
// A3: one-shot prefix consistency
// ---------------------------------------------------------------------------
Check criterion_a3() {
    Check check;
    Rng rng(3003);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 4 + static_cast<int>(rng.below(8));
        std::vector<double> priorities(n);
        for (double& p : priorities) p = rng.uniform(0.01, 1.0);
        CorrelationMatrix c(n);
        for (int k = 0; k < n; ++k)
            for (int l = k + 1; l < n; ++l)
                c.at(k, l) = c.at(l, k) = rng.uniform(-0.99, 0.99);
        const double beta = rng.uniform(0.05, 2.0);
        const int m_small = 1 + static_cast<int>(rng.below(n - 2));
        const int m_large = m_small + 1 + static_cast<int>(rng.below(n - 1 - m_small));
        const auto small = select_bands(priorities, c, m_small, beta).indices;
        const auto large = select_bands(priorities, c, m_large, beta).indices;
        check.expect(std::equal(small.begin(), small.end(), large.begin()),
                     "prefix violated at trial " + std::to_string(trial));
    }
    return check;
}

// ---------------------------------------------------------------------------
// A4: duplicate suppression through the full search + selection path
// ---------------------------------------------------------------------------
Check criterion_a4() {
    Check check;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        SynthConfig synth;
        synth.bands = 8;
        synth.latents = 3;
        synth.height = 8;
        synth.width = 8;
        synth.noise_sigma = 0.01;
        synth.duplicate_pairs = {{0, 1}};
        synth.seed = seed;
        const auto cubes = synth_dataset(synth, 12);

        SearchConfig config;
        config.epochs = 80;
        config.lr_w = 0.05;
        config.lr_alpha = 0.2;
        config.model_kind = ModelKind::kConvSpatial;
        config.val_fraction = 0.25;
        config.seed = seed;

        const SplitDataset split = split_train_val(cubes, config.val_fraction, seed);
        const SearchResult result = bilevel_search(split, config);
        const auto priorities = result.gates.priority();
        for (int m = 2; m <= 7; ++m) {  // distinct-band count is 7
            const SelectionResult sel =
                select_bands(priorities, result.correlation, m, 0.5);
            bool has0 = false, has1 = false;
            for (int idx : sel.indices) {
                has0 |= idx == 0;
                has1 |= idx == 1;
            }
            check.expect(!(has0 && has1), "seed " + std::to_string(seed) + " M " +
                                              std::to_string(m) +
                                              " picked both duplicates");
        }
    }
    return check;
}

// ---------------------------------------------------------------------------
// A5: proximity to the exhaustive oracle (median over 5 seeds within 10%)
// ---------------------------------------------------------------------------
Check criterion_a5() {
    Check check;
    for (int m : {2, 3}) {
        std::vector<double> gaps;
        for (uint64_t seed = 1; seed <= 5; ++seed) {
            SynthConfig synth;
            synth.bands = 8;
            synth.latents = 3;
            synth.height = 8;
            synth.width = 8;
            synth.noise_sigma = 0.01;
            synth.seed = seed;
            const auto cubes = synth_dataset(synth, 16);

            SearchConfig config;
            config.epochs = 300;
            config.lr_w = 0.1;
            config.lr_alpha = 0.2;
            config.model_kind = ModelKind::kLinearPerPixel;
            config.val_fraction = 0.25;
            config.seed = seed;

            const SplitDataset split =
                split_train_val(cubes, config.val_fraction, seed);
            const SearchResult result = bilevel_search(split, config);
            SelectionResult sel =
                select_bands(result.gates.priority(), result.correlation, m, 0.5);
            std::sort(sel.indices.begin(), sel.indices.end());

            const RecoveryModel model = linear_lsq_recovery(split.train, sel.indices);
            const double nbs_rmse =
                detail::linear_model_rmse(model, sel.indices, split.validation);
            const double best_rmse = exhaustive_search(split, m, 2).front().val_error;
            gaps.push_back(nbs_rmse / best_rmse - 1.0);
        }
        std::sort(gaps.begin(), gaps.end());
        const double median = gaps[2];
        check.expect(median <= 0.10, "M=" + std::to_string(m) + " median gap " +
                                         format_number(median * 100.0) + "%");
    }
    return check;
}

// ---------------------------------------------------------------------------
// A6: PSNR strictly increasing in M; full-input diagnostic dominates
// ---------------------------------------------------------------------------
Check criterion_a6() {
    Check check;
    SynthConfig synth;
    synth.bands = 10;
    synth.latents = 10;
    synth.height = 8;
    synth.width = 8;
    synth.noise_sigma = 0.0;
    synth.seed = 31;
    const auto cubes = synth_dataset(synth, 12);

    SearchConfig search_config;
    search_config.epochs = 120;
    search_config.lr_w = 0.05;
    search_config.lr_alpha = 0.2;
    search_config.model_kind = ModelKind::kLinearPerPixel;
    search_config.val_fraction = 0.25;
    search_config.seed = 31;

    const SplitDataset split = split_train_val(cubes, 0.25, 31);
    SearchResult result = bilevel_search(split, search_config);
    result.config.epochs = 400;
    result.config.lr_w = 0.2;

    const auto runs = ablation_m_beta(split, result, {2, 3, 4, 6, 8}, {0.5},
                                      ModelKind::kLinearPerPixel, 2);
    double previous = -kInf;
    std::string psnr_sequence;
    for (const auto& run : runs) {
        check.expect(run.report.psnr > previous,
                     "PSNR not strictly increasing at M=" +
                         std::to_string(run.selection.m()));
        previous = run.report.psnr;
        psnr_sequence += format_number(run.report.psnr) + " ";
    }

    const EvalRun full =
        train_and_evaluate(split, full_band_selection(result.wavelengths_nm),
                           ModelKind::kLinearPerPixel, result.config);
    check.expect(full.report.psnr >= previous,
                 "full-input diagnostic does not dominate (full " +
                     format_number(full.report.psnr) + " vs best " +
                     format_number(previous) + ")");
    if (!check.ok) check.detail += "; sequence: " + psnr_sequence;
    return check;
}

// ---------------------------------------------------------------------------
// A7: metric exactness on the hand-computed examples
// ---------------------------------------------------------------------------
Check criterion_a7() {
    Check check;
    SpectralCube gt(1, 1, {400.0, 700.0});
    gt.data = {1.0, 2.0};
    SpectralCube pred = gt;
    pred.data = {1.1, 1.8};
    check.expect(std::abs(mrae(gt, pred) - 0.1) <= 1e-9, "MRAE hand value");

    SpectralCube zeros(1, 1, {400.0, 700.0});
    SpectralCube half = zeros;
    half.data = {0.5, 0.5};
    check.expect(std::abs(mrae(zeros, half) - 500.0) <= 1e-9, "MRAE epsilon floor");

    SpectralCube rmse_gt(1, 1, {400.0, 700.0});
    SpectralCube rmse_pred = rmse_gt;
    rmse_pred.data = {0.3, 0.4};
    check.expect(std::abs(rmse(rmse_gt, rmse_pred) - 0.35355339059327373) <= 1e-9,
                 "RMSE hand value");

    Rng rng(7007);
    SpectralCube base(3, 3, wavelengths_of(4));
    for (double& v : base.data) v = rng.uniform(0.0, 0.9);
    SpectralCube shifted = base;
    for (double& v : shifted.data) v += 0.1;
    check.expect(std::abs(psnr(base, shifted) - 20.0) <= 1e-9, "PSNR at error 0.1");
    return check;
}

// ---------------------------------------------------------------------------
// A8: byte-identical pipeline outputs under a fixed seed
// ---------------------------------------------------------------------------
int run_cli_vec(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"nbs"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

Check criterion_a8() {
    Check check;
    const auto root = std::filesystem::temp_directory_path() /
                      ("nbs_acceptance_" + std::to_string(::getpid()));
    std::filesystem::remove_all(root);
    const auto data = root / "data";

    check.expect(run_cli_vec({"synth", "--bands", "6", "--height", "6", "--width",
                              "6", "--latents", "3", "--noise", "0.01", "--count",
                              "10", "--seed", "11", "--out", data.string()}) == 0,
                 "synth failed");

    for (const std::string run : {"r1", "r2"}) {
        const auto base = root / run;
        const auto manifest = (data / "manifest.json").string();
        const auto search_json = (base / "search" / "search.json").string();
        check.expect(run_cli_vec({"search", "--manifest", manifest, "--model",
                                  "linear", "--epochs", "40", "--lr-w", "0.1",
                                  "--lr-alpha", "0.2", "--seed", "11", "--out",
                                  (base / "search").string()}) == 0,
                     run + " search failed");
        check.expect(run_cli_vec({"select", "--search", search_json, "--m", "2,3,4",
                                  "--beta", "0.5", "--out",
                                  (base / "sel").string()}) == 0,
                     run + " select failed");
        check.expect(run_cli_vec({"eval", "--manifest", manifest, "--ablation",
                                  "--search", search_json, "--m", "2,3", "--beta",
                                  "0.5", "--epochs", "30", "--full-diagnostic",
                                  "--out", (base / "eval").string()}) == 0,
                     run + " eval failed");
        check.expect(run_cli_vec({"eval", "--manifest", manifest, "--compare",
                                  "nbs,manual", "--search", search_json, "--m", "2",
                                  "--targets", "450,650", "--model", "linear",
                                  "--epochs", "30", "--lr", "0.1", "--seed", "11",
                                  "--out", (base / "cmp").string()}) == 0,
                     run + " compare failed");
    }

    size_t files_compared = 0;
    for (const std::string dir : {"search", "sel", "eval", "cmp"}) {
        const auto left = root / "r1" / dir;
        const auto right = root / "r2" / dir;
        if (!std::filesystem::exists(left)) continue;
        for (const auto& entry : std::filesystem::directory_iterator(left)) {
            const auto name = entry.path().filename();
            check.expect(slurp(left / name) == slurp(right / name),
                         dir + "/" + name.string() + " differs between runs");
            ++files_compared;
        }
    }
    // search: search.json + correlation.csv; sel: 3 selections; eval and cmp:
    // one csv + summary.json each
    check.expect(files_compared >= 9, "too few pipeline outputs compared");
    std::filesystem::remove_all(root);
    return check;
}

}  // namespace

int main() {
    struct Criterion {
        const char* id;
        const char* description;
        double limit_seconds;
        std::function<Check()> run;
    };
    const std::vector<Criterion> criteria = {
        {"A1", "gradient correctness vs central finite differences", 10.0,
         criterion_a1},
        {"A2", "post-processing exactness vs literal execution", 1.0, criterion_a2},
        {"A3", "one-shot prefix consistency", 1.0, criterion_a3},
        {"A4", "duplicate suppression across 5 seeds", 120.0, criterion_a4},
        {"A5", "oracle proximity (median within 10%)", 300.0, criterion_a5},
        {"A6", "PSNR trend in M and full-input dominance", 600.0, criterion_a6},
        {"A7", "metric exactness on hand-computed examples", 1.0, criterion_a7},
        {"A8", "byte-identical pipeline outputs under a fixed seed", 300.0,
         criterion_a8},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Check check;
        try {
            check = criterion.run();
        } catch (const std::exception& e) {
            check.ok = false;
            check.detail = std::string("exception: ") + e.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count();
        if (elapsed > criterion.limit_seconds) {
            check.ok = false;
            check.detail += (check.detail.empty() ? "" : "; ") + std::string("over budget");
        }
        std::printf("[%s] %s %s (%.2fs, limit %.0fs)%s%s\n",
                    check.ok ? "PASS" : "FAIL", criterion.id, criterion.description,
                    elapsed, criterion.limit_seconds, check.detail.empty() ? "" : " -- ",
                    check.detail.c_str());
        if (!check.ok) ++failures;
    }
    return failures;
}
