#include <doctest.h>

#include "nbs/cube.hpp"
#include "test_support.hpp"

using namespace nbs;
using namespace nbs_test;

TEST_CASE("cube basic shape and accessors") {
    SpectralCube cube(2, 2, {400.0, 550.0, 700.0});
    CHECK(cube.bands == 3);
    CHECK(cube.size() == 12);
    cube.at(1, 0, 1) = 0.5;
    CHECK(cube.data[(1 * 2 + 0) * 2 + 1] == 0.5);
    CHECK_NOTHROW(cube.validate());
}

TEST_CASE("save/load round trip is lossless at payload precision") {
    TempDir tmp("cube_roundtrip");
    Rng rng(11);
    for (int trial = 0; trial < 8; ++trial) {
        const int h = 1 + static_cast<int>(rng.below(4));
        const int w = 1 + static_cast<int>(rng.below(4));
        const int n = 2 + static_cast<int>(rng.below(5));
        SpectralCube cube = random_cube(rng, h, w, n, 0.0, 1.0);
        // hold values at f32 precision so the round trip is exact
        for (double& v : cube.data) v = static_cast<double>(static_cast<float>(v));

        const auto stem = tmp.path() / ("c" + std::to_string(trial));
        save_cube(cube, stem);
        const SpectralCube back = load_cube(stem);
        CHECK(back.height == cube.height);
        CHECK(back.width == cube.width);
        CHECK(back.bands == cube.bands);
        CHECK(back.wavelengths_nm == cube.wavelengths_nm);
        CHECK(back.data == cube.data);
    }
}

TEST_CASE("save_cube writes exactly H*W*N*4 payload bytes; zeros stay zeros") {
    TempDir tmp("cube_payload");
    SpectralCube cube(3, 2, {400.0, 500.0, 600.0, 700.0});
    save_cube(cube, tmp.path() / "z");
    const auto payload = read_file(tmp.path() / "z.raw");
    CHECK(payload.size() == 3 * 2 * 4 * 4);
    for (char byte : payload) CHECK(byte == 0);
}

TEST_CASE("load_cube rejects short payloads and bad headers") {
    TempDir tmp("cube_errors");
    SpectralCube cube(2, 2, {400.0, 550.0, 700.0});
    for (size_t i = 0; i < cube.data.size(); ++i) cube.data[i] = 0.1 * (i + 1);
    save_cube(cube, tmp.path() / "c");

    SUBCASE("missing file") { CHECK_THROWS_AS(load_cube(tmp.path() / "nope"), Error); }
    SUBCASE("payload shorter than header promises") {
        std::filesystem::resize_file(tmp.path() / "c.raw", 11);
        CHECK_THROWS_WITH_AS(load_cube(tmp.path() / "c"),
                             doctest::Contains("size mismatch"), Error);
    }
    SUBCASE("non-increasing wavelengths") {
        std::ofstream hf(tmp.path() / "c.json", std::ios::binary);
        hf << R"({"height":2,"width":2,"bands":3,"wavelengths_nm":[400,400,700],)"
           << R"("dtype":"f32le","layout":"bsq"})";
        hf.close();
        CHECK_THROWS_WITH_AS(load_cube(tmp.path() / "c"),
                             doctest::Contains("strictly increasing"), Error);
    }
    SUBCASE("non-finite payload value") {
        std::ofstream pf(tmp.path() / "c.raw",
                         std::ios::binary | std::ios::in | std::ios::out);
        const float bad = std::numeric_limits<float>::infinity();
        pf.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
        pf.close();
        CHECK_THROWS_WITH_AS(load_cube(tmp.path() / "c"),
                             doctest::Contains("non-finite"), Error);
    }
}

TEST_CASE("normalize scales the peak to 1.0 and is idempotent") {
    SpectralCube cube(1, 2, {400.0, 700.0});
    cube.data = {0.5, 0.25, 2.0, 1.0};
    const SpectralCube scaled = normalize(cube);
    CHECK(scaled.data == std::vector<double>{0.25, 0.125, 1.0, 0.5});
    CHECK(normalize(scaled).data == scaled.data);

    SpectralCube pair(1, 1, {400.0, 700.0});
    pair.data = {0.5, 0.25};
    CHECK(normalize(pair).data == std::vector<double>{1.0, 0.5});

    SpectralCube zero(1, 1, {400.0, 700.0});
    CHECK_THROWS_WITH_AS(normalize(zero), doctest::Contains("all-zero"), Error);

    SpectralCube negative(1, 1, {400.0, 700.0});
    negative.data = {0.5, -0.1};
    CHECK_THROWS_AS(normalize(negative), Error);
}

TEST_CASE("pixel_spectrum extracts the length-N vector") {
    SpectralCube cube(2, 3, even_wavelengths(4));
    for (int b = 0; b < 4; ++b)
        for (int u = 0; u < 2; ++u)
            for (int v = 0; v < 3; ++v) cube.at(b, u, v) = 0.25 * (b + 1);
    const PixelSpectrum s = pixel_spectrum(cube, 1, 2);
    CHECK(s.values == std::vector<double>{0.25, 0.5, 0.75, 1.0});
    CHECK_THROWS_AS(pixel_spectrum(cube, 2, 0), Error);
    CHECK_THROWS_AS(pixel_spectrum(cube, 0, 3), Error);

    SpectralCube tiny(1, 1, even_wavelengths(5));
    for (int b = 0; b < 5; ++b) tiny.at(b, 0, 0) = b;
    CHECK(pixel_spectrum(tiny, 0, 0).values == tiny.data);
}

TEST_CASE("split_train_val partitions deterministically") {
    Rng rng(3);
    std::vector<SpectralCube> cubes;
    for (int i = 0; i < 10; ++i) cubes.push_back(random_cube(rng, 2, 2, 3));

    const SplitDataset split = split_train_val(cubes, 0.2, 42);
    CHECK(split.train.cubes.size() == 8);
    CHECK(split.validation.cubes.size() == 2);

    const SplitDataset again = split_train_val(cubes, 0.2, 42);
    for (size_t i = 0; i < split.train.cubes.size(); ++i)
        CHECK(split.train.cubes[i].data == again.train.cubes[i].data);

    // partition: every input cube appears in exactly one side
    std::vector<std::vector<double>> seen;
    for (const auto& c : split.train.cubes) seen.push_back(c.data);
    for (const auto& c : split.validation.cubes) seen.push_back(c.data);
    CHECK(seen.size() == cubes.size());
    for (const auto& c : cubes) {
        int hits = 0;
        for (const auto& s : seen)
            if (s == c.data) ++hits;
        CHECK(hits == 1);
    }

    const SplitDataset half = split_train_val({cubes[0], cubes[1]}, 0.5, 1);
    CHECK(half.train.cubes.size() == 1);
    CHECK(half.validation.cubes.size() == 1);

    CHECK_THROWS_AS(split_train_val({cubes[0]}, 0.5, 1), Error);
}

TEST_CASE("synth_dataset duplicates, determinism, identity mixing") {
    SynthConfig config;
    config.bands = 6;
    config.height = 5;
    config.width = 4;
    config.latents = 3;
    config.noise_sigma = 0.02;
    config.duplicate_pairs = {{0, 1}};
    config.seed = 9;

    const auto cubes = synth_dataset(config, 4);
    CHECK(cubes.size() == 4);
    for (const auto& cube : cubes) {
        CHECK_NOTHROW(cube.validate());
        for (size_t p = 0; p < cube.plane_size(); ++p)
            CHECK(cube.band_plane(1)[p] == cube.band_plane(0)[p]);
        for (double v : cube.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }

    const auto again = synth_dataset(config, 4);
    for (size_t i = 0; i < cubes.size(); ++i) CHECK(cubes[i].data == again[i].data);

    SUBCASE("identity mixing when K == N, noise-free: bands equal latents") {
        SynthConfig id_config;
        id_config.bands = 4;
        id_config.latents = 4;
        id_config.height = 4;
        id_config.width = 3;
        id_config.noise_sigma = 0.0;
        id_config.seed = 21;
        const auto id_cubes = synth_dataset(id_config, 2);
        for (int c = 0; c < 2; ++c) {
            Rng cube_rng =
                Rng(id_config.seed).derive(0x63756265ULL + static_cast<uint64_t>(c));
            std::vector<double> latent(12);
            for (int b = 0; b < 4; ++b) {
                detail::fill_latent_field(cube_rng, 4, 3, latent.data());
                for (size_t p = 0; p < 12; ++p)
                    CHECK(id_cubes[c].band_plane(b)[p] == latent[p]);
            }
        }
    }

    SUBCASE("noise-free rank is bounded by K") {
        SynthConfig lowrank;
        lowrank.bands = 7;
        lowrank.latents = 3;
        lowrank.height = 6;
        lowrank.width = 6;
        lowrank.noise_sigma = 0.0;
        lowrank.seed = 5;
        for (const auto& cube : synth_dataset(lowrank, 3))
            CHECK(band_matrix_rank(cube) <= 3);
    }

    SUBCASE("invalid configs rejected") {
        SynthConfig bad = config;
        bad.bands = 1;
        CHECK_THROWS_AS(synth_dataset(bad, 3), Error);
        bad = config;
        bad.latents = 0;
        CHECK_THROWS_AS(synth_dataset(bad, 3), Error);
        bad = config;
        bad.duplicate_pairs = {{0, 6}};
        CHECK_THROWS_AS(synth_dataset(bad, 3), Error);
        CHECK_THROWS_AS(synth_dataset(config, 1), Error);
    }
}
