#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "minidetr/data.hpp"
#include "minidetr/errors.hpp"
#include "minidetr/perturb.hpp"
#include "minidetr/rng.hpp"

using namespace minidetr;

namespace {

Image textured_image(int h, int w, unsigned long long seed) {
    Rng rng(seed);
    Image img(h, w);
    for (double& v : img.pixels) v = rng.uniform();
    return img;
}

// the fixed reference image for corruption monotonicity: a synthetic sample
// with noisy background and crisp shape edges
Image reference_image() {
    Dataset ds = generate_synthetic_shapes(1, 3, 128, 424242);
    return ds.samples[0].image;
}

int count_zero_patches(const Image& img) {
    int zeroed = 0;
    for (int i = 0; i < kOcclusionPatches; ++i) {
        PatchRect r = patch_rect(i, img.height, img.width);
        bool all_zero = true;
        for (int y = r.y0; y < r.y1 && all_zero; ++y)
            for (int x = r.x0; x < r.x1 && all_zero; ++x)
                for (int c = 0; c < 3; ++c)
                    if (img.at(y, x, c) != 0.0) {
                        all_zero = false;
                        break;
                    }
        zeroed += all_zero ? 1 : 0;
    }
    return zeroed;
}

}  // namespace

TEST_CASE("patch grid covers the image exactly once") {
    for (auto [h, w] : {std::pair{128, 128}, std::pair{100, 100}, std::pair{37, 53}, std::pair{10, 10}}) {
        std::vector<int> hits(static_cast<size_t>(h) * w, 0);
        for (int i = 0; i < kOcclusionPatches; ++i) {
            PatchRect r = patch_rect(i, h, w);
            CHECK(r.y1 > r.y0);
            CHECK(r.x1 > r.x0);
            for (int y = r.y0; y < r.y1; ++y)
                for (int x = r.x0; x < r.x1; ++x) ++hits[static_cast<size_t>(y) * w + x];
        }
        CHECK(std::all_of(hits.begin(), hits.end(), [](int v) { return v == 1; }));
    }
    CHECK_THROWS_AS(patch_rect(100, 64, 64), ValidationError);
}

TEST_CASE("random occlusion zeroes exactly round(ratio*100) patches") {
    Image img = textured_image(123, 77, 5);  // no exactly-zero pixels
    for (double ratio : {0.0, 0.07, 0.2, 0.25, 0.4, 0.6, 0.8, 1.0}) {
        OcclusionSpec spec;
        spec.ratio = ratio;
        spec.seed = 11;
        Image out = random_occlude(img, spec);
        int expect = static_cast<int>(std::llround(ratio * 100));
        CHECK(count_zero_patches(out) == expect);
        // untouched pixels are bitwise identical
        int changed_outside = 0;
        std::set<int> zeroed;
        for (int i = 0; i < kOcclusionPatches; ++i) {
            PatchRect r = patch_rect(i, img.height, img.width);
            bool zero = out.at(r.y0, r.x0, 0) == 0.0;
            if (zero) zeroed.insert(i);
        }
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                int py = std::min(kOcclusionGrid - 1, y / (img.height / kOcclusionGrid));
                int px = std::min(kOcclusionGrid - 1, x / (img.width / kOcclusionGrid));
                bool in_zeroed = zeroed.count(py * kOcclusionGrid + px) > 0;
                for (int c = 0; c < 3; ++c) {
                    double v = out.at(y, x, c);
                    if (in_zeroed) {
                        if (v != 0.0) ++changed_outside;
                    } else if (v != img.at(y, x, c)) {
                        ++changed_outside;
                    }
                }
            }
        CHECK(changed_outside == 0);
    }
    OcclusionSpec ident;
    ident.ratio = 0.0;
    CHECK(random_occlude(img, ident).pixels == img.pixels);
    OcclusionSpec full;
    full.ratio = 1.0;
    Image all_zero = random_occlude(img, full);
    CHECK(std::all_of(all_zero.pixels.begin(), all_zero.pixels.end(), [](double v) { return v == 0.0; }));

    // seeded reproducibility and seed sensitivity
    OcclusionSpec s1{OcclusionMode::Random, 0.3, 77, std::nullopt};
    CHECK(random_occlude(img, s1).pixels == random_occlude(img, s1).pixels);
    OcclusionSpec s2 = s1;
    s2.seed = 78;
    CHECK(random_occlude(img, s1).pixels != random_occlude(img, s2).pixels);

    OcclusionSpec bad = s1;
    bad.ratio = 1.5;
    CHECK_THROWS_AS(random_occlude(img, bad), ValidationError);
}

TEST_CASE("edge-energy saliency") {
    // constant image -> all scores zero
    Image flat(64, 64, 0.25);
    SaliencyMap smap = saliency_map(flat, nullptr, std::nullopt, SaliencyMethod::EdgeEnergy);
    for (double s : smap.scores) CHECK(s == 0.0);

    // vertical step edge at x = 32: max scores in the patch column holding it
    Image step(64, 64, 0.0);
    for (int y = 0; y < 64; ++y)
        for (int x = 32; x < 64; ++x)
            for (int c = 0; c < 3; ++c) step.at(y, x, c) = 1.0;
    SaliencyMap es = saliency_map(step, nullptr, std::nullopt, SaliencyMethod::EdgeEnergy);
    int edge_patch_col = 32 / (64 / kOcclusionGrid);  // patch column containing x=32
    for (int i = 0; i < kOcclusionPatches; ++i) {
        if (i % kOcclusionGrid == edge_patch_col) {
            CHECK(es.scores[i] > 0.0);  // every patch on the edge column sees the edge
        } else {
            CHECK(es.scores[i] == 0.0);  // flat regions carry no gradient energy
        }
    }
    // region restriction zeroes outside scores
    Box region{0.25, 0.5, 0.3, 0.5};
    SaliencyMap rs = saliency_map(step, nullptr, region, SaliencyMethod::EdgeEnergy);
    for (int i = 0; i < kOcclusionPatches; ++i)
        if (!rs.in_region[i]) CHECK(rs.scores[i] == 0.0);

    CHECK_THROWS_AS(saliency_map(step, nullptr, std::nullopt, SaliencyMethod::Attention), ValidationError);
}

TEST_CASE("attention saliency sums to at most one") {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.num_queries = 4;
    cfg.num_classes = 2;
    cfg.backbone_channels = {4, 8};
    Detector model(cfg);
    Image img = textured_image(32, 32, 3);
    SaliencyMap smap = saliency_map(img, &model, std::nullopt, SaliencyMethod::Attention);
    double total = 0.0;
    for (double s : smap.scores) {
        CHECK(s >= 0.0);
        total += s;
    }
    CHECK(total <= 1.0 + 1e-9);
    CHECK(total > 0.9);  // nothing clipped away without a region
    // restricted to a region the total can only shrink
    SaliencyMap rs = saliency_map(img, &model, Box{0.5, 0.5, 0.4, 0.4}, SaliencyMethod::Attention);
    double rtotal = 0.0;
    for (double s : rs.scores) rtotal += s;
    CHECK(rtotal <= total + 1e-12);
}

TEST_CASE("salient occlusion zeroes the top-scoring patches") {
    Image img = textured_image(100, 100, 9);

    // hand-built saliency: patch i scored 100-i inside a 25-patch region
    SaliencyMap smap;
    smap.in_region.fill(0);
    for (int py = 0; py < 5; ++py)
        for (int px = 0; px < 5; ++px) {
            int i = py * kOcclusionGrid + px;
            smap.in_region[i] = 1;
            smap.scores[i] = 100.0 - i;
        }
    OcclusionSpec spec;
    spec.mode = OcclusionMode::Salient;
    spec.ratio = 0.2;  // round(0.2*25) = 5 patches
    Image out = salient_occlude(img, spec, smap);
    CHECK(count_zero_patches(out) == 5);
    // the five highest scores are patches 0..4 (row 0)
    for (int i = 0; i < 5; ++i) {
        PatchRect r = patch_rect(i, 100, 100);
        CHECK(out.at(r.y0, r.x0, 0) == 0.0);
    }
    PatchRect r5 = patch_rect(kOcclusionGrid, 100, 100);  // patch (1,0) has lower score
    CHECK(out.at(r5.y0, r5.x0, 0) != 0.0);

    // all-tie saliency over the full grid: first round(ratio*100) indices win
    SaliencyMap ties;
    ties.in_region.fill(1);
    ties.scores.fill(3.5);
    OcclusionSpec tied;
    tied.mode = OcclusionMode::Salient;
    tied.ratio = 0.2;
    Image tout = salient_occlude(img, tied, ties);
    for (int i = 0; i < 20; ++i) {
        PatchRect r = patch_rect(i, 100, 100);
        CHECK(tout.at(r.y0, r.x0, 0) == 0.0);
    }
    CHECK(count_zero_patches(tout) == 20);

    // ratio 1 over region -> entire region zeroed
    OcclusionSpec all;
    all.mode = OcclusionMode::Salient;
    all.ratio = 1.0;
    Image aout = salient_occlude(img, all, smap);
    CHECK(count_zero_patches(aout) == 25);

    SaliencyMap empty;
    empty.in_region.fill(0);
    CHECK_THROWS_AS(salient_occlude(img, spec, empty), ValidationError);
}

TEST_CASE("sticker placement replaces exactly the declared rectangle") {
    Image img = textured_image(60, 80, 1);
    Image patch = make_default_sticker(10, 2);

    // explicit l=(0,0), scale=1: top-left block equals the patch exactly
    StickerSpec spec;
    spec.patch = patch;
    spec.location = {0, 0};
    spec.scale = 1.0;
    Image out = apply_sticker(img, spec);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x)
            for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == patch.at(y, x, c));
    int changed = 0;
    for (int y = 0; y < 60; ++y)
        for (int x = 0; x < 80; ++x)
            for (int c = 0; c < 3; ++c)
                if (out.at(y, x, c) != img.at(y, x, c) && (y >= 10 || x >= 10)) ++changed;
    CHECK(changed == 0);

    // scale=2 covers 4x the patch area
    StickerSpec scaled = spec;
    scaled.scale = 2.0;
    scaled.location = {5, 7};
    Image sout = apply_sticker(img, scaled);
    int replaced = 0;
    for (int y = 0; y < 60; ++y)
        for (int x = 0; x < 80; ++x)
            if (sout.at(y, x, 0) != img.at(y, x, 0)) ++replaced;
    CHECK(replaced <= 20 * 20);
    for (int y = 7; y < 27; ++y)
        for (int x = 5; x < 25; ++x) {
            int sy = std::min(9, static_cast<int>((y - 7 + 0.5) * 10 / 20));
            int sx = std::min(9, static_cast<int>((x - 5 + 0.5) * 10 / 20));
            CHECK(sout.at(y, x, 0) == patch.at(sy, sx, 0));
        }

    // random placement: bitwise reproducible per seed, fits inside bounds
    StickerSpec rnd;
    rnd.patch = patch;
    rnd.seed = 31;
    Image r1 = apply_sticker(img, rnd);
    Image r2 = apply_sticker(img, rnd);
    CHECK(r1.pixels == r2.pixels);
    rnd.seed = 32;
    CHECK(apply_sticker(img, rnd).pixels != r1.pixels);

    // misfit placements rejected
    StickerSpec bad = spec;
    bad.location = {75, 0};
    CHECK_THROWS_AS(apply_sticker(img, bad), ValidationError);
    StickerSpec huge = spec;
    huge.scale = 30.0;
    huge.location.reset();
    CHECK_THROWS_AS(apply_sticker(img, huge), ValidationError);
}

TEST_CASE("corruption families: determinism, identity knob, names") {
    Image img = reference_image();
    for (int f = 0; f < kCorruptionFamilies; ++f) {
        CorruptionSpec spec;
        spec.family = static_cast<CorruptionFamily>(f);
        spec.severity = 3;
        spec.seed = 17;
        Image a = corrupt(img, spec);
        Image b = corrupt(img, spec);
        CHECK(a.pixels == b.pixels);
        for (double v : a.pixels) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        // name round trip
        auto fam = static_cast<CorruptionFamily>(f);
        CHECK(corruption_family_from_name(corruption_family_name(fam)) == fam);
    }
    CHECK_THROWS_AS(corruption_family_from_name("static"), ValidationError);
    CorruptionSpec bad;
    bad.severity = 6;
    CHECK_THROWS_AS(corrupt(img, bad), ValidationError);
    bad.severity = 0;
    CHECK_THROWS_AS(corrupt(img, bad), ValidationError);

    // degenerate table entry: gaussian sigma 0 is the identity
    CorruptionTable table = CorruptionTable::defaults();
    table.level[static_cast<int>(CorruptionFamily::GaussianNoise)] = {0, 0, 0, 0, 0};
    CorruptionSpec ident;
    ident.family = CorruptionFamily::GaussianNoise;
    ident.severity = 2;
    CHECK(corrupt(img, ident, table).pixels == img.pixels);

    // brightness on constant mid-gray: uniform shift by the table constant
    Image gray(40, 40, 0.5);
    CorruptionSpec bright;
    bright.family = CorruptionFamily::Brightness;
    bright.severity = 2;
    double shift = CorruptionTable::defaults().at(CorruptionFamily::Brightness, 2);
    Image shifted = corrupt(gray, bright);
    for (double v : shifted.pixels) CHECK(v == 0.5 + shift);
}

TEST_CASE("corruption MSE strictly grows with severity for every family") {
    Image img = reference_image();
    for (int f = 0; f < kCorruptionFamilies; ++f) {
        CorruptionSpec spec;
        spec.family = static_cast<CorruptionFamily>(f);
        spec.seed = 7;
        double prev = 0.0;  // severity 0 = clean, MSE 0
        for (int sev = 1; sev <= kCorruptionSeverities; ++sev) {
            spec.severity = sev;
            double mse = image_mse(img, corrupt(img, spec));
            INFO("family ", corruption_family_name(spec.family), " severity ", sev, " mse ", mse);
            CHECK(mse > prev);
            prev = mse;
        }
    }
}
