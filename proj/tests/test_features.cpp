#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "polygraph/features.hpp"
#include "polygraph/rng.hpp"

using namespace polygraph;
namespace fs = std::filesystem;

namespace {

fs::path make_temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("polygraph_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// sample_visual_frames
// ---------------------------------------------------------------------------

TEST(SampleFrames, ThirtyFpsSelectsEverySixth) {
    EXPECT_EQ(sample_visual_frames(30, 30), (std::vector<int>{0, 6, 12, 18, 24}));
}

TEST(SampleFrames, TenFpsStrideTwo) {
    EXPECT_EQ(sample_visual_frames(10, 10), (std::vector<int>{0, 2, 4, 6, 8}));
}

TEST(SampleFrames, ShortClipSingleIndex) {
    EXPECT_EQ(sample_visual_frames(4, 30), (std::vector<int>{0}));
}

TEST(SampleFrames, NonDivisibleFpsWarnsAndRounds) {
    std::vector<std::string> warnings;
    auto idx = sample_visual_frames(24, 12, &warnings);
    EXPECT_EQ(idx, (std::vector<int>{0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22}));
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("12"), std::string::npos);
}

TEST(SampleFrames, CountIsCeilOfFramesOverStride) {
    SplitMix64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        int frames = 1 + static_cast<int>(rng.next_below(400));
        int fps = 5 * (1 + static_cast<int>(rng.next_below(12)));
        int k = fps / 5;
        auto idx = sample_visual_frames(frames, fps);
        EXPECT_EQ(static_cast<int>(idx.size()), (frames + k - 1) / k);
        for (size_t i = 1; i < idx.size(); ++i) EXPECT_LT(idx[i - 1], idx[i]);
        EXPECT_LT(idx.back(), frames);
    }
}

// ---------------------------------------------------------------------------
// carry_forward_fill
// ---------------------------------------------------------------------------

TEST(CarryForward, FillsGapsWithPreviousRow) {
    std::vector<std::optional<std::vector<double>>> rows = {
        std::vector<double>{1.0, 2.0}, std::nullopt, std::nullopt, std::vector<double>{3.0, 4.0}};
    Tensor out = carry_forward_fill(rows, 2);
    EXPECT_TRUE(out == Tensor::matrix(4, 2, {1, 2, 1, 2, 1, 2, 3, 4}));
}

TEST(CarryForward, LeadingGapIsZero) {
    std::vector<std::optional<std::vector<double>>> rows = {std::nullopt,
                                                            std::vector<double>{5.0}};
    Tensor out = carry_forward_fill(rows, 1);
    EXPECT_TRUE(out == Tensor::matrix(2, 1, {0.0, 5.0}));
}

TEST(CarryForward, SingleRowIdentity) {
    std::vector<std::optional<std::vector<double>>> rows = {std::vector<double>{7.0, 8.0}};
    Tensor out = carry_forward_fill(rows, 2);
    EXPECT_TRUE(out == Tensor::matrix(1, 2, {7.0, 8.0}));
}

TEST(CarryForward, AllMissingWarnsAllZero) {
    std::vector<std::optional<std::vector<double>>> rows = {std::nullopt, std::nullopt};
    std::vector<std::string> warnings;
    Tensor out = carry_forward_fill(rows, 3, &warnings);
    EXPECT_TRUE(out == Tensor({2, 3}));
    EXPECT_EQ(warnings.size(), 1u);
}

TEST(CarryForward, IdempotentOnFullyPresentInput) {
    SplitMix64 rng(17);
    std::vector<std::optional<std::vector<double>>> rows;
    for (int t = 0; t < 8; ++t) {
        std::vector<double> r(3);
        for (double& v : r) v = rng.next_gaussian();
        rows.emplace_back(r);
    }
    Tensor once = carry_forward_fill(rows, 3);
    std::vector<std::optional<std::vector<double>>> again;
    for (int t = 0; t < 8; ++t) {
        again.emplace_back(std::vector<double>(once.data() + t * 3, once.data() + t * 3 + 3));
    }
    EXPECT_TRUE(carry_forward_fill(again, 3) == once);
}

// ---------------------------------------------------------------------------
// mean_pool_audio
// ---------------------------------------------------------------------------

TEST(MeanPool, ConstantRowsPassThrough) {
    Tensor mfcc = Tensor::full({10, 3}, 2.5);
    FeatureSequence seq = mean_pool_audio(mfcc, 0.01, 0.05);
    EXPECT_EQ(seq.data.rows(), 2);
    for (std::int64_t i = 0; i < seq.data.size(); ++i) EXPECT_DOUBLE_EQ(seq.data[i], 2.5);
}

TEST(MeanPool, TwentyFramesPerPointTwoSecondWindow) {
    Tensor mfcc({20, 2});
    for (int r = 0; r < 20; ++r) {
        mfcc.at(r, 0) = r;
        mfcc.at(r, 1) = 2.0 * r;
    }
    FeatureSequence seq = mean_pool_audio(mfcc, 0.01, 0.2);
    ASSERT_EQ(seq.data.rows(), 1);
    EXPECT_DOUBLE_EQ(seq.data.at(0, 0), 9.5);
    EXPECT_DOUBLE_EQ(seq.data.at(0, 1), 19.0);
    EXPECT_DOUBLE_EQ(seq.step_seconds, 0.2);
}

TEST(MeanPool, PartialFinalWindow) {
    Tensor mfcc({25, 1});
    for (int r = 0; r < 25; ++r) mfcc.at(r, 0) = r;
    FeatureSequence seq = mean_pool_audio(mfcc, 0.01, 0.2);
    ASSERT_EQ(seq.data.rows(), 2);
    EXPECT_DOUBLE_EQ(seq.data.at(0, 0), 9.5);   // mean of 0..19
    EXPECT_DOUBLE_EQ(seq.data.at(1, 0), 22.0);  // mean of 20..24
}

TEST(MeanPool, PreservesColumnMeansOnExactMultiples) {
    SplitMix64 rng(23);
    Tensor mfcc({40, 4});
    for (std::int64_t i = 0; i < mfcc.size(); ++i) mfcc[i] = rng.next_gaussian();
    FeatureSequence seq = mean_pool_audio(mfcc, 0.01, 0.1);  // windows of 10
    ASSERT_EQ(seq.data.rows(), 4);
    for (int c = 0; c < 4; ++c) {
        double full = 0.0, pooled = 0.0;
        for (int r = 0; r < 40; ++r) full += mfcc.at(r, c);
        for (int r = 0; r < 4; ++r) pooled += seq.data.at(r, c);
        EXPECT_NEAR(full / 40.0, pooled / 4.0, 1e-12);
    }
}

TEST(MeanPool, EmptyInputThrows) {
    EXPECT_THROW(mean_pool_audio(Tensor(), 0.01, 0.2), DataError);
}

// ---------------------------------------------------------------------------
// pad_and_mask
// ---------------------------------------------------------------------------

namespace {
FeatureSequence make_seq(int t, int d, double fill, Modality m = Modality::visual) {
    FeatureSequence s;
    s.modality = m;
    s.data = Tensor::full({t, d}, fill);
    s.valid_length = t;
    return s;
}
}  // namespace

TEST(PadAndMask, PadsToLongest) {
    PaddedBatch b = pad_and_mask({make_seq(3, 2, 1.0), make_seq(5, 2, 2.0)});
    EXPECT_EQ(b.max_len(), 5);
    EXPECT_EQ(b.mask[0], (std::vector<std::uint8_t>{1, 1, 1, 0, 0}));
    EXPECT_EQ(b.mask[1], (std::vector<std::uint8_t>{1, 1, 1, 1, 1}));
}

TEST(PadAndMask, SingleClipAllTrueMask) {
    PaddedBatch b = pad_and_mask({make_seq(4, 3, 1.5)});
    EXPECT_EQ(b.max_len(), 4);
    EXPECT_EQ(b.mask[0], (std::vector<std::uint8_t>{1, 1, 1, 1}));
    EXPECT_TRUE(b.clip_matrix(0) == Tensor::full({4, 3}, 1.5));
}

TEST(PadAndMask, PaddedCellsExactlyZero) {
    PaddedBatch b = pad_and_mask({make_seq(2, 2, 3.0), make_seq(4, 2, 4.0)});
    Tensor first = b.clip_matrix(0);
    for (int t = 2; t < 4; ++t)
        for (int c = 0; c < 2; ++c) EXPECT_EQ(first.at(t, c), 0.0);
}

TEST(PadAndMask, NeverAltersValidRows) {
    SplitMix64 rng(31);
    std::vector<FeatureSequence> seqs;
    for (int i = 0; i < 5; ++i) {
        int t = 2 + static_cast<int>(rng.next_below(9));
        FeatureSequence s;
        s.data = Tensor({t, 3});
        for (std::int64_t j = 0; j < s.data.size(); ++j) s.data[j] = rng.next_gaussian();
        s.valid_length = t;
        seqs.push_back(s);
    }
    PaddedBatch b = pad_and_mask(seqs);
    for (int i = 0; i < 5; ++i) {
        Tensor m = b.clip_matrix(i);
        for (int t = 0; t < seqs[i].data.rows(); ++t)
            for (int c = 0; c < 3; ++c) EXPECT_EQ(m.at(t, c), seqs[i].data.at(t, c));
    }
}

TEST(PadAndMask, MixedWidthThrows) {
    EXPECT_THROW(pad_and_mask({make_seq(3, 2, 1.0), make_seq(3, 4, 1.0)}), ShapeError);
}

// ---------------------------------------------------------------------------
// manifest + feature files
// ---------------------------------------------------------------------------

TEST(Manifest, TwoClipRoundTrip) {
    fs::path dir = make_temp_dir("manifest_two");
    write_feature_csv((dir / "a_visual.csv").string(), Tensor::full({3, 4}, 1.0));
    write_feature_csv((dir / "b_visual.csv").string(), Tensor::full({5, 4}, 2.0));
    std::ofstream mf(dir / "manifest.jsonl");
    mf << R"({"clip_id":"a","speaker_id":"s1","label":"deceptive","features":{"visual":"a_visual.csv"}})"
       << "\n"
       << R"({"clip_id":"b","speaker_id":"s2","label":"truthful","features":{"visual":"b_visual.csv"}})"
       << "\n";
    mf.close();
    auto clips = load_manifest((dir / "manifest.jsonl").string());
    ASSERT_EQ(clips.size(), 2u);
    EXPECT_EQ(clips[0].clip_id, "a");
    EXPECT_EQ(clips[0].label, kDeceptive);
    EXPECT_EQ(clips[1].label, kTruthful);
    EXPECT_EQ(clips[1].features.at(Modality::visual).data.rows(), 5);
}

TEST(Manifest, DimensionMismatchNamesClip) {
    fs::path dir = make_temp_dir("manifest_dim");
    write_feature_csv((dir / "a.csv").string(), Tensor::full({2, 128}, 0.5));
    write_feature_csv((dir / "b.csv").string(), Tensor::full({2, 127}, 0.5));
    std::ofstream mf(dir / "m.jsonl");
    mf << R"({"type":"header","dims":{"visual":128}})" << "\n"
       << R"({"clip_id":"a","speaker_id":"s","label":"deceptive","features":{"visual":"a.csv"}})"
       << "\n"
       << R"({"clip_id":"bad","speaker_id":"s","label":"truthful","features":{"visual":"b.csv"}})"
       << "\n";
    mf.close();
    try {
        load_manifest((dir / "m.jsonl").string());
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("127"), std::string::npos);
    }
}

TEST(Manifest, MissingFileNamesClip) {
    fs::path dir = make_temp_dir("manifest_missing");
    std::ofstream mf(dir / "m.jsonl");
    mf << R"({"clip_id":"ghost","speaker_id":"s","label":"deceptive","features":{"visual":"nope.csv"}})"
       << "\n";
    mf.close();
    try {
        load_manifest((dir / "m.jsonl").string());
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
    }
}

TEST(Manifest, DuplicateClipIdThrows) {
    fs::path dir = make_temp_dir("manifest_dup");
    write_feature_csv((dir / "a.csv").string(), Tensor::full({2, 2}, 0.5));
    std::ofstream mf(dir / "m.jsonl");
    mf << R"({"clip_id":"a","speaker_id":"s","label":"deceptive","features":{"visual":"a.csv"}})"
       << "\n"
       << R"({"clip_id":"a","speaker_id":"s","label":"truthful","features":{"visual":"a.csv"}})"
       << "\n";
    mf.close();
    EXPECT_THROW(load_manifest((dir / "m.jsonl").string()), DataError);
}

TEST(FeatureCsv, ValuesRoundTripExactly) {
    fs::path dir = make_temp_dir("csv_roundtrip");
    SplitMix64 rng(41);
    Tensor m({7, 5});
    for (std::int64_t i = 0; i < m.size(); ++i) m[i] = rng.next_gaussian() * 1e3;
    std::string path = (dir / "x.csv").string();
    write_feature_csv(path, m);
    EXPECT_TRUE(read_feature_csv(path) == m);
}
