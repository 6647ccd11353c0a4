#include <gtest/gtest.h>

#include <set>

#include "mti/dataset.hpp"
#include "mti/metrics.hpp"
#include "mti/scenarios.hpp"
#include "test_util.hpp"

using namespace mti;

namespace {

data::MultimodalVolume tiny_volume(const std::vector<float>& flair) {
    data::MultimodalVolume v;
    v.subject_id = "s";
    for (auto m : kAllModalities) {
        Stack<float> s(1, 1, static_cast<int>(flair.size()));
        s.storage() = flair;
        v.modalities.emplace(m, s);
    }
    v.labels = Stack<int>(1, 1, static_cast<int>(flair.size()));
    return v;
}

}  // namespace

TEST(Raster, RoundTripPreservesValuesAndShape) {
    TempDir dir;
    Stack<float> s(3, 4, 5);
    for (std::size_t i = 0; i < s.storage().size(); ++i) s.storage()[i] = static_cast<float>(i) * 0.25f - 3.0f;
    write_raster(dir / "a.mrs", s);
    EXPECT_EQ(read_stack<float>(dir / "a.mrs"), s);

    Stack<int> labels(2, 3, 3, 2);
    labels(1, 2, 2) = 3;
    write_raster(dir / "l.mrs", labels);
    EXPECT_EQ(read_stack<int>(dir / "l.mrs"), labels);
}

TEST(Raster, RejectsTruncatedFile) {
    TempDir dir;
    write_raster(dir / "a.mrs", Stack<float>(2, 2, 2, 1.0f));
    std::filesystem::resize_file(dir / "a.mrs", 20);
    EXPECT_THROW(read_stack<float>(dir / "a.mrs"), Error);
}

TEST(LoadVolume, RoundTripThroughSubjectDirectory) {
    TempDir dir;
    const auto v = data::make_phantom("subj", 3, 24, 5);
    data::save_volume(dir.path(), v);
    data::LoadOptions o;
    o.expected_dims = {3, 24, 24};
    const auto back = data::load_volume(dir.path(), "subj", o);
    EXPECT_EQ(back.dims(), (std::array<int, 3>{3, 24, 24}));
    EXPECT_EQ(back.labels, v.labels);
    for (auto m : kAllModalities) EXPECT_EQ(back.modality(m), v.modality(m));
}

TEST(LoadVolume, StrictModeRejectsUnexpectedDimensions) {
    TempDir dir;
    data::save_volume(dir.path(), data::make_phantom("subj", 2, 16, 1));
    try {
        data::load_volume(dir.path(), "subj");
        FAIL() << "expected a dimension error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("40x240x240"), std::string::npos);
    }
    data::LoadOptions lenient;
    lenient.strict = false;
    EXPECT_EQ(data::load_volume(dir.path(), "subj", lenient).depth(), 2);
}

TEST(LoadVolume, ModalityMismatchNamesSubject) {
    TempDir dir;
    auto v = data::make_phantom("subj", 2, 16, 1);
    v.modalities[Modality::ir] = Stack<float>(2, 8, 8, 1.0f);
    data::save_volume(dir.path(), v);
    data::LoadOptions lenient;
    lenient.strict = false;
    try {
        data::load_volume(dir.path(), "subj", lenient);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("subj"), std::string::npos);
    }
}

TEST(LoadVolume, MissingModalityIsReported) {
    TempDir dir;
    data::save_volume(dir.path(), data::make_phantom("subj", 2, 8, 1));
    std::filesystem::remove(dir / "subj" / (std::string(modality_stem(Modality::ir)) + ".mrs"));
    EXPECT_THROW(data::load_volume(dir.path(), "subj"), Error);
}

TEST(LabelRemap, ChallengeIdsCollapseToFourClasses) {
    using data::LabelScheme;
    const int expected[11] = {0, 1, 1, 2, 2, 3, 3, 0, 0, 0, 0};
    for (int raw = 0; raw <= 10; ++raw) EXPECT_EQ(data::remap_label(raw, LabelScheme::mrbrains18), expected[raw]);
    EXPECT_EQ(data::remap_label(2, LabelScheme::canonical), 2);
    EXPECT_THROW(data::remap_label(7, LabelScheme::canonical), Error);
}

TEST(Stretch, MapsMinAndMaxOntoFullRange) {
    const auto s = data::stretch_intensity(tiny_volume({10, 20, 30}));
    const auto& f = s.modality(Modality::flair).storage();
    EXPECT_FLOAT_EQ(f[0], 0.0f);
    EXPECT_FLOAT_EQ(f[1], 127.5f);
    EXPECT_FLOAT_EQ(f[2], 255.0f);
}

TEST(Stretch, ConstantModalityIsAnError) { EXPECT_THROW(data::stretch_intensity(tiny_volume({4, 4, 4})), Error); }

TEST(Resize, LabelsUseNearestNeighbour) {
    const LabelSlice in(2, 2, std::vector<int>{0, 1, 2, 3});
    const auto out = data::resize_labels(in, 4, 4);
    const std::vector<int> expected{0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3};
    EXPECT_EQ(std::vector<int>(out.values().begin(), out.values().end()), expected);
}

TEST(Resize, ImageOfConstantStaysConstant) {
    const auto out = data::resize_image(Slice(5, 7, 42.0f), 9, 3);
    for (float v : out.values()) EXPECT_FLOAT_EQ(v, 42.0f);
}

TEST(Augment, QuarterTurnIsCounterClockwiseOnScreen) {
    // a b c      c f i
    // d e f  ->  b e h
    // g h i      a d g
    const std::vector<int> src{1, 2, 3, 4, 5, 6, 7, 8, 9};
    const std::vector<int> rotated{3, 6, 9, 2, 5, 8, 1, 4, 7};
    data::AugmentationParams p;
    p.rotation_deg = 90;
    data::AugmentationBounds wide;
    wide.max_rotation_deg = 90;

    const auto labels = data::augment_labels(LabelSlice(3, 3, src), p, wide);
    EXPECT_EQ(std::vector<int>(labels.values().begin(), labels.values().end()), rotated);

    Slice img(3, 3);
    for (int i = 0; i < 9; ++i) img.values()[i] = static_cast<float>(src[i]);
    const auto out = data::augment_image(img, p, wide);
    for (int i = 0; i < 9; ++i) EXPECT_NEAR(out.values()[i], rotated[i], 1e-5);
}

TEST(Augment, IdentityReturnsInput) {
    const auto v = data::stretch_intensity(data::make_phantom("p", 1, 32, 3));
    const auto s = v.modality(Modality::t1).slice(0);
    EXPECT_EQ(data::augment_image(s, {}), s);
}

TEST(Augment, OutOfBoundsParametersAreRejected) {
    data::AugmentationParams p;
    p.rotation_deg = 60;
    EXPECT_THROW(data::augment_image(Slice(4, 4), p), Error);
    p = {};
    p.zoom_factor = 3;
    EXPECT_THROW(data::augment_image(Slice(4, 4), p), Error);
    p = {};
    p.translate_xy = {0.5, 0};
    EXPECT_THROW(data::augment_labels(LabelSlice(4, 4), p), Error);
}

TEST(Augment, DefaultSetHasFourVariantsStartingWithIdentity) {
    const auto a = data::default_augmentations();
    ASSERT_EQ(a.size(), 4u);
    EXPECT_TRUE(a[0].is_identity());
    for (std::size_t i = 1; i < a.size(); ++i) EXPECT_FALSE(a[i].is_identity());
    EXPECT_EQ(data::jitter_augmentations(a, 2.0), data::jitter_augmentations(a, 2.0));
    EXPECT_TRUE(data::jitter_augmentations(a, 2.0)[0].is_identity());
}

TEST(Segmentation, EncodeThenDecodeIsLossless) {
    LabelSlice labels(4, 4);
    for (int i = 0; i < 16; ++i) labels.values()[i] = i % 4;
    const auto rgb = data::encode_segmentation(labels);
    EXPECT_FLOAT_EQ(rgb(0, 1, 0), 255.0f);  // gray matter is red
    EXPECT_FLOAT_EQ(rgb(0, 2, 2), 255.0f);  // white matter is blue
    EXPECT_FLOAT_EQ(rgb(0, 3, 1), 255.0f);  // CSF is green
    EXPECT_EQ(metrics::decode_mask(rgb), labels);
}

TEST(BuildSamples, CountIsSubjectsTimesSlicesTimesAugmentations) {
    std::vector<data::MultimodalVolume> vols;
    for (int i = 0; i < 7; ++i)
        vols.push_back(data::stretch_intensity(data::make_phantom("s" + std::to_string(i), 40, 8, i)));
    data::BuildOptions o;
    o.slice_size = 8;
    const auto spec = scenarios::find_scenario(scenarios::builtin_scenarios(), 1, 'A');
    const auto samples = data::build_samples(vols, spec, {}, o);
    EXPECT_EQ(samples.size(), 1120u);
    for (const auto& s : samples) {
        EXPECT_EQ(s.input.channels(), 3);
        EXPECT_EQ(s.input.height(), 8);
        EXPECT_EQ(s.targets.size(), 2u);
        EXPECT_EQ(s.meta.bias_field_id, 0);
    }
}

TEST(BuildSamples, ContaminatedScenarioCarriesEveryFieldId) {
    const auto vol = data::stretch_intensity(data::make_phantom("s", 2, 16, 4));
    data::BuildOptions o;
    o.slice_size = 16;
    const auto spec = scenarios::find_scenario(scenarios::builtin_scenarios(), 4, 'A');
    const auto samples = data::build_samples({vol}, spec, data::make_bias_fields(16), o);
    EXPECT_EQ(samples.size(), 2u * 4u * 8u);
    std::set<int> ids;
    for (const auto& s : samples) ids.insert(s.meta.bias_field_id);
    EXPECT_EQ(ids, (std::set<int>{1, 2, 3, 4, 5, 6, 7, 8}));
    // the bias-correction target is the clean input, independent of the field
    EXPECT_EQ(samples[0].targets[1], samples[7].targets[1]);
    EXPECT_NE(samples[0].input, samples[7].input);
}

TEST(BuildSamples, ContaminatedScenarioWithoutFieldsIsAnError) {
    const auto vol = data::stretch_intensity(data::make_phantom("s", 1, 16, 4));
    data::BuildOptions o;
    o.slice_size = 16;
    const auto spec = scenarios::find_scenario(scenarios::builtin_scenarios(), 2, 'A');
    EXPECT_THROW(data::build_samples({vol}, spec, {}, o), Error);
}

TEST(Phantom, DeterministicInSeed) {
    EXPECT_EQ(data::make_phantom("a", 2, 16, 9).labels, data::make_phantom("a", 2, 16, 9).labels);
    EXPECT_NE(data::make_phantom("a", 2, 16, 9).modality(Modality::t1), data::make_phantom("a", 2, 16, 10).modality(Modality::t1));
}
