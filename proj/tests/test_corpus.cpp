#include <gtest/gtest.h>

#include <set>

#include "unicb/corpus.hpp"

using namespace unicb;

TEST(Shapes, RandomShapesAreValid) {
    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
        auto s = random_shape(rng);
        EXPECT_TRUE(s.valid()) << caption_of(s);
    }
}

TEST(Shapes, EveryKindAndColourAppears) {
    Rng rng(2);
    std::set<int> kinds, colors, backgrounds;
    for (int i = 0; i < 500; ++i) {
        auto s = random_shape(rng);
        kinds.insert(static_cast<int>(s.kind));
        colors.insert(s.color);
        backgrounds.insert(s.background);
    }
    EXPECT_EQ(kinds.size(), 3u);
    EXPECT_EQ(colors.size(), 8u);
    EXPECT_EQ(backgrounds.size(), 8u);
}

TEST(Shapes, CaptionGrammar) {
    ShapeSpec s;
    s.kind = ShapeKind::disk;
    s.color = 2;
    s.background = 0;
    EXPECT_EQ(caption_of(s), "red disk on black");
    auto all = all_captions();
    EXPECT_EQ(all.size(), 3u * 8u * 7u);
    EXPECT_EQ(std::set<std::string>(all.begin(), all.end()).size(), all.size());
}

TEST(Render, PixelsInRangeAndBothColoursPresent) {
    for (const auto& item : gen_images(3, 20, 16)) {
        ASSERT_EQ(item.image.h, 16u);
        double lo = 1.0, hi = 0.0;
        for (double v : item.image.rgb) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        EXPECT_GT(hi - lo, 0.1) << item.caption;
    }
}

TEST(Render, ShapeCentreHasShapeColour) {
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        auto s = random_shape(rng);
        if (s.kind == ShapeKind::stripes) continue;
        auto img = render(s, 64);
        const auto y = static_cast<std::size_t>(s.cy * 64), x = static_cast<std::size_t>(s.cx * 64);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(img.at(y, x, c), s.rgb[c], 1e-12);
        for (std::size_t c = 0; c < 3; ++c) {
            if (s.cx - s.sx / 2 > 0.05 && s.cy - s.sy / 2 > 0.05) EXPECT_NEAR(img.at(0, 0, c), s.bg_rgb[c], 1e-12);
        }
    }
}

TEST(Render, SameSceneAtEveryResolution) {
    Rng rng(5);
    auto s = random_shape(rng);
    // Mean colour is the coverage-weighted mix, which barely depends on resolution.
    auto mean = [](const Image& img) {
        double t = 0.0;
        for (double v : img.rgb) t += v;
        return t / static_cast<double>(img.rgb.size());
    };
    const double m16 = mean(render(s, 16));
    for (std::size_t r : {20u, 24u, 32u}) EXPECT_NEAR(mean(render(s, r)), m16, 0.02);
}

TEST(GenImages, Deterministic) {
    auto a = gen_images(6, 10, 16), b = gen_images(6, 10, 16), c = gen_images(7, 10, 16);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].image, b[i].image);
        EXPECT_EQ(a[i].caption, b[i].caption);
    }
    EXPECT_NE(a[0].image, c[0].image);
}

TEST(TextSamples, AnswerIsTheOnlyTarget) {
    UnifiedVocabulary v(16);
    ShapeSpec s;
    s.kind = ShapeKind::stripes;
    s.color = 4;
    s.background = 1;
    auto seq = to_token_sequence(make_text_sample(s, QuestionKind::shape, v), v);
    std::vector<int> targets;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        if (seq.loss_mask[t]) targets.push_back(seq.ids[t]);
    }
    auto expected = v.encode_text("stripes");
    expected.push_back(v.special(Special::eos));
    EXPECT_EQ(targets, expected);
    EXPECT_EQ(seq.ids.front(), v.special(Special::bos));
    EXPECT_EQ(v.render(seq.ids), "<bos><user>blue stripes on white. shape?<assistant>stripes<eos>");
}

TEST(TextSamples, CorpusIsTextOnlyAndDeterministic) {
    UnifiedVocabulary v(32);
    auto a = gen_text_corpus(1, 200, v), b = gen_text_corpus(1, 200, v);
    EXPECT_EQ(a, b);
    for (const auto& seq : a) {
        EXPECT_TRUE(seq.prefix_positions.empty());
        for (int id : seq.ids) EXPECT_FALSE(v.is_visual(id));
        EXPECT_GT(seq.masked_count(), 1u);
    }
}

TEST(VqaSamples, InjectsOneEmbeddingPerCell) {
    UnifiedVocabulary v(8);
    FeatureMap f{2, 3, 5, std::vector<double>(30)};
    for (std::size_t i = 0; i < 30; ++i) f.values[i] = 0.1 * static_cast<double>(i);
    ShapeSpec s;
    s.color = 3;
    s.background = 0;
    auto seq = to_token_sequence(make_vqa_sample(f, s, QuestionKind::color, v), v);
    ASSERT_EQ(seq.prefix_positions.size(), 6u);
    EXPECT_EQ(seq.prefix_width, 5u);
    EXPECT_EQ(seq.prefix_values, f.values);
    for (std::size_t p : seq.prefix_positions) {
        EXPECT_EQ(seq.ids[p], v.special(Special::pad));
        EXPECT_FALSE(seq.loss_mask[p]);
    }
    EXPECT_EQ(seq.prefix_positions.front(), 2u);
}

TEST(TextToImage, CodesAreTargetsBetweenImageMarkers) {
    UnifiedVocabulary v(8);
    CodeMap codes{1, 2, 1, QuantizerMode::vq, {5, 2}};
    auto seq = to_token_sequence(make_text_to_image_sample(codes, "red disk on black", v, 64), v);
    std::vector<int> targets;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        if (seq.loss_mask[t]) targets.push_back(seq.ids[t]);
    }
    EXPECT_EQ(targets, (std::vector<int>{v.special(Special::image_start), v.visual_id(5), v.visual_id(2),
                                         v.special(Special::image_end)}));
    EXPECT_THROW(make_text_to_image_sample(codes, "red disk on black", v, 10), std::length_error);
}

TEST(TextToImage, PromptIsTheSampleBeforeTheFirstCode) {
    UnifiedVocabulary v(8);
    CodeMap codes{1, 1, 1, QuantizerMode::vq, {3}};
    auto full = to_token_sequence(make_text_to_image_sample(codes, "cyan disk on red", v, 64), v);
    auto prompt = text_to_image_prompt("cyan disk on red", v);
    ASSERT_LT(prompt.size(), full.size());
    for (std::size_t t = 0; t < prompt.size(); ++t) EXPECT_EQ(prompt.ids[t], full.ids[t]);
    EXPECT_EQ(full.ids[prompt.size()], v.visual_id(3));
}

TEST(TokenSequence, ValidateCatchesInconsistencies) {
    UnifiedVocabulary v(4);
    TokenSequence s;
    s.push(1, true);
    EXPECT_THROW(s.validate(v), std::invalid_argument);
    TokenSequence t;
    t.push(1, false);
    t.push(v.size(), true);
    EXPECT_THROW(t.validate(v), std::invalid_argument);
    TokenSequence u;
    u.push(1, false);
    u.prefix_width = 2;
    const std::vector<double> e{1.0, 2.0};
    u.push_embedding(e, v.special(Special::pad));
    EXPECT_NO_THROW(u.validate(v));
    EXPECT_THROW(u.push_embedding(std::vector<double>{1.0}, 0), ShapeError);
    u.loss_mask[1] = 1;
    EXPECT_THROW(u.validate(v), std::invalid_argument);
}

TEST(InstructionSample, RejectsEmptyRoundsAndAnswers) {
    UnifiedVocabulary v(4);
    InstructionSample s;
    EXPECT_THROW(to_token_sequence(s, v), std::invalid_argument);
    s.rounds.push_back({{104}, {}});
    EXPECT_THROW(to_token_sequence(s, v), std::invalid_argument);
}
