#pragma once

// Deterministic synthetic data: procedurally drawn shape images with
// template captions, text-only question/answer pairs, and the instruction
// samples built from them.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unicb/codebook.hpp"
#include "unicb/image.hpp"
#include "unicb/langmodel.hpp"
#include "unicb/quantizer.hpp"

namespace unicb {

enum class ShapeKind : int { rectangle = 0, disk = 1, stripes = 2 };
inline constexpr int kShapeKinds = 3;
inline constexpr int kColors = 8;

const std::array<std::string, kColors>& color_names();
std::string shape_name(ShapeKind kind);

/// Geometry in unit canvas coordinates so one scene renders at any resolution.
struct ShapeSpec {
    ShapeKind kind = ShapeKind::rectangle;
    int color = 0;
    int background = 1;
    std::array<double, 3> rgb{};
    std::array<double, 3> bg_rgb{};
    double cx = 0.5, cy = 0.5;
    double sx = 0.4, sy = 0.4;

    /// Shape inside the canvas and colours in [0, 1].
    bool valid() const;
};

struct LabeledImage {
    Image image;
    std::string caption;
    ShapeSpec shape;
};

ShapeSpec random_shape(Rng& rng);
Image render(const ShapeSpec& shape, std::size_t resolution);
/// "<color> <shape> on <background>"
std::string caption_of(const ShapeSpec& shape);
/// Every caption the grammar can produce.
std::vector<std::string> all_captions();

std::vector<LabeledImage> gen_images(std::uint64_t seed, std::size_t count, std::size_t resolution);

enum class SampleKind { text, vqa, text_to_image, decompression };
std::string_view to_string(SampleKind kind);

struct Round {
    std::vector<int> question;
    std::vector<int> answer;
};

struct InstructionSample {
    SampleKind kind = SampleKind::text;
    std::vector<Round> rounds;
    /// Injected before the first question when present.
    std::optional<FeatureMap> image;
};

/// <bos> then per round: <user> [image] question <assistant> answer; loss on answers only.
TokenSequence to_token_sequence(const InstructionSample& sample, const UnifiedVocabulary& vocab);

enum class QuestionKind : int { color = 0, shape = 1, background = 2 };

/// Text-only question about a described scene; the answer ends with <eos>.
InstructionSample make_text_sample(const ShapeSpec& shape, QuestionKind question,
                                   const UnifiedVocabulary& vocab);
std::vector<TokenSequence> gen_text_corpus(std::uint64_t seed, std::size_t count,
                                           const UnifiedVocabulary& vocab);

/// Question about an image given as injected Ẑ embeddings.
InstructionSample make_vqa_sample(const FeatureMap& aggregated, const ShapeSpec& shape,
                                  QuestionKind question, const UnifiedVocabulary& vocab);

/// Caption + <gen-image> as the question; <img> codes </img> as the answer.
InstructionSample make_text_to_image_sample(const CodeMap& codes, const std::string& caption,
                                            const UnifiedVocabulary& vocab, std::size_t context);

/// Prompt that asks for an image: everything before the answer's first code.
TokenSequence text_to_image_prompt(const std::string& caption, const UnifiedVocabulary& vocab);

}  // namespace unicb
