#include "unicb/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace unicb {

namespace {

constexpr std::array<std::array<double, 3>, kColors> kPalette{{
    {0.05, 0.05, 0.05},  // black
    {0.95, 0.95, 0.95},  // white
    {0.90, 0.10, 0.10},  // red
    {0.10, 0.80, 0.15},  // green
    {0.10, 0.20, 0.90},  // blue
    {0.95, 0.90, 0.10},  // yellow
    {0.10, 0.85, 0.90},  // cyan
    {0.85, 0.15, 0.85},  // magenta
}};

constexpr double kJitter = 0.06;
constexpr int kSupersample = 4;

std::array<double, 3> jittered(int color, Rng& rng) {
    std::array<double, 3> c = kPalette[static_cast<std::size_t>(color)];
    for (auto& v : c) v = std::clamp(v + rng.uniform(-kJitter, kJitter), 0.0, 1.0);
    return c;
}

bool covers(const ShapeSpec& s, double x, double y) {
    const double x0 = s.cx - s.sx / 2, y0 = s.cy - s.sy / 2;
    switch (s.kind) {
        case ShapeKind::rectangle:
            return x >= x0 && x < x0 + s.sx && y >= y0 && y < y0 + s.sy;
        case ShapeKind::disk: {
            const double r = s.sx / 2, dx = x - s.cx, dy = y - s.cy;
            return dx * dx + dy * dy <= r * r;
        }
        case ShapeKind::stripes: {
            if (!(x >= x0 && x < x0 + s.sx && y >= y0 && y < y0 + s.sy)) return false;
            const int band = static_cast<int>(std::floor((y - y0) / (s.sy / 4.0)));
            return band % 2 == 0;
        }
    }
    return false;
}

}  // namespace

const std::array<std::string, kColors>& color_names() {
    static const std::array<std::string, kColors> names{"black", "white", "red",    "green",
                                                        "blue",  "yellow", "cyan", "magenta"};
    return names;
}

std::string shape_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::rectangle: return "rectangle";
        case ShapeKind::disk: return "disk";
        case ShapeKind::stripes: return "stripes";
    }
    return "?";
}

bool ShapeSpec::valid() const {
    for (double v : rgb) {
        if (!(v >= 0.0 && v <= 1.0)) return false;
    }
    for (double v : bg_rgb) {
        if (!(v >= 0.0 && v <= 1.0)) return false;
    }
    const double ex = kind == ShapeKind::disk ? sx : sx, ey = kind == ShapeKind::disk ? sx : sy;
    return cx - ex / 2 >= 0.0 && cx + ex / 2 <= 1.0 && cy - ey / 2 >= 0.0 && cy + ey / 2 <= 1.0 &&
           color != background && color >= 0 && color < kColors && background >= 0 &&
           background < kColors;
}

ShapeSpec random_shape(Rng& rng) {
    ShapeSpec s;
    s.kind = static_cast<ShapeKind>(rng.below(kShapeKinds));
    s.color = static_cast<int>(rng.below(kColors));
    s.background = static_cast<int>(rng.below(kColors - 1));
    if (s.background >= s.color) ++s.background;
    s.rgb = jittered(s.color, rng);
    s.bg_rgb = jittered(s.background, rng);
    s.sx = rng.uniform(0.35, 0.75);
    s.sy = s.kind == ShapeKind::disk ? s.sx : rng.uniform(0.35, 0.75);
    s.cx = rng.uniform(s.sx / 2, 1.0 - s.sx / 2);
    s.cy = rng.uniform(s.sy / 2, 1.0 - s.sy / 2);
    return s;
}

Image render(const ShapeSpec& shape, std::size_t resolution) {
    Image img(resolution, resolution);
    const double res = static_cast<double>(resolution);
    constexpr double inv = 1.0 / (kSupersample * kSupersample);
    for (std::size_t y = 0; y < resolution; ++y) {
        for (std::size_t x = 0; x < resolution; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSupersample; ++sy) {
                for (int sx = 0; sx < kSupersample; ++sx) {
                    const double px = (static_cast<double>(x) + (sx + 0.5) / kSupersample) / res;
                    const double py = (static_cast<double>(y) + (sy + 0.5) / kSupersample) / res;
                    hits += covers(shape, px, py) ? 1 : 0;
                }
            }
            const double a = hits * inv;
            for (std::size_t c = 0; c < 3; ++c) {
                img.at(y, x, c) = a * shape.rgb[c] + (1.0 - a) * shape.bg_rgb[c];
            }
        }
    }
    return img;
}

std::string caption_of(const ShapeSpec& shape) {
    return color_names()[static_cast<std::size_t>(shape.color)] + " " + shape_name(shape.kind) + " on " +
           color_names()[static_cast<std::size_t>(shape.background)];
}

std::vector<std::string> all_captions() {
    std::vector<std::string> out;
    for (int k = 0; k < kShapeKinds; ++k) {
        for (int c = 0; c < kColors; ++c) {
            for (int b = 0; b < kColors; ++b) {
                if (b == c) continue;
                ShapeSpec s;
                s.kind = static_cast<ShapeKind>(k);
                s.color = c;
                s.background = b;
                out.push_back(caption_of(s));
            }
        }
    }
    return out;
}

std::vector<LabeledImage> gen_images(std::uint64_t seed, std::size_t count, std::size_t resolution) {
    Rng rng(seed);
    std::vector<LabeledImage> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto s = random_shape(rng);
        out.push_back({render(s, resolution), caption_of(s), s});
    }
    return out;
}

std::string_view to_string(SampleKind kind) {
    switch (kind) {
        case SampleKind::text: return "text";
        case SampleKind::vqa: return "vqa";
        case SampleKind::text_to_image: return "text-to-image";
        case SampleKind::decompression: return "decompression";
    }
    return "?";
}

TokenSequence to_token_sequence(const InstructionSample& sample, const UnifiedVocabulary& vocab) {
    if (sample.rounds.empty()) throw std::invalid_argument("instruction sample without rounds");
    TokenSequence seq;
    seq.push(vocab.special(Special::bos), false);
    for (std::size_t r = 0; r < sample.rounds.size(); ++r) {
        const auto& round = sample.rounds[r];
        if (round.answer.empty()) throw std::invalid_argument("instruction sample with an empty answer");
        seq.push(vocab.special(Special::user), false);
        if (r == 0 && sample.image) {
            seq.prefix_width = sample.image->dim;
            for (std::size_t c = 0; c < sample.image->cells(); ++c) {
                seq.push_embedding(sample.image->cell(c), vocab.special(Special::pad));
            }
        }
        for (int id : round.question) seq.push(id, false);
        seq.push(vocab.special(Special::assistant), false);
        for (int id : round.answer) seq.push(id, true);
    }
    seq.validate(vocab);
    return seq;
}

namespace {

std::string question_text(QuestionKind q) {
    switch (q) {
        case QuestionKind::color: return "color?";
        case QuestionKind::shape: return "shape?";
        case QuestionKind::background: return "background?";
    }
    return "?";
}

std::string answer_text(const ShapeSpec& s, QuestionKind q) {
    switch (q) {
        case QuestionKind::color: return color_names()[static_cast<std::size_t>(s.color)];
        case QuestionKind::shape: return shape_name(s.kind);
        case QuestionKind::background: return color_names()[static_cast<std::size_t>(s.background)];
    }
    return "?";
}

std::vector<int> answer_ids(const ShapeSpec& s, QuestionKind q, const UnifiedVocabulary& vocab) {
    auto a = vocab.encode_text(answer_text(s, q));
    a.push_back(vocab.special(Special::eos));
    return a;
}

}  // namespace

InstructionSample make_text_sample(const ShapeSpec& shape, QuestionKind question,
                                   const UnifiedVocabulary& vocab) {
    InstructionSample s;
    s.kind = SampleKind::text;
    s.rounds.push_back({vocab.encode_text(caption_of(shape) + ". " + question_text(question)),
                        answer_ids(shape, question, vocab)});
    return s;
}

std::vector<TokenSequence> gen_text_corpus(std::uint64_t seed, std::size_t count,
                                           const UnifiedVocabulary& vocab) {
    Rng rng(seed ^ 0x7465787463727075ULL);
    std::vector<TokenSequence> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto shape = random_shape(rng);
        const auto q = static_cast<QuestionKind>(rng.below(3));
        out.push_back(to_token_sequence(make_text_sample(shape, q, vocab), vocab));
    }
    return out;
}

InstructionSample make_vqa_sample(const FeatureMap& aggregated, const ShapeSpec& shape,
                                  QuestionKind question, const UnifiedVocabulary& vocab) {
    InstructionSample s;
    s.kind = SampleKind::vqa;
    s.image = aggregated;
    s.rounds.push_back({vocab.encode_text(question_text(question)), answer_ids(shape, question, vocab)});
    return s;
}

InstructionSample make_text_to_image_sample(const CodeMap& codes, const std::string& caption,
                                            const UnifiedVocabulary& vocab, std::size_t context) {
    InstructionSample s;
    s.kind = SampleKind::text_to_image;
    Round r;
    r.question = vocab.encode_text(caption);
    r.question.push_back(vocab.special(Special::generate_image));
    r.answer.push_back(vocab.special(Special::image_start));
    for (int k : codes.indices) r.answer.push_back(vocab.visual_id(k));
    r.answer.push_back(vocab.special(Special::image_end));
    // bos, user, question, assistant, answer
    const std::size_t total = 3 + r.question.size() + r.answer.size();
    if (total > context) {
        throw std::length_error("text-to-image sample of " + std::to_string(total) +
                                " tokens exceeds context " + std::to_string(context));
    }
    s.rounds.push_back(std::move(r));
    return s;
}

TokenSequence text_to_image_prompt(const std::string& caption, const UnifiedVocabulary& vocab) {
    TokenSequence seq;
    seq.push(vocab.special(Special::bos), false);
    seq.push(vocab.special(Special::user), false);
    for (int id : vocab.encode_text(caption)) seq.push(id, false);
    seq.push(vocab.special(Special::generate_image), false);
    seq.push(vocab.special(Special::assistant), false);
    seq.push(vocab.special(Special::image_start), false);
    return seq;
}

}  // namespace unicb
