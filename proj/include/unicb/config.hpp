#pragma once

// Experiment configuration. Serialized as flat `key = value` text; every key
// has a default, unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "unicb/quantizer.hpp"

namespace unicb {

enum class Paradigm { frozen, dual, iterative };
enum class EmaMode { literal, normalized };
enum class CodebookInit { copy, random };
enum class DualSwap { round, step };

std::string_view to_string(Paradigm p);
std::string_view to_string(EmaMode m);
std::string_view to_string(CodebookInit c);
std::string_view to_string(DualSwap s);
Paradigm parse_paradigm(std::string_view text);

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
    // data
    std::uint64_t seed = 1;
    std::size_t image_size = 16;
    std::size_t train_images = 256;
    std::size_t heldout_images = 32;
    std::size_t text_samples = 2048;

    // tokenizer
    std::size_t patch = 4;
    std::size_t codes = 512;  // K
    std::size_t depth = 2;    // D
    QuantizerMode quantizer = QuantizerMode::rq;
    std::size_t enc_hidden = 256;
    double beta = 0.25;
    double tok_lr = 2e-3;
    std::size_t tok_batch = 16;

    // codebook dynamics
    EmaMode ema_mode = EmaMode::normalized;
    bool ema_enabled = true;
    double ema_decay = 0.99;
    double sync_decay = 0.99;
    std::size_t sync_interval = 50;
    CodebookInit codebook_init = CodebookInit::copy;
    double codebook_init_std = 0.0;  // 0 → same as the LM embedding init

    // language model
    std::size_t lm_width = 128;
    std::size_t lm_layers = 4;
    std::size_t lm_heads = 4;
    std::size_t lm_context = 512;
    std::size_t lm_mlp_mult = 4;
    double lm_init_std = 0.0;  // 0 → 1/sqrt(width)
    double lm_lr = 1e-3;
    std::size_t lm_batch = 8;
    double lm_clip = 1.0;

    // stage I schedule
    Paradigm paradigm = Paradigm::iterative;
    std::size_t rounds = 10;
    std::size_t tok_steps_per_round = 100;
    std::size_t lm_steps_per_round = 100;
    DualSwap dual_swap = DualSwap::round;
    bool freeze_lm = false;
    bool freeze_tokenizer = false;
    std::size_t util_window = 50;

    // stage II
    std::size_t stage2_steps = 1000;
    std::size_t decompression_segments = 2;  // T for the multi-turn samples
    double stage2_lr = 1e-3;

    std::size_t code_dim() const { return lm_width; }
    std::size_t tok_steps_total() const { return rounds * tok_steps_per_round; }

    /// Materialized `key = value` lines in a fixed order.
    std::string to_text() const;
    void set(std::string_view key, std::string_view value);
    void validate() const;

    /// Applies `key = value` lines (with # comments) over the current values.
    void apply_text(std::string_view text);
    static ExperimentConfig from_text(std::string_view text);
    static ExperimentConfig from_file(const std::filesystem::path& path);

    /// Digest over the keys that fix tensor shapes; checkpoints must match it to load.
    std::uint64_t architecture_digest() const;
    /// Digest over every key.
    std::uint64_t full_digest() const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Compact model sizes for tests and quick runs.
ExperimentConfig desk_config();

}  // namespace unicb
