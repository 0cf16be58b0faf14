#pragma once

// Full training state (codebook, EMA statistics, tokenizer, language model,
// optimizer moments) and the dataset bundle, with their on-disk formats.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "unicb/autoencoder.hpp"
#include "unicb/codebook.hpp"
#include "unicb/config.hpp"
#include "unicb/corpus.hpp"
#include "unicb/langmodel.hpp"
#include "unicb/serialize.hpp"

namespace unicb {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDatasetVersion = 1;

struct OptimizerState {
    std::vector<AdamSlot> slots;
    std::int64_t steps = 0;

    void capture(const Adam& adam);
    /// Restores into an optimizer over the same parameter list; empty state is a no-op.
    void apply(Adam& adam) const;

    friend bool operator==(const OptimizerState& a, const OptimizerState& b);
};

struct TrainingState {
    ExperimentConfig config;
    Codebook codebook;
    EmaTracker ema;
    Tokenizer tokenizer;
    LanguageModel lm;
    OptimizerState tok_opt;
    OptimizerState lm_opt;
    std::uint32_t stage = 0;  // last completed stage
    std::uint64_t steps = 0;  // steps taken in that stage

    /// Fresh models from config.seed. The tokenizer codebook is a copy of the
    /// LM's visual rows, or an independent random table when configured so.
    static TrainingState initialize(const ExperimentConfig& config);
};

/// Deep copy; the models own shared tensors, so plain copies would alias.
TrainingState clone(const TrainingState& state);

/// Bitwise equality of every parameter, statistic and counter.
bool bit_equal(const TrainingState& a, const TrainingState& b);

Bytes encode_checkpoint(const TrainingState& state);
/// When `expected` is given its architecture digest must match the file's.
TrainingState decode_checkpoint(std::span<const std::uint8_t> data,
                                const ExperimentConfig* expected = nullptr);
void save_checkpoint(const TrainingState& state, const std::filesystem::path& path);
TrainingState load_checkpoint(const std::filesystem::path& path, const ExperimentConfig* expected = nullptr);

struct Dataset {
    std::uint64_t seed = 0;
    std::size_t resolution = 0;
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> heldout;

    std::uint64_t digest() const;
};

/// Training and held-out images from independent streams of config.seed.
Dataset make_dataset(const ExperimentConfig& config);
Bytes encode_dataset(const Dataset& data);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

std::vector<Image> images_of(const std::vector<LabeledImage>& items);

}  // namespace unicb
