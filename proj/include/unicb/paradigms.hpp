#pragma once

// Stage I (alternating tokenizer / language-model training under the frozen,
// dual and iterative codebook paradigms) and Stage II (instruction tuning of
// the language model with the tokenizer frozen).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "unicb/checkpoint.hpp"

namespace unicb {

/// ‖C − C_L‖_F; throws ShapeError on mismatched tables.
double codebook_distance(const Codebook& a, const Codebook& b);

struct StepRow {
    std::uint64_t step = 0;
    double mse = 0.0;
    double lm_loss = 0.0;
    double codebook_distance = 0.0;
    double utilization = 0.0;
};

struct StageMetrics {
    std::vector<StepRow> rows;
    double initial_eval_mse = 0.0;
    double final_eval_mse = 0.0;
    double initial_text_loss = 0.0;
    double final_text_loss = 0.0;
    double initial_distance = 0.0;
    double final_distance = 0.0;
    double final_utilization = 0.0;
    /// Summed ‖ΔC_L‖_F from direct overwrites (never from gradient steps).
    double non_gradient_drift = 0.0;
    std::vector<double> drift_per_round;
    /// d(C, C_L) right after each sync event.
    std::vector<double> sync_distances;
    double wall_seconds = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const StepRow& row);
std::string metrics_csv(const StageMetrics& metrics);

/// A non-finite loss or gradient, tagged with the step where it happened.
class TrainingAborted : public NumericError {
public:
    TrainingAborted(std::uint64_t step, const std::string& what)
        : NumericError("step " + std::to_string(step) + ": " + what), step_(step) {}
    std::uint64_t step() const { return step_; }

private:
    std::uint64_t step_;
};

using StepCallback = std::function<void(const StepRow&)>;

/// Runs config.rounds alternations of tokenizer and LM blocks on `state`.
/// Every step (tokenizer or LM) produces one metrics row.
StageMetrics run_stage1(TrainingState& state, const Dataset& data, const StepCallback& on_step = {});

/// Held-out text questions used for the "text loss" metric.
std::vector<TokenSequence> heldout_text(const ExperimentConfig& config, const UnifiedVocabulary& vocab);

struct TrainingSample {
    SampleKind kind = SampleKind::text;
    TokenSequence sequence;
};

/// VQA-style, text-to-image and decompression samples (single and
/// multi-segment) for every image, built with the frozen tokenizer.
std::vector<TrainingSample> build_instruction_corpus(const TrainingState& state,
                                                     std::span<const LabeledImage> images,
                                                     std::uint64_t seed);

/// Throws std::invalid_argument naming the first missing kind.
void require_kinds(std::span<const TrainingSample> corpus, std::span<const SampleKind> kinds);

struct Stage2Result {
    StageMetrics metrics;
    double initial_heldout_loss = 0.0;
    double final_heldout_loss = 0.0;
};

/// Fine-tunes only the language model; tokenizer and codebook are untouched.
/// With zero steps the state is returned unchanged.
Stage2Result run_stage2(TrainingState& state, const Dataset& data, std::size_t steps,
                        const StepCallback& on_step = {});

struct DecompressionReport {
    double exact_token_rate = 0.0;
    double exact_map_rate = 0.0;
    std::size_t violations = 0;
    std::size_t images = 0;
};

DecompressionReport evaluate_decompression(const TrainingState& state, std::span<const LabeledImage> images,
                                           std::size_t segments = 1);

}  // namespace unicb
