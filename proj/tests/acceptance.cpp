// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "support.hpp"
#include "unicb/paradigms.hpp"

using namespace unicb;
namespace ut = unicb::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string format(const char* fmt, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

// Trained desk-scale states shared by the ordering, decompression and
// resolution criteria, keyed by (paradigm, seed).
struct Stage1Run {
    TrainingState state;
    StageMetrics metrics;
    Dataset data;
};

std::map<std::pair<Paradigm, std::uint64_t>, Stage1Run>& run_cache() {
    static std::map<std::pair<Paradigm, std::uint64_t>, Stage1Run> cache;
    return cache;
}

const Stage1Run& desk_run(Paradigm p, std::uint64_t seed) {
    auto& cache = run_cache();
    const auto key = std::make_pair(p, seed);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    auto cfg = desk_config();
    cfg.paradigm = p;
    cfg.seed = seed;
    auto data = make_dataset(cfg);
    auto state = TrainingState::initialize(cfg);
    auto m = run_stage1(state, data);
    std::printf("    stage 1 %-9s seed %llu: mse %.5f text %.4f d %.4f util %.3f drift %.3f (%.0f s)\n",
                std::string(to_string(p)).c_str(), static_cast<unsigned long long>(seed), m.final_eval_mse,
                m.final_text_loss, m.final_distance, m.final_utilization, m.non_gradient_drift, m.wall_seconds);
    std::fflush(stdout);
    return cache.emplace(key, Stage1Run{std::move(state), std::move(m), std::move(data)}).first->second;
}

// ---- 1 ----------------------------------------------------------------------------------

int brute_force_nearest(std::span<const double> z, const Codebook& c) {
    int best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < c.size(); ++k) {
        double d = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) d += (z[j] - c.entry(k)[j]) * (z[j] - c.entry(k)[j]);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

Verdict quantizer_oracle() {
    const auto t0 = Clock::now();
    Rng rng(101);
    std::size_t agree = 0, ties = 0;
    constexpr std::size_t kTrials = 10000;
    for (std::size_t t = 0; t < kTrials; ++t) {
        const std::size_t k = 1 + rng.below(64), n = 1 + rng.below(16);
        // Every third case draws from a coarse integer grid so exact ties are common.
        const bool grid = t % 3 == 0;
        std::vector<double> e(k * n), z(n);
        for (auto& v : e) v = grid ? static_cast<double>(rng.below(3)) : rng.normal();
        for (auto& v : z) v = grid ? static_cast<double>(rng.below(3)) : rng.normal();
        if (t % 7 == 0 && k > 1) std::copy_n(e.begin(), n, e.begin() + static_cast<long>((k - 1) * n));
        Codebook c(k, n, e);
        const int expected = brute_force_nearest(z, c);
        std::size_t at_min = 0;
        const auto dist = [&](std::size_t i) {
            double d = 0.0;
            for (std::size_t j = 0; j < n; ++j) d += (z[j] - c.entry(i)[j]) * (z[j] - c.entry(i)[j]);
            return d;
        };
        const double dmin = dist(static_cast<std::size_t>(expected));
        for (std::size_t i = 0; i < k; ++i) at_min += dist(i) == dmin ? 1 : 0;
        ties += at_min > 1 ? 1 : 0;
        agree += quantize(z, c) == expected ? 1 : 0;
    }
    const double secs = seconds_since(t0);
    return {agree == kTrials && secs < 10.0,
            format("%zu/%zu match (%zu with ties), %.2f s", agree, kTrials, ties, secs)};
}

// ---- 2 ----------------------------------------------------------------------------------

Verdict ema_sync_algebra() {
    Rng rng(202);
    double worst_sync = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t k = 2 + rng.below(30), n = 1 + rng.below(8);
        const double lambda = rng.uniform(0.5, 0.999);
        auto c = Codebook::random(k, n, rng, 1.0);
        const auto target = Codebook::random(k, n, rng, 1.0);
        const double d0 = frobenius_distance(c, target);
        for (int t = 0; t < 20; ++t) c = sync_update(c, target, lambda);
        const double expected = std::pow(lambda, 20) * d0;
        worst_sync = std::max(worst_sync, std::fabs(frobenius_distance(c, target) - expected) / expected);
    }
    double worst_ema = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 1 + rng.below(6), n = 1 + rng.below(4), positions = 1 + rng.below(10);
        const double lambda = rng.uniform(0.0, 1.0);
        auto c = Codebook::random(k, n, rng, 1.0);
        std::vector<int> assign(positions);
        for (auto& a : assign) a = static_cast<int>(rng.below(k));
        std::vector<double> z(positions * n);
        for (auto& v : z) v = rng.normal();
        auto updated = ema_update(c, z, IndicatorMap(k, assign), lambda);
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double iz = 0.0;
                for (std::size_t p = 0; p < positions; ++p) {
                    if (assign[p] == static_cast<int>(i)) iz += z[p * n + j];
                }
                const double hand = lambda * c.entry(i)[j] + (1.0 - lambda) * iz;
                worst_ema = std::max(worst_ema, std::fabs(updated.entry(i)[j] - hand));
            }
        }
    }
    return {worst_sync < 1e-9 && worst_ema < 1e-12,
            format("sync T=20 max rel error %.2e, ema max abs error %.2e", worst_sync, worst_ema)};
}

// ---- 3 ----------------------------------------------------------------------------------

Verdict gradient_correctness() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string where;
    std::size_t checks = 0;
    auto record = [&](const std::string& name, const ut::GradCheckResult& r) {
        ++checks;
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            where = name + (r.worst.empty() ? "" : " (" + r.worst + ")");
        }
    };
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        for (const auto& c : ut::primitive_cases(seed)) record(c.name, ut::check_gradients(c.loss, c.params));
    }
    for (auto mode : {QuantizerMode::rq, QuantizerMode::hq}) {
        Rng rng(303);
        Tokenizer tok(2, 3, 2, mode, 5, rng);
        auto c = Codebook::random(6, 3, rng, 0.7);
        std::vector<Image> batch;
        for (auto& it : gen_images(4, 2, 4)) batch.push_back(it.image);
        auto r = ut::check_tokenizer_gradients(tok, batch, c, 0.25);
        record("tokenizer " + std::string(to_string(mode)) + " decoder", r.decoder);
        record("tokenizer " + std::string(to_string(mode)) + " encoder", r.encoder);
    }
    for (std::size_t prefix : {16u, 6u}) {
        Rng rng(304);
        LanguageModel m(ut::tiny_lm_config(8, prefix), rng);
        auto seq = ut::gradcheck_sequence(m.vocab(), prefix, rng);
        record("language model prefix " + std::to_string(prefix),
               ut::check_gradients([&] { return nll_loss(lm_forward(seq, m), seq); }, m.parameters()));
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 60.0,
            format("%zu checks, max rel error %.2e at %s, %.1f s", checks, worst, where.c_str(), secs)};
}

// ---- 4 ----------------------------------------------------------------------------------

Verdict rq_monotonicity() {
    Rng rng(404);
    std::size_t monotone = 0, rq_le_vq = 0, cells = 0;
    constexpr std::size_t kInputs = 1000;
    for (std::size_t t = 0; t < kInputs; ++t) {
        const std::size_t k = 2 + rng.below(63), n = 1 + rng.below(8);
        auto e = Codebook::random(k, n, rng, 1.0).entries();
        // Row 0 is the zero code; without it greedy residual steps can overshoot.
        std::fill_n(e.begin(), n, 0.0);
        Codebook c(k, n, e);
        FeatureMap f{2, 2, n, std::vector<double>(4 * n)};
        for (auto& v : f.values) v = rng.normal();
        auto rq = encode_stacked(f, c, 4, QuantizerMode::rq);
        auto err = residual_error(f, rq, c);
        bool ok = true;
        for (std::size_t d = 1; d < err.size(); ++d) ok = ok && err[d] <= err[d - 1];
        monotone += ok ? 1 : 0;
        auto a = aggregate(rq, c);
        auto v = aggregate(encode_stacked(f, c, 1, QuantizerMode::vq), c);
        for (std::size_t cell = 0; cell < 4; ++cell) {
            double er = 0.0, ev = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                er += (f.cell(cell)[j] - a.cell(cell)[j]) * (f.cell(cell)[j] - a.cell(cell)[j]);
                ev += (f.cell(cell)[j] - v.cell(cell)[j]) * (f.cell(cell)[j] - v.cell(cell)[j]);
            }
            rq_le_vq += er <= ev ? 1 : 0;
            ++cells;
        }
    }
    return {monotone == kInputs && rq_le_vq == cells,
            format("non-increasing %zu/%zu, rq <= vq on %zu/%zu cells (codebooks contain a zero code)", monotone,
                   kInputs, rq_le_vq, cells)};
}

// ---- 5 ----------------------------------------------------------------------------------

Verdict freeze_contracts() {
    auto cfg = desk_config();
    cfg.codes = 64;
    cfg.train_images = 16;
    cfg.heldout_images = 4;
    cfg.text_samples = 32;
    cfg.rounds = 1;
    cfg.tok_steps_per_round = 3;
    cfg.lm_steps_per_round = 3;
    auto state = TrainingState::initialize(cfg);
    auto data = make_dataset(cfg);

    // Optimizer steps with the EMA switched off: only the weights may move.
    const auto cb = state.codebook.checksum();
    TokenizerTrainer tok_trainer(state.tokenizer, {.lr = 1e-2});
    TokenizerStepOptions opt;
    opt.update_codebook = false;
    const auto tok_before = state.tokenizer.checksum();
    for (int s = 0; s < 5; ++s) tok_trainer.step(images_of(data.train), state.codebook, state.ema, opt);
    bool codebook_fixed = state.codebook.checksum() == cb && state.tokenizer.checksum() != tok_before;
    LmTrainer lm_trainer(state.lm, {.lr = 1e-2});
    auto text = gen_text_corpus(1, 4, state.lm.vocab());
    lm_trainer.step(text);
    codebook_fixed = codebook_fixed && state.codebook.checksum() == cb;

    run_stage1(state, data);
    const auto tok = state.tokenizer.checksum(), cb1 = state.codebook.checksum(), lm = state.lm.checksum();
    run_stage2(state, data, 20);
    const bool stage2_ok =
        state.tokenizer.checksum() == tok && state.codebook.checksum() == cb1 && state.lm.checksum() != lm;

    const bool tied = state.lm.output_weight().get() == state.lm.token_embedding().get();
    return {codebook_fixed && stage2_ok && tied,
            format("codebook unchanged by optimizer steps: %s; stage 2 tokenizer/codebook unchanged: %s; "
                   "tied storage: %s",
                   codebook_fixed ? "yes" : "no", stage2_ok ? "yes" : "no", tied ? "yes" : "no")};
}

// ---- 6 ----------------------------------------------------------------------------------

Verdict desk_stage1() {
    auto cfg = desk_config();
    cfg.paradigm = Paradigm::iterative;
    cfg.codebook_init = CodebookInit::random;
    auto data = make_dataset(cfg);
    auto state = TrainingState::initialize(cfg);
    auto m = run_stage1(state, data);
    const double drop = 1.0 - m.final_eval_mse / m.initial_eval_mse;
    const double ratio = m.final_distance / m.initial_distance;
    const bool ok = data.train.size() >= 256 && cfg.image_size == 16 && cfg.codes == 512 && cfg.depth == 2 &&
                    state.steps <= 2000 && drop >= 0.5 && m.final_utilization >= 0.5 && ratio <= 0.25 &&
                    m.wall_seconds < 900.0;
    return {ok, format("%zu images, %llu steps: mse %.4f -> %.4f (-%.1f%%), utilization %.3f, d %.3f -> %.3f "
                       "(%.1f%%), %.0f s",
                       data.train.size(), static_cast<unsigned long long>(state.steps), m.initial_eval_mse,
                       m.final_eval_mse, 100 * drop, m.final_utilization, m.initial_distance, m.final_distance,
                       100 * ratio, m.wall_seconds)};
}

// ---- 7 ----------------------------------------------------------------------------------

Verdict paradigm_ordering() {
    int text_ok = 0, mse_ok = 0, drift_ok = 0;
    std::string rows;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto& f = desk_run(Paradigm::frozen, seed).metrics;
        const auto& d = desk_run(Paradigm::dual, seed).metrics;
        const auto& i = desk_run(Paradigm::iterative, seed).metrics;
        const bool t = i.final_text_loss <= f.final_text_loss && f.final_text_loss < d.final_text_loss;
        const bool m = i.final_eval_mse <= f.final_eval_mse;
        const bool dr = d.non_gradient_drift > 0.0 && i.non_gradient_drift == 0.0;
        text_ok += t;
        mse_ok += m;
        drift_ok += dr;
        std::printf("    seed %llu  text  iterative %.4f  frozen %.4f  dual %.4f  %s\n",
                    static_cast<unsigned long long>(seed), i.final_text_loss, f.final_text_loss, d.final_text_loss,
                    t ? "ordered" : "not ordered");
        std::printf("    seed %llu  mse   iterative %.5f frozen %.5f %s\n", static_cast<unsigned long long>(seed),
                    i.final_eval_mse, f.final_eval_mse, m ? "ordered" : "not ordered");
        std::printf("    seed %llu  drift dual %.4f iterative %.4f\n", static_cast<unsigned long long>(seed),
                    d.non_gradient_drift, i.non_gradient_drift);
    }
    return {text_ok >= 2 && mse_ok >= 2 && drift_ok >= 2,
            format("text ordering on %d/3 seeds, mse ordering on %d/3, drift dual > 0 = iterative on %d/3", text_ok,
                   mse_ok, drift_ok)};
}

// ---- 8 ----------------------------------------------------------------------------------

Verdict decompression() {
    auto cfg = desk_config();
    auto data = make_dataset(cfg);
    auto fresh = TrainingState::initialize(cfg);
    const auto& img = data.train[0].image;
    auto sq = quantize_stacked(fresh.tokenizer.encode(img), fresh.codebook, cfg.depth, cfg.quantizer);
    std::vector<TokenSequence> batch{build_decompression_sample(sq.aggregated, sq.codes, 1, fresh.lm.vocab())};
    LmTrainer trainer(fresh.lm, {.lr = 3e-3});
    int steps = 0;
    bool exact = false;
    while (steps < 2000 && !exact) {
        trainer.step(batch);
        ++steps;
        if (steps % 25 == 0) exact = decompress_image(sq.aggregated, fresh.lm, cfg.depth, cfg.quantizer).codes == sq.codes;
    }

    auto state = clone(desk_run(Paradigm::iterative, 1).state);
    const auto& joint_data = desk_run(Paradigm::iterative, 1).data;
    run_stage2(state, joint_data, cfg.stage2_steps);
    auto report = evaluate_decompression(state, joint_data.heldout);
    const double chance = 1.0 / static_cast<double>(cfg.codes);
    const bool ok = exact && joint_data.heldout.size() == 32 && report.exact_token_rate >= 10.0 * chance;
    return {ok, format("overfit: %s after %d steps; held-out (%zu images) exact-token rate %.4f vs chance %.5f "
                       "(%.0fx), %zu violations",
                       exact ? "exact" : "not exact", steps, report.images, report.exact_token_rate, chance,
                       report.exact_token_rate / chance, report.violations)};
}

// ---- 9 ----------------------------------------------------------------------------------

Verdict determinism() {
    auto cfg = desk_config();
    cfg.codes = 64;
    cfg.train_images = 16;
    cfg.heldout_images = 4;
    cfg.text_samples = 32;
    cfg.rounds = 2;
    cfg.tok_steps_per_round = 5;
    cfg.lm_steps_per_round = 5;
    auto once = [&] {
        auto state = TrainingState::initialize(cfg);
        auto m = run_stage1(state, make_dataset(cfg));
        return std::make_pair(metrics_csv(m), encode_checkpoint(state));
    };
    const auto a = once(), b = once();
    const bool same = a.first == b.first && a.second == b.second;
    const auto back = decode_checkpoint(a.second);
    const bool round_trip = encode_checkpoint(back) == a.second;

    // Every header byte, the last byte, and a strided sweep over the body, each with every single-bit flip.
    Rng rng(909);
    std::vector<std::size_t> offsets;
    for (std::size_t i = 0; i < 48; ++i) offsets.push_back(i);
    const std::size_t stride = std::max<std::size_t>(1, a.second.size() / 400);
    for (std::size_t i = 48; i < a.second.size(); i += stride) {
        offsets.push_back(std::min(i + rng.below(stride), a.second.size() - 1));
    }
    offsets.push_back(a.second.size() - 1);
    std::size_t flips = 0, detected = 0;
    auto bytes = a.second;
    for (auto off : offsets) {
        for (int bit = 0; bit < 8; ++bit) {
            bytes[off] ^= static_cast<std::uint8_t>(1u << bit);
            ++flips;
            try {
                decode_container(bytes, kCheckpointMagic, kCheckpointVersion);
            } catch (const FormatError&) {
                ++detected;
            }
            bytes[off] ^= static_cast<std::uint8_t>(1u << bit);
        }
    }
    return {same && round_trip && detected == flips,
            format("repeat runs identical: %s; round trip bit-exact: %s; corruptions detected %zu/%zu",
                   same ? "yes" : "no", round_trip ? "yes" : "no", detected, flips)};
}

// ---- 10 ---------------------------------------------------------------------------------

Verdict resolution_mismatch() {
    const auto& run = desk_run(Paradigm::iterative, 1);
    std::map<std::size_t, double> mse;
    std::printf("    resolution  mse       psnr\n");
    for (std::size_t res : {16u, 20u, 24u, 32u}) {
        std::vector<Image> imgs;
        for (const auto& it : run.data.heldout) imgs.push_back(render(it.shape, res));
        auto r = reconstruct_eval(run.state.tokenizer, imgs, run.state.codebook);
        mse[res] = r.mse;
        std::printf("    %4zux%-4zu   %.5f   %.2f\n", res, res, r.mse, r.psnr);
    }
    return {mse[24] > mse[16], format("trained at 16x16: mse %.5f at 16x16, %.5f at 24x24", mse[16], mse[24])};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
        {"quantizer oracle equivalence", quantizer_oracle},
        {"EMA and sync algebra", ema_sync_algebra},
        {"gradient correctness", gradient_correctness},
        {"residual quantization monotonicity", rq_monotonicity},
        {"straight-through and freeze contracts", freeze_contracts},
        {"desk-scale stage 1 (iterative)", desk_stage1},
        {"paradigm ordering", paradigm_ordering},
        {"decompression sanity", decompression},
        {"determinism and serialization", determinism},
        {"resolution mismatch", resolution_mismatch},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += v.pass ? 0 : 1;
        std::printf("%s criterion %zu: %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                    v.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
