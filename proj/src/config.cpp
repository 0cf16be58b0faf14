#include "unicb/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "unicb/hash.hpp"

namespace unicb {

std::string_view to_string(Paradigm p) {
    switch (p) {
        case Paradigm::frozen: return "frozen";
        case Paradigm::dual: return "dual";
        case Paradigm::iterative: return "iterative";
    }
    return "?";
}

std::string_view to_string(EmaMode m) {
    return m == EmaMode::literal ? "literal" : "normalized";
}

std::string_view to_string(CodebookInit c) {
    return c == CodebookInit::copy ? "copy" : "random";
}

std::string_view to_string(DualSwap s) {
    return s == DualSwap::round ? "round" : "step";
}

Paradigm parse_paradigm(std::string_view text) {
    if (text == "frozen") return Paradigm::frozen;
    if (text == "dual") return Paradigm::dual;
    if (text == "iterative" || text == "iter") return Paradigm::iterative;
    throw ConfigError("unknown paradigm '" + std::string(text) + "'");
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(QuantizerMode v) { return std::string(to_string(v)); }
std::string format_value(Paradigm v) { return std::string(to_string(v)); }
std::string format_value(EmaMode v) { return std::string(to_string(v)); }
std::string format_value(CodebookInit v) { return std::string(to_string(v)); }
std::string format_value(DualSwap v) { return std::string(to_string(v)); }

void parse_value(std::string_view key, std::string_view text, std::uint64_t& out) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size()) {
        throw ConfigError("config key '" + std::string(key) + "': expected a non-negative integer, got '" +
                          std::string(text) + "'");
    }
    out = v;
}

void parse_value(std::string_view key, std::string_view text, double& out) {
    try {
        std::size_t used = 0;
        const double v = std::stod(std::string(text), &used);
        if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument("bad");
        out = v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + std::string(key) + "': expected a number, got '" +
                          std::string(text) + "'");
    }
}

void parse_value(std::string_view key, std::string_view text, bool& out) {
    if (text == "true" || text == "1") {
        out = true;
    } else if (text == "false" || text == "0") {
        out = false;
    } else {
        throw ConfigError("config key '" + std::string(key) + "': expected true/false, got '" +
                          std::string(text) + "'");
    }
}

void parse_value(std::string_view, std::string_view text, QuantizerMode& out) {
    try {
        out = parse_quantizer_mode(text);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

void parse_value(std::string_view, std::string_view text, Paradigm& out) { out = parse_paradigm(text); }

void parse_value(std::string_view key, std::string_view text, EmaMode& out) {
    if (text == "literal") out = EmaMode::literal;
    else if (text == "normalized") out = EmaMode::normalized;
    else throw ConfigError("config key '" + std::string(key) + "': expected literal|normalized");
}

void parse_value(std::string_view key, std::string_view text, CodebookInit& out) {
    if (text == "copy") out = CodebookInit::copy;
    else if (text == "random") out = CodebookInit::random;
    else throw ConfigError("config key '" + std::string(key) + "': expected copy|random");
}

void parse_value(std::string_view key, std::string_view text, DualSwap& out) {
    if (text == "round") out = DualSwap::round;
    else if (text == "step") out = DualSwap::step;
    else throw ConfigError("config key '" + std::string(key) + "': expected round|step");
}

// Visits every field as (key, reference, is_architecture).
template <class Config, class F>
void visit(Config& c, F&& f) {
    f("seed", c.seed, false);
    f("image_size", c.image_size, false);
    f("train_images", c.train_images, false);
    f("heldout_images", c.heldout_images, false);
    f("text_samples", c.text_samples, false);
    f("patch", c.patch, true);
    f("codes", c.codes, true);
    f("depth", c.depth, true);
    f("quantizer", c.quantizer, true);
    f("enc_hidden", c.enc_hidden, true);
    f("beta", c.beta, false);
    f("tok_lr", c.tok_lr, false);
    f("tok_batch", c.tok_batch, false);
    f("ema_mode", c.ema_mode, false);
    f("ema_enabled", c.ema_enabled, false);
    f("ema_decay", c.ema_decay, false);
    f("sync_decay", c.sync_decay, false);
    f("sync_interval", c.sync_interval, false);
    f("codebook_init", c.codebook_init, false);
    f("codebook_init_std", c.codebook_init_std, false);
    f("lm_width", c.lm_width, true);
    f("lm_layers", c.lm_layers, true);
    f("lm_heads", c.lm_heads, true);
    f("lm_context", c.lm_context, true);
    f("lm_mlp_mult", c.lm_mlp_mult, true);
    f("lm_init_std", c.lm_init_std, false);
    f("lm_lr", c.lm_lr, false);
    f("lm_batch", c.lm_batch, false);
    f("lm_clip", c.lm_clip, false);
    f("paradigm", c.paradigm, false);
    f("rounds", c.rounds, false);
    f("tok_steps_per_round", c.tok_steps_per_round, false);
    f("lm_steps_per_round", c.lm_steps_per_round, false);
    f("dual_swap", c.dual_swap, false);
    f("freeze_lm", c.freeze_lm, false);
    f("freeze_tokenizer", c.freeze_tokenizer, false);
    f("util_window", c.util_window, false);
    f("stage2_steps", c.stage2_steps, false);
    f("decompression_segments", c.decompression_segments, false);
    f("stage2_lr", c.stage2_lr, false);
}

template <class T>
std::string format_any(const T& v) {
    if constexpr (std::is_same_v<T, std::size_t>) {
        return format_value(static_cast<std::uint64_t>(v));
    } else {
        return format_value(v);
    }
}

template <class T>
void parse_any(std::string_view key, std::string_view text, T& v) {
    if constexpr (std::is_same_v<T, std::size_t> && !std::is_same_v<std::size_t, std::uint64_t>) {
        std::uint64_t tmp = 0;
        parse_value(key, text, tmp);
        v = static_cast<std::size_t>(tmp);
    } else {
        parse_value(key, text, v);
    }
}

}  // namespace

std::string ExperimentConfig::to_text() const {
    std::ostringstream os;
    visit(*this, [&](const char* key, const auto& v, bool) { os << key << " = " << format_any(v) << '\n'; });
    return os.str();
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
    bool found = false;
    const std::string v = trim(value);
    visit(*this, [&](const char* k, auto& field, bool) {
        if (key == k) {
            parse_any(key, v, field);
            found = true;
        }
    });
    if (!found) throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (patch == 0 || image_size == 0 || image_size % patch != 0) {
        fail("image_size " + std::to_string(image_size) + " is not a positive multiple of patch " +
             std::to_string(patch));
    }
    if (codes == 0) fail("codes must be positive");
    if (depth == 0) fail("depth must be >= 1");
    if (quantizer == QuantizerMode::vq && depth != 1) fail("quantizer vq requires depth 1");
    if (lm_heads == 0 || lm_width % lm_heads != 0) fail("lm_width must be divisible by lm_heads");
    if (lm_layers == 0 || lm_context < 2) fail("language model needs >= 1 layer and context >= 2");
    if (sync_interval == 0) fail("sync_interval must be >= 1");
    if (rounds == 0 || tok_steps_per_round == 0) fail("step budgets must be positive");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) fail("ema_decay outside [0, 1]");
    if (!(sync_decay >= 0.0 && sync_decay <= 1.0)) fail("sync_decay outside [0, 1]");
    if (tok_batch == 0 || lm_batch == 0) fail("batch sizes must be positive");
    if (decompression_segments == 0) fail("decompression_segments must be >= 1");
    if (util_window == 0) fail("util_window must be >= 1");
}

ExperimentConfig ExperimentConfig::from_text(std::string_view text) {
    ExperimentConfig c;
    c.apply_text(text);
    return c;
}

void ExperimentConfig::apply_text(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
    }
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

std::uint64_t ExperimentConfig::architecture_digest() const {
    Fnv1a h;
    visit(*this, [&](const char* key, const auto& v, bool arch) {
        if (!arch) return;
        h.text(key);
        h.text("=");
        h.text(format_any(v));
        h.text("\n");
    });
    return h.digest();
}

std::uint64_t ExperimentConfig::full_digest() const {
    Fnv1a h;
    h.text(to_text());
    return h.digest();
}

ExperimentConfig desk_config() {
    ExperimentConfig c;
    c.lm_width = 16;
    c.lm_layers = 2;
    c.lm_heads = 4;
    c.lm_context = 128;
    c.enc_hidden = 128;
    // Code width 16 keeps K = 512 codes spread out; a slow EMA with frequent
    // sync stops early assignments from collapsing the table.
    c.ema_decay = 0.999;
    c.sync_decay = 0.9;
    c.sync_interval = 5;
    return c;
}

}  // namespace unicb
