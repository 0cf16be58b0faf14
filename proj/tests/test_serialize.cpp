#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "unicb/checkpoint.hpp"
#include "unicb/hash.hpp"
#include "unicb/paradigms.hpp"

using namespace unicb;

namespace {

ExperimentConfig small_config() {
    auto c = desk_config();
    c.codes = 16;
    c.train_images = 6;
    c.heldout_images = 2;
    c.text_samples = 16;
    c.rounds = 1;
    c.tok_steps_per_round = 2;
    c.lm_steps_per_round = 2;
    c.tok_batch = 2;
    c.lm_batch = 2;
    return c;
}

// A state whose optimizers and EMA statistics are no longer at their initial values.
TrainingState trained_state() {
    auto cfg = small_config();
    auto state = TrainingState::initialize(cfg);
    run_stage1(state, make_dataset(cfg));
    return state;
}

// Byte offset of the first payload byte of segment `name`.
std::size_t payload_offset(const Bytes& file, const std::string& name) {
    ByteReader r(file, "test");
    r.raw(8);
    r.u32();
    r.u64();
    r.u64();
    const auto count = r.u32();
    r.u64();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto n = r.str();
        const auto len = r.u64();
        if (n == name) return r.position();
        r.raw(len);
        r.u64();
    }
    throw std::runtime_error("segment not found: " + name);
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("unicb_test_" + name);
}

}  // namespace

TEST(Bytes, ScalarRoundTrip) {
    ByteWriter w;
    w.u8(7);
    w.u32(0xdeadbeef);
    w.u64(std::numeric_limits<std::uint64_t>::max());
    w.i64(-5);
    w.f64(-0.0);
    w.f64(std::numeric_limits<double>::denorm_min());
    w.f64s(std::vector<double>{1.5, -2.25});
    w.i32s(std::vector<int>{-1, 0, 9});
    w.str("héllo");
    ByteReader r(w.data(), "test");
    EXPECT_EQ(r.u8(), 7);
    EXPECT_EQ(r.u32(), 0xdeadbeefu);
    EXPECT_EQ(r.u64(), std::numeric_limits<std::uint64_t>::max());
    EXPECT_EQ(r.i64(), -5);
    const double z = r.f64();
    EXPECT_EQ(z, 0.0);
    EXPECT_TRUE(std::signbit(z));
    EXPECT_EQ(r.f64(), std::numeric_limits<double>::denorm_min());
    EXPECT_EQ(r.f64s(), (std::vector<double>{1.5, -2.25}));
    EXPECT_EQ(r.i32s(), (std::vector<int>{-1, 0, 9}));
    EXPECT_EQ(r.str(), "héllo");
    EXPECT_TRUE(r.done());
    EXPECT_THROW(r.u8(), TruncatedError);
}

TEST(Bytes, LittleEndianLayout) {
    ByteWriter w;
    w.u32(0x01020304);
    EXPECT_EQ(w.data(), (Bytes{4, 3, 2, 1}));
}

TEST(Container, RoundTripAndEveryErrorKind) {
    Container c;
    c.magic = kDatasetMagic;
    c.config_digest = 42;
    c.seed = 9;
    c.add("alpha", Bytes{1, 2, 3});
    c.add("beta", Bytes{});
    const auto file = encode_container(c);
    auto back = decode_container(file, kDatasetMagic, 1);
    EXPECT_EQ(back.segments, c.segments);
    EXPECT_EQ(back.config_digest, 42u);
    EXPECT_EQ(back.seed, 9u);
    EXPECT_THROW(back.segment("gamma"), FormatError);

    EXPECT_THROW(decode_container(file, kCheckpointMagic, 1), MagicError);
    EXPECT_THROW(decode_container(file, kDatasetMagic, 2), VersionError);
    for (std::size_t cut : {std::size_t{3}, std::size_t{20}, file.size() - 1}) {
        EXPECT_THROW(decode_container(std::span(file).first(cut), kDatasetMagic, 1), TruncatedError) << cut;
    }
    auto extra = file;
    extra.push_back(0);
    EXPECT_THROW(decode_container(extra, kDatasetMagic, 1), FormatError);
}

TEST(Container, FlippedByteNamesItsSegment) {
    Container c;
    c.magic = kDatasetMagic;
    c.add("alpha", Bytes{1, 2, 3});
    c.add("beta", Bytes{4, 5});
    const auto file = encode_container(c);
    auto expect_segment = [&](std::size_t offset, const std::string& segment) {
        auto bad = file;
        bad[offset] ^= 0x10;
        try {
            decode_container(bad, kDatasetMagic, 1);
            ADD_FAILURE() << "no error for a flip at " << offset;
        } catch (const ChecksumError& e) {
            EXPECT_EQ(e.segment(), segment) << offset;
        }
    };
    expect_segment(20, "header");
    expect_segment(payload_offset(file, "alpha") + 1, "alpha");
    expect_segment(payload_offset(file, "beta"), "beta");
    expect_segment(file.size() - 1, "file");
}

TEST(Checkpoint, RoundTripIsBitExact) {
    auto state = trained_state();
    ASSERT_GT(state.tok_opt.steps, 0);
    ASSERT_GT(state.lm_opt.steps, 0);
    auto back = decode_checkpoint(encode_checkpoint(state));
    EXPECT_TRUE(bit_equal(state, back));
    EXPECT_EQ(back.config, state.config);
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(state));
}

TEST(Checkpoint, FileRoundTrip) {
    auto state = trained_state();
    const auto path = temp_file("ckpt.bin");
    save_checkpoint(state, path);
    EXPECT_TRUE(bit_equal(load_checkpoint(path, &state.config), state));
    std::filesystem::remove(path);
}

TEST(Checkpoint, FlippedPayloadByteNamesTheSegment) {
    const auto file = encode_checkpoint(TrainingState::initialize(small_config()));
    for (const std::string seg : {"meta", "config", "codebook", "ema", "tokenizer", "lm", "lm_opt"}) {
        auto bad = file;
        bad[payload_offset(file, seg)] ^= 0x01;
        try {
            decode_checkpoint(bad);
            ADD_FAILURE() << seg;
        } catch (const ChecksumError& e) {
            EXPECT_EQ(e.segment(), seg);
            EXPECT_NE(std::string(e.what()).find(seg), std::string::npos);
        }
    }
}

TEST(Checkpoint, RejectsOtherArchitectures) {
    auto cfg = small_config();
    const auto file = encode_checkpoint(TrainingState::initialize(cfg));
    auto other = cfg;
    other.lm_width = 32;
    EXPECT_THROW(decode_checkpoint(file, &other), ConfigMismatchError);
    // Schedule keys do not change shapes and may differ.
    auto schedule = cfg;
    schedule.rounds = 7;
    schedule.lm_lr = 0.5;
    EXPECT_NO_THROW(decode_checkpoint(file, &schedule));
    auto ds = encode_dataset(make_dataset(cfg));
    EXPECT_THROW(decode_checkpoint(ds), MagicError);
}

TEST(Checkpoint, MissingFile) {
    EXPECT_THROW(load_checkpoint(temp_file("does_not_exist.bin")), MissingArtifactError);
}

TEST(Checkpoint, CloneIsDeep) {
    auto state = TrainingState::initialize(small_config());
    auto copy = clone(state);
    EXPECT_TRUE(bit_equal(state, copy));
    copy.lm.token_embedding()->data[0] += 1.0;
    copy.tokenizer.parameters()[0]->data[0] += 1.0;
    EXPECT_FALSE(bit_equal(state, copy));
    EXPECT_NE(state.lm.token_embedding()->data[0], copy.lm.token_embedding()->data[0]);
}

TEST(Dataset, RoundTripAndDeterminism) {
    auto cfg = small_config();
    auto a = make_dataset(cfg), b = make_dataset(cfg);
    EXPECT_EQ(encode_dataset(a), encode_dataset(b));
    const auto path = temp_file("data.bin");
    save_dataset(a, path);
    auto back = load_dataset(path);
    std::filesystem::remove(path);
    ASSERT_EQ(back.train.size(), a.train.size());
    ASSERT_EQ(back.heldout.size(), a.heldout.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        EXPECT_EQ(back.train[i].image, a.train[i].image);
        EXPECT_EQ(back.train[i].caption, a.train[i].caption);
    }
    EXPECT_EQ(back.digest(), a.digest());
    auto other = cfg;
    other.seed = 2;
    EXPECT_NE(make_dataset(other).digest(), a.digest());
}

TEST(Dataset, HeldoutImagesDifferFromTraining) {
    auto cfg = small_config();
    cfg.train_images = 20;
    cfg.heldout_images = 10;
    auto d = make_dataset(cfg);
    for (const auto& h : d.heldout) {
        for (const auto& t : d.train) EXPECT_NE(h.image, t.image);
    }
}

TEST(Dataset, CorruptionIsDetected) {
    const auto file = encode_dataset(make_dataset(small_config()));
    auto bad = file;
    bad[payload_offset(file, "heldout") + 10] ^= 0x40;
    try {
        decode_dataset(bad);
        ADD_FAILURE();
    } catch (const ChecksumError& e) {
        EXPECT_EQ(e.segment(), "heldout");
    }
    EXPECT_THROW(decode_dataset(std::span(file).first(file.size() / 2)), TruncatedError);
}

TEST(Hash, FnvKnownVectors) {
    Fnv1a empty;
    EXPECT_EQ(empty.digest(), 0xcbf29ce484222325ULL);
    Fnv1a a;
    a.text("a");
    EXPECT_EQ(a.digest(), 0xaf63dc4c8601ec8cULL);
}
