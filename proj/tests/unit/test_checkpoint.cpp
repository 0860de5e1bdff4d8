#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "resunet/model/checkpoint.hpp"
#include "resunet/model/resunet.hpp"

using namespace resunet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / ("resunet_ckpt_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir;
}

CheckpointError::Kind error_kind(const std::string& bytes) {
    try {
        decode_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "decode accepted malformed bytes";
    return CheckpointError::Kind::io;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto g = ModelGraph::build(0.25);
    auto store = init_params(g, 7);
    store.at("level3.bn5.running_var")[2] = 0.123456789f;
    const auto path = temp_dir() / "roundtrip.ckpt";
    save_checkpoint(store, path);
    const auto loaded = load_checkpoint(path, g);
    EXPECT_TRUE(bit_identical(store, loaded));
    EXPECT_EQ(loaded.meta("bn_epsilon"), 1e-5);
    EXPECT_EQ(loaded.meta("bn_momentum"), 0.9);
    EXPECT_EQ(loaded.meta("width_scale"), 0.25);
    EXPECT_EQ(graph_for(loaded).width_scale, 0.25);
}

TEST(Checkpoint, LayoutStartsWithMagicAndVersion) {
    const auto bytes = encode_checkpoint(init_params(ModelGraph::build(0.125), 1));
    ASSERT_GE(bytes.size(), 12u);
    EXPECT_EQ(bytes.substr(0, 8), std::string("RESUNET\0", 8));
    EXPECT_EQ(bytes[8], 1);
    EXPECT_EQ(bytes[9], 0);
}

TEST(Checkpoint, FloatsAreLittleEndian) {
    ParamStore store;
    store.add("x", ParamKind::learnable, Tensor<float>({1, 1, 1, 1}, 1.0f));
    const auto bytes = encode_checkpoint(store);
    // 1.0f == 0x3F800000, written low byte first at the end of the file.
    EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 4]), 0x00);
    EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 1]), 0x3F);
    EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 2]), 0x80);
}

TEST(Checkpoint, DistinctDiagnostics) {
    const auto good = encode_checkpoint(init_params(ModelGraph::build(0.125), 1));

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_EQ(error_kind(bad_magic), CheckpointError::Kind::bad_magic);

    EXPECT_EQ(error_kind(good.substr(0, good.size() - 3)), CheckpointError::Kind::truncated);
    EXPECT_EQ(error_kind(good.substr(0, 10)), CheckpointError::Kind::truncated);
    EXPECT_EQ(error_kind(good.substr(0, 4)), CheckpointError::Kind::bad_magic);

    std::string version = good;
    version[8] = 9;
    EXPECT_EQ(error_kind(version), CheckpointError::Kind::unsupported_version);

    EXPECT_EQ(error_kind(good + "x"), CheckpointError::Kind::malformed);
}

TEST(Checkpoint, GraphMismatchRejected) {
    const auto path = temp_dir() / "mismatch.ckpt";
    save_checkpoint(init_params(ModelGraph::build(0.125), 1), path);
    try {
        load_checkpoint(path, ModelGraph::build(0.25));
        FAIL() << "expected graph mismatch";
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::graph_mismatch);
    }
}

TEST(Checkpoint, MissingFileIsIoError) {
    try {
        load_checkpoint(temp_dir() / "does_not_exist.ckpt");
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::io);
    }
}

TEST(Checkpoint, ReloadedModelForwardsIdentically) {
    const auto g = ModelGraph::build(0.125);
    const auto store = init_params(g, 7);
    const auto path = temp_dir() / "seed7.ckpt";
    save_checkpoint(store, path);
    const auto loaded = load_checkpoint(path, g);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> d(0.f, 1.f);
    Tensor<float> x({1, 3, 64, 64});
    for (auto& v : x.data()) v = d(rng);
    EXPECT_TRUE(bit_identical(forward(g, store, x, Mode::inference), forward(g, loaded, x, Mode::inference)));
}
