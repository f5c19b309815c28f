#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "asap/checkpoint.hpp"
#include "asap/errors.hpp"
#include "asap/pipeline.hpp"
#include "asap/training.hpp"

using namespace asap;

namespace {

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

std::vector<DialogueSession> corpus(std::size_t actions = 0) {
    SynthSpec spec;
    spec.num_dialogues = 12;
    spec.persistence = 0.6;
    spec.num_actions = actions;
    return synthesize(spec);
}

void train_a_little(Estimator& est, const std::vector<DialogueSession>& ds) {
    TrainConfig cfg;
    Trainer trainer(est, cfg, 10);
    std::vector<const DialogueSession*> batch;
    for (const auto& d : ds) batch.push_back(&d);
    for (int i = 0; i < 3; ++i) trainer.step(batch);
}

void expect_same_values(const Tensor& x, const Tensor& y) {
    ASSERT_EQ(x.defined(), y.defined());
    if (!x.defined()) return;
    ASSERT_EQ(x.shape(), y.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x.values()[i], y.values()[i]) << i;
}

void expect_identical_outputs(const Estimator& a, const Estimator& b, const DialogueSession& d) {
    const auto oa = a.forward(d, {});
    const auto ob = b.forward(d, {});
    expect_same_values(oa.p_use, ob.p_use);
    expect_same_values(oa.intensity, ob.intensity);
    expect_same_values(oa.p_uar, ob.p_uar);
}

}  // namespace

TEST(CheckpointFormat, SerializeParseRoundTrip) {
    const nlohmann::json config{{"hello", "world"}, {"n", 3}};
    const std::vector<std::pair<std::string, Tensor>> tensors{
        {"a", Tensor::matrix({{1.5, -2}, {0.25, 3}})}, {"b", Tensor::from({3}, {1, 2, 3})}, {"s", Tensor::scalar(7)}};
    const auto bytes = serialize_checkpoint(config, tensors);
    EXPECT_EQ(bytes.substr(0, 8), "ASAPCKPT");
    const auto back = parse_checkpoint(bytes);
    EXPECT_EQ(back.config, config);
    ASSERT_EQ(back.tensors.size(), 3u);
    EXPECT_EQ(back.tensors[0].first, "a");
    EXPECT_EQ(back.tensors[0].second.shape(), (Shape{2, 2}));
    EXPECT_EQ(back.tensors[0].second.at(1, 0), 0.25);
    EXPECT_EQ(back.tensors[2].second.rank(), 0u);
    EXPECT_EQ(back.tensors[2].second.item(), 7.0);
}

TEST(CheckpointFormat, ValuesAreStoredAsFloat32) {
    const auto bytes = serialize_checkpoint(nlohmann::json::object(), {{"x", Tensor::scalar(0.1)}});
    const auto back = parse_checkpoint(bytes);
    EXPECT_EQ(back.tensors[0].second.item(), static_cast<double>(0.1f));
}

TEST(CheckpointFormat, CorruptInputIsRejected) {
    const auto bytes = serialize_checkpoint({{"k", 1}}, {{"x", Tensor::from({4}, {1, 2, 3, 4})}});
    EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 2)), ParseError);
    EXPECT_THROW(parse_checkpoint(bytes.substr(0, 10)), ParseError);
    auto bad = bytes;
    bad[3] = 'Z';
    EXPECT_THROW(parse_checkpoint(bad), ParseError);
    auto version = bytes;
    version[8] = 9;
    EXPECT_THROW(parse_checkpoint(version), ParseError);
    EXPECT_THROW(read_checkpoint("/nonexistent/model.ckpt"), IoError);
}

TEST(EstimatorCheckpoint, RoundTripIsBitIdenticalAtFloat32) {
    const auto ds = corpus();
    auto est = make_estimator(ModelConfig::desk(), {}, ds, 42);
    train_a_little(est, ds);
    auto params = est.all_parameters();
    round_to_float32(params);
    const auto path = temp_path("asap_ckpt_roundtrip.ckpt");
    save_estimator(path, est);
    const auto loaded = load_estimator(path);
    for (const auto& d : ds) expect_identical_outputs(est, loaded, d);
    EXPECT_EQ(loaded.all_parameters().size(), est.all_parameters().size());

    // Saving the loaded model reproduces the file byte for byte.
    const auto again = temp_path("asap_ckpt_roundtrip2.ckpt");
    save_estimator(again, loaded);
    std::ifstream a(path, std::ios::binary), b(again, std::ios::binary);
    EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
    std::filesystem::remove(path);
    std::filesystem::remove(again);
}

TEST(EstimatorCheckpoint, MultiTaskAndAblatedModelsRoundTrip) {
    const auto ds = corpus(4);
    for (bool hawkes : {true, false}) {
        auto cfg = ModelConfig::tiny();
        cfg.hawkes = hawkes;
        cfg.num_actions = 4;
        cfg.gamma = 0.5;
        auto est = make_estimator(cfg, {}, ds, 3);
        auto params = est.all_parameters();
        round_to_float32(params);
        const auto path = temp_path("asap_ckpt_mt.ckpt");
        save_estimator(path, est);
        const auto loaded = load_estimator(path);
        EXPECT_EQ(loaded.config().hawkes, hawkes);
        EXPECT_EQ(loaded.config().num_actions, 4u);
        EXPECT_EQ(loaded.config().gamma, 0.5);
        expect_identical_outputs(est, loaded, ds[0]);
        std::filesystem::remove(path);
    }
}

TEST(EstimatorCheckpoint, FileProviderUsesEmbeddingOverride) {
    const auto ds = corpus();
    const auto emb = temp_path("asap_ckpt_emb.bin");
    random_embedding_store(ds, 8, 5).write(emb);
    ProviderConfig provider;
    provider.kind = "file";
    provider.embeddings_path = "/nonexistent/elsewhere.bin";
    auto store = std::make_shared<EmbeddingStore>(EmbeddingStore::read(emb));
    Estimator est(ModelConfig::tiny(), std::make_unique<FileEmbeddingProvider>(store), 8);
    auto params = est.all_parameters();
    round_to_float32(params);
    const auto path = temp_path("asap_ckpt_file.ckpt");
    save_estimator(path, est, provider.to_json());
    EXPECT_THROW(load_estimator(path), IoError);
    const auto loaded = load_estimator(path, emb);
    EXPECT_EQ(loaded.provider().kind(), "file");
    expect_identical_outputs(est, loaded, ds[1]);
    std::filesystem::remove(path);
    std::filesystem::remove(emb);
}

TEST(EstimatorCheckpoint, ConfigDriftIsConfigError) {
    const auto ds = corpus();
    auto est = make_estimator(ModelConfig::tiny(), {}, ds, 1);
    const auto path = temp_path("asap_ckpt_drift.ckpt");
    save_estimator(path, est);
    auto contents = read_checkpoint(path);

    auto wider = contents.config;
    wider["model"]["mlp_hidden"] = 9;
    write_checkpoint(path, wider, contents.tensors);
    EXPECT_THROW(load_estimator(path), ConfigError);

    auto fewer = contents.tensors;
    fewer.erase(fewer.begin());
    write_checkpoint(path, contents.config, fewer);
    EXPECT_THROW(load_estimator(path), ConfigError);

    auto renamed = contents.tensors;
    renamed.front().first = "turn_encoder.bogus";
    write_checkpoint(path, contents.config, renamed);
    EXPECT_THROW(load_estimator(path), ConfigError);
    std::filesystem::remove(path);
}
