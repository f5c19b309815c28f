#pragma once

// Glue between data, estimator and metrics used by the CLI and the test suites.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asap/data.hpp"
#include "asap/metrics.hpp"
#include "asap/model.hpp"
#include "asap/utterance.hpp"

namespace asap {

struct ProviderConfig {
    /// "bag_of_tokens" or "file".
    std::string kind = "bag_of_tokens";
    std::string embeddings_path;
    std::size_t min_count = 2;

    nlohmann::json to_json() const;
    static ProviderConfig from_json(const nlohmann::json& j);
};

/// Bag-of-tokens providers build their vocabulary from `train`.
std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config,
                                                 const std::vector<DialogueSession>& train, std::size_t dim,
                                                 std::uint64_t seed);

Estimator make_estimator(const ModelConfig& model, const ProviderConfig& provider,
                         const std::vector<DialogueSession>& train, std::uint64_t seed);

using CorpusPredictions = std::vector<std::vector<TurnPrediction>>;

CorpusPredictions predict_corpus(const Estimator& estimator, const std::vector<DialogueSession>& dialogues);

/// Labelled turns flattened across a corpus.
struct LabeledTurns {
    std::vector<std::size_t> predictions;
    std::vector<std::size_t> golds;
    std::vector<std::size_t> turn_numbers;  // 1-based depth
    std::vector<double> contributions;      // empty without Hawkes
    std::vector<std::size_t> dialogue_index;
};

LabeledTurns collect_labeled(const std::vector<DialogueSession>& dialogues, const CorpusPredictions& predictions);

/// Metrics over every labelled turn of the corpus.
EvalReport evaluate_corpus(const Estimator& estimator, const std::vector<DialogueSession>& dialogues);

/// Macro-F1 of each dialogue with at least one labelled turn (others are skipped).
std::vector<double> per_dialogue_f1(const std::vector<DialogueSession>& dialogues,
                                    const CorpusPredictions& predictions, std::size_t num_classes);

}  // namespace asap
