#include "asap/pipeline.hpp"

#include "asap/errors.hpp"
#include "asap/training.hpp"

namespace asap {

nlohmann::json ProviderConfig::to_json() const {
    nlohmann::json j{{"kind", kind}, {"min_count", min_count}};
    if (!embeddings_path.empty()) j["embeddings_path"] = embeddings_path;
    return j;
}

ProviderConfig ProviderConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("provider: expected a JSON object");
    ProviderConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "kind")
            c.kind = value.get<std::string>();
        else if (key == "embeddings_path")
            c.embeddings_path = value.get<std::string>();
        else if (key == "min_count")
            c.min_count = value.get<std::size_t>();
        else
            throw ConfigError("provider: unknown key '" + key + "'");
    }
    if (c.kind != "bag_of_tokens" && c.kind != "file")
        throw ConfigError("provider.kind must be 'bag_of_tokens' or 'file', got '" + c.kind + "'");
    if (c.kind == "file" && c.embeddings_path.empty())
        throw ConfigError("provider.embeddings_path is required for the file provider");
    return c;
}

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config,
                                                 const std::vector<DialogueSession>& train, std::size_t dim,
                                                 std::uint64_t seed) {
    if (config.kind == "file") {
        auto store = std::make_shared<const EmbeddingStore>(EmbeddingStore::read(config.embeddings_path));
        if (store->dim() != dim)
            throw ConfigError("embedding file " + config.embeddings_path + " has dim " + std::to_string(store->dim()) +
                              " but d_model is " + std::to_string(dim));
        return std::make_unique<FileEmbeddingProvider>(std::move(store));
    }
    if (config.kind == "bag_of_tokens") {
        if (train.empty()) throw ContractError("bag-of-tokens provider needs a non-empty training split");
        Rng rng(provider_seed(seed));
        return std::make_unique<BagOfTokensEncoder>(build_vocabulary(train, config.min_count), dim, rng);
    }
    throw ConfigError("unknown provider kind '" + config.kind + "'");
}

Estimator make_estimator(const ModelConfig& model, const ProviderConfig& provider,
                         const std::vector<DialogueSession>& train, std::uint64_t seed) {
    return Estimator(model, make_provider(provider, train, model.d_model, seed), seed);
}

CorpusPredictions predict_corpus(const Estimator& estimator, const std::vector<DialogueSession>& dialogues) {
    CorpusPredictions out;
    out.reserve(dialogues.size());
    for (const auto& d : dialogues) out.push_back(estimator.predict(d));
    return out;
}

LabeledTurns collect_labeled(const std::vector<DialogueSession>& dialogues, const CorpusPredictions& predictions) {
    if (dialogues.size() != predictions.size()) throw ContractError("collect_labeled: size mismatch");
    LabeledTurns out;
    for (std::size_t i = 0; i < dialogues.size(); ++i) {
        const auto& turns = dialogues[i].turns;
        if (turns.size() != predictions[i].size()) throw ContractError("collect_labeled: turn count mismatch");
        for (std::size_t t = 0; t < turns.size(); ++t) {
            if (!turns[t].satisfaction) continue;
            out.golds.push_back(*turns[t].satisfaction);
            out.predictions.push_back(predictions[i][t].predicted_class);
            out.turn_numbers.push_back(t + 1);
            out.dialogue_index.push_back(i);
            if (predictions[i][t].contribution) out.contributions.push_back(*predictions[i][t].contribution);
        }
    }
    return out;
}

EvalReport evaluate_corpus(const Estimator& estimator, const std::vector<DialogueSession>& dialogues) {
    const auto labeled = collect_labeled(dialogues, predict_corpus(estimator, dialogues));
    return evaluate(labeled.predictions, labeled.golds, estimator.config().num_classes);
}

std::vector<double> per_dialogue_f1(const std::vector<DialogueSession>& dialogues,
                                    const CorpusPredictions& predictions, std::size_t num_classes) {
    if (dialogues.size() != predictions.size()) throw ContractError("per_dialogue_f1: size mismatch");
    std::vector<double> out;
    for (std::size_t i = 0; i < dialogues.size(); ++i) {
        std::vector<std::size_t> p, g;
        for (std::size_t t = 0; t < dialogues[i].turns.size(); ++t)
            if (const auto& s = dialogues[i].turns[t].satisfaction) {
                g.push_back(*s);
                p.push_back(predictions[i].at(t).predicted_class);
            }
        if (!g.empty()) out.push_back(evaluate(p, g, num_classes).macro_f1);
    }
    return out;
}

}  // namespace asap
