#include "asap/config.hpp"

#include <set>
#include <string>

#include "asap/errors.hpp"

namespace asap {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

}  // namespace

void to_json(json& j, const EncoderConfig& c) {
    j = json{{"d_model", c.d_model},
             {"num_heads", c.num_heads},
             {"num_layers", c.num_layers},
             {"ffn_dim", c.ffn_dim},
             {"dropout", c.dropout}};
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"num_classes", c.num_classes},
             {"num_actions", c.num_actions},
             {"d_model", c.d_model},
             {"turn_encoder", c.turn_encoder},
             {"score_encoder", c.score_encoder},
             {"mlp_hidden", c.mlp_hidden},
             {"mlp_dropout", c.mlp_dropout},
             {"beta", c.beta},
             {"gamma", c.gamma},
             {"hawkes", c.hawkes},
             {"shared_intensity_mlp", c.shared_intensity_mlp},
             {"teacher_forcing", c.teacher_forcing}};
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"peak_lr", c.peak_lr},
             {"warmup_proportion", c.warmup_proportion},
             {"epochs", c.epochs},
             {"batch_size", c.batch_size},
             {"weight_decay", c.weight_decay},
             {"seed", c.seed}};
}

void to_json(json& j, const SynthSpec& c) {
    j = json{{"num_dialogues", c.num_dialogues},
             {"min_turns", c.min_turns},
             {"max_turns", c.max_turns},
             {"num_classes", c.num_classes},
             {"num_actions", c.num_actions},
             {"persistence", c.persistence},
             {"lexical_strength", c.lexical_strength},
             {"action_coupling", c.action_coupling},
             {"action_lexical_strength", c.action_lexical_strength},
             {"user_tokens", c.user_tokens},
             {"system_tokens", c.system_tokens},
             {"history_weights", c.history_weights},
             {"seed", c.seed}};
}

EncoderConfig encoder_config_from_json(const json& j, const EncoderConfig& defaults) {
    const std::string where = "encoder";
    reject_unknown(j, {"d_model", "num_heads", "num_layers", "ffn_dim", "dropout"}, where);
    EncoderConfig c = defaults;
    read(j, "d_model", c.d_model, where);
    read(j, "num_heads", c.num_heads, where);
    read(j, "num_layers", c.num_layers, where);
    read(j, "ffn_dim", c.ffn_dim, where);
    read(j, "dropout", c.dropout, where);
    return c;
}

ModelConfig model_config_from_json(const json& j) {
    const std::string where = "model";
    reject_unknown(j,
                   {"num_classes", "num_actions", "d_model", "turn_encoder", "score_encoder", "mlp_hidden",
                    "mlp_dropout", "beta", "gamma", "hawkes", "shared_intensity_mlp", "teacher_forcing"},
                   where);
    ModelConfig c;
    read(j, "num_classes", c.num_classes, where);
    read(j, "num_actions", c.num_actions, where);
    read(j, "d_model", c.d_model, where);
    read(j, "mlp_hidden", c.mlp_hidden, where);
    read(j, "mlp_dropout", c.mlp_dropout, where);
    read(j, "beta", c.beta, where);
    read(j, "gamma", c.gamma, where);
    read(j, "hawkes", c.hawkes, where);
    read(j, "shared_intensity_mlp", c.shared_intensity_mlp, where);
    read(j, "teacher_forcing", c.teacher_forcing, where);
    EncoderConfig base = c.turn_encoder;
    base.d_model = c.d_model;
    base.ffn_dim = 4 * c.d_model;
    c.turn_encoder = j.contains("turn_encoder") ? encoder_config_from_json(j["turn_encoder"], base) : base;
    c.score_encoder = j.contains("score_encoder") ? encoder_config_from_json(j["score_encoder"], base) : base;
    c.validate();
    return c;
}

TrainConfig train_config_from_json(const json& j) {
    const std::string where = "train";
    reject_unknown(j, {"peak_lr", "warmup_proportion", "epochs", "batch_size", "weight_decay", "seed"}, where);
    TrainConfig c;
    read(j, "peak_lr", c.peak_lr, where);
    read(j, "warmup_proportion", c.warmup_proportion, where);
    read(j, "epochs", c.epochs, where);
    read(j, "batch_size", c.batch_size, where);
    read(j, "weight_decay", c.weight_decay, where);
    read(j, "seed", c.seed, where);
    c.validate();
    return c;
}

SynthSpec synth_spec_from_json(const json& j) {
    const std::string where = "synth";
    reject_unknown(j,
                   {"num_dialogues", "min_turns", "max_turns", "num_classes", "num_actions", "persistence",
                    "lexical_strength", "action_coupling", "action_lexical_strength", "user_tokens", "system_tokens",
                    "history_weights", "seed"},
                   where);
    SynthSpec c;
    read(j, "num_dialogues", c.num_dialogues, where);
    read(j, "min_turns", c.min_turns, where);
    read(j, "max_turns", c.max_turns, where);
    read(j, "num_classes", c.num_classes, where);
    read(j, "num_actions", c.num_actions, where);
    read(j, "persistence", c.persistence, where);
    read(j, "lexical_strength", c.lexical_strength, where);
    read(j, "action_coupling", c.action_coupling, where);
    read(j, "action_lexical_strength", c.action_lexical_strength, where);
    read(j, "user_tokens", c.user_tokens, where);
    read(j, "system_tokens", c.system_tokens, where);
    read(j, "history_weights", c.history_weights, where);
    read(j, "seed", c.seed, where);
    c.validate();
    return c;
}

}  // namespace asap
