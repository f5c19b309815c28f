#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "asap/checkpoint.hpp"
#include "asap/config.hpp"
#include "asap/errors.hpp"
#include "asap/metrics.hpp"

namespace asap::cli {

using nlohmann::json;
namespace fs = std::filesystem;

RatingMap RunConfig::ratings() const {
    return rating_map ? RatingMap(*rating_map) : RatingMap::for_classes(model.num_classes);
}

json RunConfig::to_json() const {
    json data_json = json::object();
    if (!data.corpus.empty()) {
        data_json["corpus"] = data.corpus;
        data_json["fractions"] = data.fractions;
    } else {
        data_json["train"] = data.train;
        if (!data.validation.empty()) data_json["validation"] = data.validation;
        if (!data.test.empty()) data_json["test"] = data.test;
    }
    json j{{"model", model}, {"train", train}, {"provider", provider.to_json()}, {"data", data_json},
           {"output_dir", output_dir}};
    if (rating_map) j["rating_map"] = *rating_map;
    return j;
}

void apply_overrides(json& config, const std::vector<std::string>& assignments) {
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not of the form key=value");
        std::string pointer;
        std::stringstream keys(a.substr(0, eq));
        for (std::string part; std::getline(keys, part, '.');) {
            if (part.empty()) throw ConfigError("override '" + a + "' has an empty key segment");
            pointer += "/" + part;
        }
        const std::string raw = a.substr(eq + 1);
        json value = json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        config[json::json_pointer(pointer)] = value;
    }
}

RunConfig parse_run_config(const json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    RunConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "model") {
            c.model = model_config_from_json(value);
        } else if (key == "train") {
            c.train = train_config_from_json(value);
        } else if (key == "provider") {
            c.provider = ProviderConfig::from_json(value);
        } else if (key == "output_dir") {
            c.output_dir = value.get<std::string>();
        } else if (key == "rating_map") {
            c.rating_map = value.get<std::array<std::size_t, 5>>();
        } else if (key == "data") {
            if (!value.is_object()) throw ConfigError("data: expected a JSON object");
            for (const auto& [k, v] : value.items()) {
                if (k == "corpus")
                    c.data.corpus = v.get<std::string>();
                else if (k == "fractions")
                    c.data.fractions = v.get<std::array<double, 3>>();
                else if (k == "train")
                    c.data.train = v.get<std::string>();
                else if (k == "validation")
                    c.data.validation = v.get<std::string>();
                else if (k == "test")
                    c.data.test = v.get<std::string>();
                else
                    throw ConfigError("data: unknown key '" + k + "'");
            }
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    if (c.data.corpus.empty() && c.data.train.empty())
        throw ConfigError("data: either 'corpus' or 'train' must be given");
    if (!c.data.corpus.empty() && !c.data.train.empty())
        throw ConfigError("data: 'corpus' and 'train' are mutually exclusive");
    if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
    if (c.rating_map && RatingMap(*c.rating_map).num_classes() != c.model.num_classes)
        throw ConfigError("rating_map yields " + std::to_string(RatingMap(*c.rating_map).num_classes()) +
                          " classes but model.num_classes is " + std::to_string(c.model.num_classes));
    return c;
}

namespace {

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("ASAP_SEED");
    if (!s || !*s) return std::nullopt;
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used != std::string(s).size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("ASAP_SEED is not an unsigned integer: '") + s + "'");
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

void echo_config(const fs::path& dir, const json& effective) {
    write_text(dir / "effective_config.json", effective.dump(2) + "\n");
}

std::optional<fs::path> optional_path(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const std::string& spec_path, const std::vector<std::string>& overrides, const std::string& out_path,
              std::ostream& out) {
    json j = spec_path.empty() ? json::object() : read_json_file(spec_path);
    apply_overrides(j, overrides);
    if (auto seed = env_seed()) j["seed"] = *seed;
    const SynthSpec spec = synth_spec_from_json(j);
    const auto dialogues = synthesize(spec);

    const fs::path path(out_path);
    std::ostringstream os;
    write_dialogues(os, dialogues, RatingMap::for_classes(spec.num_classes));
    write_text(path, os.str());
    json effective = spec;
    write_text(fs::path(path).replace_extension(".config.json"), effective.dump(2) + "\n");
    out << "wrote " << dialogues.size() << " dialogues to " << path.string() << "\n";
    return kSuccess;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& output_dir_flag, std::ostream& out, std::ostream& err) {
    json j = load_config_json(config_path, overrides);
    if (!output_dir_flag.empty()) j["output_dir"] = output_dir_flag;
    const RunConfig config = parse_run_config(j);
    const DatasetSplits splits = load_splits(config);

    Estimator estimator = make_estimator(config.model, config.provider, splits.train, config.train.seed);
    if (auto problems = preflight(estimator, splits); !problems.empty()) {
        err << "pre-flight validation failed with " << problems.size() << " problem(s):\n";
        for (const auto& p : problems) err << "  " << p << "\n";
        return kValidationError;
    }

    const fs::path dir(config.output_dir);
    fs::create_directories(dir);
    echo_config(dir, config.to_json());

    TrainOptions options;
    options.checkpoint_path = dir / "model.ckpt";
    options.report_path = dir / "train_report.jsonl";
    if (config.provider.kind == "file") options.provider_config["embeddings_path"] = config.provider.embeddings_path;
    options.on_epoch = [&err](const EpochRecord& r) {
        err << "epoch " << r.epoch << " loss_use=" << r.loss_use << " loss_uar=" << r.loss_uar
            << " loss=" << r.loss_joint;
        if (r.validation) err << " val_f1=" << r.validation->macro_f1 << " val_acc=" << r.validation->accuracy;
        err << "\n";
    };
    const TrainReport report = train(estimator, splits, config.train, options);

    json summary{{"selected_epoch", report.selected_epoch}, {"checkpoint", report.checkpoint_path}};
    if (!splits.test.empty()) {
        const auto test = evaluate_corpus(estimator, splits.test);
        summary["test_accuracy"] = test.accuracy;
        summary["test_macro_f1"] = test.macro_f1;
    }
    out << summary.dump() << "\n";
    return kSuccess;
}

// ---------------------------------------------------------------------------
// predict / eval

json prediction_json(const std::string& id, std::size_t turn, const TurnPrediction& p) {
    json j{{"dialogue_id", id},
           {"turn", turn + 1},
           {"p_use", p.p_use},
           {"intensity", p.intensity},
           {"predicted_class", p.predicted_class}};
    j["contribution"] = p.contribution ? json(*p.contribution) : json(nullptr);
    if (!p.p_uar.empty()) {
        j["p_uar"] = p.p_uar;
        j["predicted_action"] = *p.predicted_action;
    }
    return j;
}

struct LoadedModel {
    Estimator estimator;
    std::vector<DialogueSession> dialogues;
};

LoadedModel load_for_inference(const std::string& checkpoint, const std::string& data, const std::string& embeddings,
                               const std::optional<std::array<std::size_t, 5>>& rating_map) {
    Estimator estimator = load_estimator(checkpoint, optional_path(embeddings));
    const std::size_t k = estimator.config().num_classes;
    const RatingMap map = rating_map ? RatingMap(*rating_map) : RatingMap::for_classes(k);
    if (map.num_classes() != k)
        throw ConfigError("rating map yields " + std::to_string(map.num_classes()) + " classes but the checkpoint has " +
                          std::to_string(k));
    auto dialogues = load_dialogues(data, map);
    return {std::move(estimator), std::move(dialogues)};
}

void require_coverage(const Estimator& estimator, const std::vector<DialogueSession>& dialogues) {
    std::vector<std::string> problems;
    for (const auto& d : dialogues)
        for (auto& p : estimator.validate(d)) problems.push_back(std::move(p));
    if (problems.empty()) return;
    std::string msg = std::to_string(problems.size()) + " problem(s) with the input data:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
}

int cmd_predict(const std::string& checkpoint, const std::string& data, const std::string& embeddings,
                const std::string& out_path, std::ostream& out) {
    auto loaded = load_for_inference(checkpoint, data, embeddings, std::nullopt);
    for (const auto& d : loaded.dialogues)
        for (const auto& key : loaded.estimator.provider().missing_keys(d))
            throw LookupError("no embedding for " + key);

    std::ostringstream os;
    for (const auto& d : loaded.dialogues) {
        const auto preds = loaded.estimator.predict(d);
        for (std::size_t t = 0; t < preds.size(); ++t) os << prediction_json(d.id, t, preds[t]).dump() << "\n";
    }
    if (out_path.empty() || out_path == "-") {
        out << os.str();
    } else {
        write_text(out_path, os.str());
        // Echoed next to the output file, like synth, so a run directory's training config is left alone.
        const json effective{{"command", "predict"}, {"checkpoint", checkpoint}, {"data", data}, {"embeddings", embeddings}};
        write_text(fs::path(out_path).replace_extension(".config.json"), effective.dump(2) + "\n");
    }
    return kSuccess;
}

// Predicted class per (dialogue, 1-based turn) from a predictions file.
std::map<std::pair<std::string, std::size_t>, std::size_t> read_predictions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::map<std::pair<std::string, std::size_t>, std::size_t> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            out[{j.at("dialogue_id").get<std::string>(), j.at("turn").get<std::size_t>()}] =
                j.at("predicted_class").get<std::size_t>();
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
        }
    }
    return out;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& embeddings,
             const std::string& output_dir, bool per_turn, bool contribution, const std::string& compare,
             std::size_t min_turn, std::ostream& out) {
    auto loaded = load_for_inference(checkpoint, data, embeddings, std::nullopt);
    require_coverage(loaded.estimator, loaded.dialogues);
    const std::size_t k = loaded.estimator.config().num_classes;
    if (contribution && !loaded.estimator.config().hawkes)
        throw ConfigError("--contribution needs a model with the Hawkes head enabled");

    const auto predictions = predict_corpus(loaded.estimator, loaded.dialogues);
    const auto labeled = collect_labeled(loaded.dialogues, predictions);
    if (labeled.golds.empty()) throw ConfigError(data + ": no labelled turns to evaluate");
    EvalReport report = evaluate(labeled.predictions, labeled.golds, k);
    if (per_turn)
        report.per_turn = per_turn_breakdown(labeled.turn_numbers, labeled.predictions, labeled.golds, k, min_turn);
    if (contribution) report.contribution = summarize(labeled.contributions);

    if (!compare.empty()) {
        const auto other = read_predictions(compare);
        CorpusPredictions theirs(loaded.dialogues.size());
        for (std::size_t i = 0; i < loaded.dialogues.size(); ++i) {
            const auto& d = loaded.dialogues[i];
            for (std::size_t t = 0; t < d.turns.size(); ++t) {
                TurnPrediction p;
                if (d.turns[t].satisfaction) {
                    auto it = other.find({d.id, t + 1});
                    if (it == other.end())
                        throw LookupError(compare + ": no prediction for (dialogue_id=" + d.id +
                                          ", turn=" + std::to_string(t + 1) + ")");
                    if (it->second >= k) throw ConfigError(compare + ": predicted class out of range for " + d.id);
                    p.predicted_class = it->second;
                }
                theirs[i].push_back(std::move(p));
            }
        }
        const auto a = per_dialogue_f1(loaded.dialogues, predictions, k);
        const auto b = per_dialogue_f1(loaded.dialogues, theirs, k);
        report.comparison = paired_t_test(a, b);
    }

    const fs::path dir(output_dir);
    fs::create_directories(dir);
    write_text(dir / "eval_report.json", report.to_json().dump(2) + "\n");
    write_text(dir / "eval_report.csv", report.to_csv());
    if (contribution) {
        std::ostringstream os;
        os << "dialogue_id,turn,gold,predicted,contribution\n";
        std::size_t c = 0;
        for (std::size_t i = 0; i < labeled.golds.size(); ++i)
            os << loaded.dialogues[labeled.dialogue_index[i]].id << ',' << labeled.turn_numbers[i] << ','
               << labeled.golds[i] << ',' << labeled.predictions[i] << ',' << labeled.contributions[c++] << "\n";
        write_text(dir / "contributions.csv", os.str());
    }
    echo_config(dir, json{{"command", "eval"},
                          {"checkpoint", checkpoint},
                          {"data", data},
                          {"embeddings", embeddings},
                          {"per_turn", per_turn},
                          {"contribution", contribution},
                          {"compare", compare},
                          {"min_turn", min_turn}});
    out << report.to_json().dump() << "\n";
    return kSuccess;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const std::string& config_path, const std::vector<std::string>& overrides,
                  const std::string& output_dir, const std::string& corrupt_op, double corrupt_factor,
                  std::ostream& out, std::ostream& err) {
    ModelConfig base = ModelConfig::tiny();
    base.num_actions = 4;
    base.gamma = 0.5;
    json j{{"model", base}, {"gradcheck", {{"seed", 42}, {"step", 1e-4}, {"tolerance", 1e-4}, {"turns", 2}}}};
    if (!config_path.empty()) j.merge_patch(read_json_file(config_path));
    apply_overrides(j, overrides);
    if (auto seed = env_seed()) j["gradcheck"]["seed"] = *seed;
    for (const auto& [key, value] : j.items())
        if (key != "model" && key != "gradcheck") throw ConfigError("gradcheck config: unknown key '" + key + "'");

    const ModelConfig model = model_config_from_json(j["model"]);
    GradcheckOptions options;
    for (const auto& [key, value] : j["gradcheck"].items()) {
        if (key == "seed")
            options.seed = value.get<std::uint64_t>();
        else if (key == "step")
            options.step = value.get<double>();
        else if (key == "tolerance")
            options.tolerance = value.get<double>();
        else if (key == "turns")
            options.turns = value.get<std::size_t>();
        else
            throw ConfigError("gradcheck: unknown key '" + key + "'");
    }
    if (!(options.step > 0.0) || !(options.tolerance > 0.0))
        throw ConfigError("gradcheck: step and tolerance must be positive");

    std::optional<testing::ScopedBackwardFault> fault;
    if (!corrupt_op.empty()) fault.emplace(corrupt_op, corrupt_factor);
    const GradcheckReport report = gradcheck(model, options);
    fault.reset();

    json result = report.to_json();
    result["config"] = j;
    if (!output_dir.empty()) {
        fs::create_directories(output_dir);
        echo_config(output_dir, j);
        write_text(fs::path(output_dir) / "gradcheck.json", result.dump(2) + "\n");
    }
    out << (report.passed ? "PASS" : "FAIL") << " max_rel_error=" << report.max_rel_error
        << " worst_parameter=" << report.worst_parameter << " tolerance=" << report.tolerance
        << " seconds=" << report.seconds << "\n";
    if (!report.passed) {
        for (const auto& p : report.failing_parameters) err << "failing parameter: " << p << "\n";
        for (const auto& o : report.failing_ops) err << "failing op: " << o << "\n";
        return kRuntimeError;
    }
    return kSuccess;
}

}  // namespace

json load_config_json(const fs::path& path, const std::vector<std::string>& overrides) {
    json j = read_json_file(path);
    apply_overrides(j, overrides);
    if (auto seed = env_seed()) j["train"]["seed"] = *seed;
    return j;
}

DatasetSplits load_splits(const RunConfig& config) {
    const RatingMap map = config.ratings();
    if (!config.data.corpus.empty())
        return split(load_dialogues(config.data.corpus, map), config.data.fractions, config.train.seed);
    DatasetSplits s;
    s.train = load_dialogues(config.data.train, map);
    if (!config.data.validation.empty()) s.validation = load_dialogues(config.data.validation, map);
    if (!config.data.test.empty()) s.test = load_dialogues(config.data.test, map);
    return s;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Per-turn user satisfaction estimation with a Hawkes-process head", "asap"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all help");

    std::vector<std::string> overrides;
    std::string config_path, output_dir, out_path, checkpoint, data, embeddings, compare, corrupt_op;
    bool per_turn = false, contribution = false;
    std::size_t min_turn = 4;
    double corrupt_factor = 1.01;

    auto* synth = app.add_subcommand("synth", "Write a synthetic dialogue corpus");
    synth->add_option("-s,--spec", config_path, "Synthetic corpus spec (JSON)");
    synth->add_option("--set", overrides, "Override a spec field, key=value");
    synth->add_option("-o,--out", out_path, "Output JSONL path")->required();

    auto* train_cmd = app.add_subcommand("train", "Train an estimator");
    train_cmd->add_option("-c,--config", config_path, "Run config (JSON)")->required();
    train_cmd->add_option("--set", overrides, "Override a config field, e.g. model.gamma=0.5");
    train_cmd->add_option("-o,--output-dir", output_dir, "Output directory (overrides output_dir)");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on labelled dialogues");
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--data", data, "Dialogue JSONL")->required();
    eval_cmd->add_option("--embeddings", embeddings, "Embedding file (file-backed providers)");
    eval_cmd->add_option("-o,--output-dir", output_dir, "Report directory")->required();
    eval_cmd->add_flag("--per-turn", per_turn, "Add the per-turn-depth breakdown");
    eval_cmd->add_flag("--contribution", contribution, "Add label-history contribution statistics");
    eval_cmd->add_option("--compare", compare, "Predictions JSONL of another system for a paired t-test");
    eval_cmd->add_option("--min-turn", min_turn, "Smallest turn depth shown in the breakdown");

    auto* predict_cmd = app.add_subcommand("predict", "Write per-turn predictions");
    predict_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    predict_cmd->add_option("--data", data, "Dialogue JSONL (labels optional)")->required();
    predict_cmd->add_option("--embeddings", embeddings, "Embedding file (file-backed providers)");
    predict_cmd->add_option("-o,--out", out_path, "Output JSONL (default stdout)");

    auto* gc = app.add_subcommand("gradcheck", "Compare backward against central finite differences");
    gc->add_option("-c,--config", config_path, "JSON with optional 'model' and 'gradcheck' sections");
    gc->add_option("--set", overrides, "Override a field, e.g. gradcheck.seed=7");
    gc->add_option("-o,--output-dir", output_dir, "Write the report here");
    gc->add_option("--corrupt-op", corrupt_op, "Scale the backward of one op (test fixture)")->group("");
    gc->add_option("--corrupt-factor", corrupt_factor, "Scale used by --corrupt-op")->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kSuccess : kValidationError;
    }

    try {
        if (*synth) return cmd_synth(config_path, overrides, out_path, out);
        if (*train_cmd) return cmd_train(config_path, overrides, output_dir, out, err);
        if (*eval_cmd)
            return cmd_eval(checkpoint, data, embeddings, output_dir, per_turn, contribution, compare, min_turn, out);
        if (*predict_cmd) return cmd_predict(checkpoint, data, embeddings, out_path, out);
        if (*gc) return cmd_gradcheck(config_path, overrides, output_dir, corrupt_op, corrupt_factor, out, err);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kValidationError;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kValidationError;
    } catch (const LookupError& e) {
        err << "error: " << e.what() << "\n";
        return kValidationError;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kValidationError;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kRuntimeError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kValidationError;
}

}  // namespace asap::cli
