#include "asap/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "asap/errors.hpp"
#include "asap/tensor.hpp"

namespace asap {

using json = nlohmann::json;

DialogueSession DialogueSession::prefix(std::size_t length) const {
    if (length == 0 || length > turns.size()) throw ContractError("prefix: length out of range");
    DialogueSession out{id, {turns.begin(), turns.begin() + static_cast<std::ptrdiff_t>(length)}};
    return out;
}

// ---------------------------------------------------------------------------
// RatingMap

RatingMap::RatingMap() : RatingMap(std::array<std::size_t, 5>{0, 0, 1, 2, 2}) {}

RatingMap::RatingMap(std::array<std::size_t, 5> classes) : classes_(classes) {
    if (classes_[0] != 0) throw ConfigError("rating map: rating 1 must map to class 0");
    for (std::size_t i = 1; i < classes_.size(); ++i)
        if (classes_[i] < classes_[i - 1] || classes_[i] > classes_[i - 1] + 1)
            throw ConfigError("rating map must be monotone with no skipped classes");
}

RatingMap RatingMap::for_classes(std::size_t num_classes) {
    if (num_classes == 3) return RatingMap();
    if (num_classes < 2 || num_classes > 5)
        throw ConfigError("no rating map for " + std::to_string(num_classes) + " classes");
    std::array<std::size_t, 5> classes{};
    for (std::size_t r = 0; r < 5; ++r) classes[r] = std::min(num_classes - 1, r * num_classes / 5);
    return RatingMap(classes);
}

std::size_t RatingMap::operator()(int rating) const {
    if (rating < 1 || rating > 5) throw ContractError("rating " + std::to_string(rating) + " outside 1..5");
    return classes_[static_cast<std::size_t>(rating - 1)];
}

int RatingMap::representative_rating(std::size_t cls) const {
    for (std::size_t r = 0; r < classes_.size(); ++r)
        if (classes_[r] == cls) return static_cast<int>(r + 1);
    throw ContractError("class " + std::to_string(cls) + " has no rating");
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

DialogueSession parse_line(const std::string& line, std::size_t line_no, const RatingMap& map) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", line_no);
    if (!j.contains("dialogue_id") || !j["dialogue_id"].is_string())
        throw ParseError("missing string field 'dialogue_id'", line_no);
    if (!j.contains("turns") || !j["turns"].is_array()) throw ParseError("missing array field 'turns'", line_no);

    DialogueSession d;
    d.id = j["dialogue_id"].get<std::string>();
    if (j["turns"].empty()) throw ParseError("dialogue '" + d.id + "' has no turns", line_no);
    std::size_t index = 0;
    for (const auto& t : j["turns"]) {
        const std::string where = "dialogue '" + d.id + "' turn " + std::to_string(index);
        if (!t.is_object()) throw ParseError(where + ": turn must be an object", line_no);
        if (!t.contains("system") || !t["system"].is_string() || !t.contains("user") || !t["user"].is_string())
            throw ParseError(where + ": 'system' and 'user' must be strings", line_no);
        Turn turn;
        turn.system = t["system"].get<std::string>();
        turn.user = t["user"].get<std::string>();
        if (t.contains("rating") && !t["rating"].is_null()) {
            if (!t["rating"].is_number_integer()) throw ParseError(where + ": rating must be an integer", line_no);
            const int rating = t["rating"].get<int>();
            if (rating < 1 || rating > 5)
                throw ParseError(where + ": rating " + std::to_string(rating) + " outside 1..5", line_no);
            turn.satisfaction = map(rating);
        }
        if (t.contains("action") && !t["action"].is_null()) {
            if (!t["action"].is_number_integer() || t["action"].get<long long>() < 0)
                throw ParseError(where + ": action must be a non-negative integer", line_no);
            turn.action = t["action"].get<std::size_t>();
        }
        d.turns.push_back(std::move(turn));
        ++index;
    }
    return d;
}

}  // namespace

std::vector<DialogueSession> parse_dialogues(std::istream& in, const RatingMap& map) {
    std::vector<DialogueSession> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        auto d = parse_line(line, line_no, map);
        if (!seen.insert(d.id).second) throw ParseError("duplicate dialogue_id '" + d.id + "'", line_no);
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<DialogueSession> load_dialogues(const std::filesystem::path& path, const RatingMap& map) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dialogue file " + path.string());
    try {
        return parse_dialogues(in, map);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void write_dialogues(std::ostream& out, const std::vector<DialogueSession>& dialogues, const RatingMap& map) {
    for (const auto& d : dialogues) {
        json turns = json::array();
        for (const auto& t : d.turns) {
            json jt;
            jt["system"] = t.system;
            jt["user"] = t.user;
            jt["rating"] = t.satisfaction ? json(map.representative_rating(*t.satisfaction)) : json(nullptr);
            jt["action"] = t.action ? json(*t.action) : json(nullptr);
            turns.push_back(std::move(jt));
        }
        json j;
        j["dialogue_id"] = d.id;
        j["turns"] = std::move(turns);
        out << j.dump() << '\n';
    }
}

void write_dialogues(const std::filesystem::path& path, const std::vector<DialogueSession>& dialogues,
                     const RatingMap& map) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dialogue file " + path.string());
    write_dialogues(out, dialogues, map);
    if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Splits

DatasetSplits split(const std::vector<DialogueSession>& dialogues, std::array<double, 3> fractions,
                    std::uint64_t seed) {
    for (double f : fractions)
        if (f < 0.0) throw ConfigError("split fractions must be non-negative");
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

    std::vector<std::size_t> order(dialogues.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const auto n = static_cast<double>(dialogues.size());
    const auto n_train = std::min(dialogues.size(), static_cast<std::size_t>(std::llround(fractions[0] * n)));
    const auto n_val =
        std::min(dialogues.size() - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));

    DatasetSplits out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& d = dialogues[order[i]];
        if (i < n_train)
            out.train.push_back(d);
        else if (i < n_train + n_val)
            out.validation.push_back(d);
        else
            out.test.push_back(d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

void SynthSpec::validate() const {
    if (num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
    if (num_actions == 1) throw ConfigError("synth: num_actions must be 0 or >= 2");
    if (min_turns == 0 || min_turns > max_turns) throw ConfigError("synth: need 1 <= min_turns <= max_turns");
    if (!(persistence >= 0.0 && persistence < 1.0)) throw ConfigError("synth: persistence must lie in [0, 1)");
    for (double p : {lexical_strength, action_coupling, action_lexical_strength})
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synth: probabilities must lie in [0, 1]");
    if (history_weights[0] < 0.0 || history_weights[1] < 0.0 || history_weights[0] + history_weights[1] <= 0.0)
        throw ConfigError("synth: history weights must be non-negative with a positive sum");
    if (user_tokens == 0) throw ConfigError("synth: user_tokens must be >= 1");
}

namespace {

const std::vector<std::vector<std::string>> kThreeClassCues = {
    {"terrible", "wrong", "useless", "annoying", "awful", "unhelpful"},
    {"okay", "fine", "alright", "sure", "maybe", "hmm"},
    {"great", "perfect", "thanks", "excellent", "wonderful", "helpful"},
};

const std::vector<std::string> kUserFiller = {
    "i",     "need", "a",      "hotel", "train", "table", "ticket", "for",   "the",  "in",
    "north", "at",   "please", "book",  "want",  "price", "area",   "cheap", "time", "two",
};

const std::vector<std::string> kSystemFiller = {
    "i",     "have", "found", "several", "options", "would", "you",  "like", "me",      "to",
    "book",  "it",   "what",  "day",     "the",     "is",    "there", "anything", "else", "booked",
};

std::vector<std::vector<std::string>> satisfaction_cues(std::size_t k) {
    if (k == 3) return kThreeClassCues;
    std::vector<std::vector<std::string>> cues(k);
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t j = 0; j < 6; ++j) cues[c].push_back("sat" + std::to_string(c) + "w" + std::to_string(j));
    return cues;
}

std::vector<std::vector<std::string>> action_cues(std::size_t a) {
    std::vector<std::vector<std::string>> cues(a);
    for (std::size_t c = 0; c < a; ++c)
        for (std::size_t j = 0; j < 4; ++j) cues[c].push_back("act" + std::to_string(c) + "w" + std::to_string(j));
    return cues;
}

template <typename T>
const T& pick(const std::vector<T>& items, Rng& rng) {
    std::uniform_int_distribution<std::size_t> dist(0, items.size() - 1);
    return items[dist(rng)];
}

}  // namespace

std::vector<DialogueSession> synthesize(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> turns_dist(spec.min_turns, spec.max_turns);
    std::uniform_int_distribution<std::size_t> class_dist(0, spec.num_classes - 1);
    const auto sat_cues = satisfaction_cues(spec.num_classes);
    const auto act_cues = action_cues(spec.num_actions);
    const double w_prev = spec.history_weights[0] / (spec.history_weights[0] + spec.history_weights[1]);

    std::vector<DialogueSession> out;
    out.reserve(spec.num_dialogues);
    for (std::size_t n = 0; n < spec.num_dialogues; ++n) {
        std::ostringstream id;
        id << "synth-" << std::setw(6) << std::setfill('0') << n;
        DialogueSession d{id.str(), {}};
        const std::size_t length = turns_dist(rng);
        std::vector<std::size_t> labels;
        for (std::size_t t = 0; t < length; ++t) {
            bool persisted = false;
            std::size_t label = 0;
            if (t > 0 && unit(rng) < spec.persistence) {
                persisted = true;
                label = (t == 1 || unit(rng) < w_prev) ? labels[t - 1] : labels[t - 2];
            } else {
                label = class_dist(rng);
            }
            labels.push_back(label);

            Turn turn;
            turn.satisfaction = label;
            if (spec.num_actions > 0) {
                turn.action = unit(rng) < spec.action_coupling
                                  ? label * spec.num_actions / spec.num_classes
                                  : std::uniform_int_distribution<std::size_t>(0, spec.num_actions - 1)(rng);
            }

            std::string system;
            for (std::size_t i = 0; i < spec.system_tokens; ++i)
                system += (i ? " " : "") + pick(kSystemFiller, rng);
            std::string user;
            for (std::size_t i = 0; i < spec.user_tokens; ++i) {
                std::string token;
                if (!persisted && unit(rng) < spec.lexical_strength)
                    token = pick(sat_cues[label], rng);
                else if (turn.action && unit(rng) < spec.action_lexical_strength)
                    token = pick(act_cues[*turn.action], rng);
                else
                    token = pick(kUserFiller, rng);
                user += (i ? " " : "") + token;
            }
            turn.system = std::move(system);
            turn.user = std::move(user);
            d.turns.push_back(std::move(turn));
        }
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace asap
