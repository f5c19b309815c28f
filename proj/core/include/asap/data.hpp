#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace asap {

struct Turn {
    std::string system;
    std::string user;
    std::optional<std::size_t> satisfaction;
    std::optional<std::size_t> action;
};

struct DialogueSession {
    std::string id;
    std::vector<Turn> turns;

    std::size_t size() const { return turns.size(); }
    /// Copy holding only the first `length` turns.
    DialogueSession prefix(std::size_t length) const;
};

/// Maps a five-point rating onto satisfaction classes.
class RatingMap {
public:
    /// {1,2} -> dissatisfied (0), {3} -> neutral (1), {4,5} -> satisfied (2).
    RatingMap();
    /// classes[r - 1] is the class of rating r. Must be monotone non-decreasing and start at 0.
    explicit RatingMap(std::array<std::size_t, 5> classes);
    /// The default map for K = 3, otherwise even bins over the five ratings (2 <= K <= 5).
    static RatingMap for_classes(std::size_t num_classes);

    std::size_t operator()(int rating) const;
    /// Lowest rating mapping to `cls`; used when writing class labels back to JSONL.
    int representative_rating(std::size_t cls) const;
    std::size_t num_classes() const { return classes_.back() + 1; }
    const std::array<std::size_t, 5>& classes() const { return classes_; }

private:
    std::array<std::size_t, 5> classes_;
};

/// Reads one dialogue per line. Blank lines are skipped; errors carry the line number.
std::vector<DialogueSession> load_dialogues(const std::filesystem::path& path, const RatingMap& map = {});
std::vector<DialogueSession> parse_dialogues(std::istream& in, const RatingMap& map = {});
void write_dialogues(const std::filesystem::path& path, const std::vector<DialogueSession>& dialogues,
                     const RatingMap& map = {});
void write_dialogues(std::ostream& out, const std::vector<DialogueSession>& dialogues, const RatingMap& map = {});

struct DatasetSplits {
    std::vector<DialogueSession> train;
    std::vector<DialogueSession> validation;
    std::vector<DialogueSession> test;
};

/// Dialogue-level seeded partition. Fractions must sum to 1 within 1e-9.
DatasetSplits split(const std::vector<DialogueSession>& dialogues, std::array<double, 3> fractions,
                    std::uint64_t seed);

/// Parameters of the synthetic corpus generator.
///
/// Each turn either keeps a label drawn from recent history (probability
/// `persistence`) or redraws it from the prior. Redrawn turns carry user
/// tokens that cue the new label with per-token probability
/// `lexical_strength`; persisting turns carry no satisfaction cues, so the
/// only route to their label is the label history.
struct SynthSpec {
    std::size_t num_dialogues = 100;
    std::size_t min_turns = 4;
    std::size_t max_turns = 12;
    std::size_t num_classes = 3;
    std::size_t num_actions = 0;
    double persistence = 0.0;
    double lexical_strength = 0.5;
    /// Probability that the action is determined by the satisfaction label rather than drawn uniformly.
    double action_coupling = 0.5;
    /// Per-token probability that a user token cues the action.
    double action_lexical_strength = 0.3;
    std::size_t user_tokens = 6;
    std::size_t system_tokens = 5;
    /// Recency weights over s_{t-1}, s_{t-2} when the label persists.
    std::array<double, 2> history_weights{2.0 / 3.0, 1.0 / 3.0};
    std::uint64_t seed = 42;

    /// Throws ConfigError on invalid values.
    void validate() const;
};

std::vector<DialogueSession> synthesize(const SynthSpec& spec);

}  // namespace asap
