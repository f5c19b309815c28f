#include "asap/utterance.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "asap/errors.hpp"
#include "detail/binary_io.hpp"

namespace asap {

namespace detail {

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace detail

namespace {
constexpr std::string_view kEmbeddingMagic = "ASAPEMB1";
}

// ---------------------------------------------------------------------------
// Provider defaults

Tensor EmbeddingProvider::embed_dialogue(const DialogueSession& dialogue) const {
    if (dialogue.turns.empty()) throw ContractError("embed_dialogue: dialogue has no turns");
    std::vector<Tensor> rows;
    rows.reserve(dialogue.turns.size());
    for (std::size_t t = 0; t < dialogue.turns.size(); ++t)
        rows.push_back(embed_turn(dialogue.id, t, dialogue.turns[t].system, dialogue.turns[t].user));
    return rows.size() == 1 ? rows.front() : concat(rows, 0);
}

std::vector<std::string> EmbeddingProvider::missing_keys(const DialogueSession&) const { return {}; }

// ---------------------------------------------------------------------------
// EmbeddingStore

std::string EmbeddingStore::key(const std::string& dialogue_id, std::uint32_t turn_index) {
    return dialogue_id + '\x1f' + std::to_string(turn_index);
}

void EmbeddingStore::insert(const std::string& dialogue_id, std::uint32_t turn_index, std::vector<float> vector) {
    if (vector.size() != dim_)
        throw ContractError("embedding for (" + dialogue_id + ", " + std::to_string(turn_index) + ") has width " +
                            std::to_string(vector.size()) + ", store dim is " + std::to_string(dim_));
    if (dialogue_id.size() > 0xFFFF) throw ContractError("dialogue id longer than 65535 bytes");
    auto [it, inserted] = index_.emplace(key(dialogue_id, turn_index), records_.size());
    if (!inserted)
        throw ContractError("duplicate embedding record (" + dialogue_id + ", " + std::to_string(turn_index) + ")");
    records_.push_back({dialogue_id, turn_index, std::move(vector)});
}

const std::vector<float>* EmbeddingStore::find(const std::string& dialogue_id, std::uint32_t turn_index) const {
    auto it = index_.find(key(dialogue_id, turn_index));
    return it == index_.end() ? nullptr : &records_[it->second].vector;
}

std::string EmbeddingStore::serialize() const {
    std::string out(kEmbeddingMagic);
    detail::put_le<std::uint32_t>(out, kVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
    detail::put_le<std::uint64_t>(out, records_.size());
    for (const auto& r : records_) {
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(r.dialogue_id.size()));
        out += r.dialogue_id;
        detail::put_le<std::uint32_t>(out, r.turn_index);
        for (float v : r.vector) detail::put_f32(out, v);
    }
    return out;
}

EmbeddingStore EmbeddingStore::parse(std::string_view bytes) {
    detail::ByteReader in(bytes, "embedding file");
    if (in.get_string(kEmbeddingMagic.size()) != kEmbeddingMagic) throw ParseError("embedding file: bad magic");
    const auto version = in.get<std::uint32_t>();
    if (version != kVersion) throw ParseError("embedding file: unsupported version " + std::to_string(version));
    const auto dim = in.get<std::uint32_t>();
    if (dim == 0) throw ParseError("embedding file: zero dimension");
    const auto count = in.get<std::uint64_t>();
    EmbeddingStore store(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto id_len = in.get<std::uint16_t>();
        std::string id = in.get_string(id_len);
        const auto turn = in.get<std::uint32_t>();
        std::vector<float> v(dim);
        for (auto& x : v) x = in.get_f32();
        if (store.find(id, turn))
            throw ParseError("embedding file: duplicate record (" + id + ", " + std::to_string(turn) + ")");
        store.insert(id, turn, std::move(v));
    }
    if (!in.at_end()) throw ParseError("embedding file: trailing bytes after " + std::to_string(count) + " records");
    return store;
}

EmbeddingStore EmbeddingStore::read(const std::filesystem::path& path) {
    try {
        return parse(detail::read_file_bytes(path.string()));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void EmbeddingStore::write(const std::filesystem::path& path) const {
    detail::write_file_bytes(path.string(), serialize());
}

EmbeddingStore random_embedding_store(const std::vector<DialogueSession>& dialogues, std::size_t dim,
                                      std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    EmbeddingStore store(dim);
    for (const auto& d : dialogues)
        for (std::size_t t = 0; t < d.turns.size(); ++t) {
            std::vector<float> v(dim);
            for (auto& x : v) x = normal(rng);
            store.insert(d.id, static_cast<std::uint32_t>(t), std::move(v));
        }
    return store;
}

// ---------------------------------------------------------------------------
// FileEmbeddingProvider

FileEmbeddingProvider::FileEmbeddingProvider(std::shared_ptr<const EmbeddingStore> store)
    : store_(std::move(store)) {
    if (!store_ || store_->dim() == 0) throw ConfigError("file provider needs a non-empty store");
}

Tensor FileEmbeddingProvider::embed_turn(const std::string& dialogue_id, std::size_t turn_index, std::string_view,
                                         std::string_view) const {
    const auto* v = store_->find(dialogue_id, static_cast<std::uint32_t>(turn_index));
    if (!v)
        throw LookupError("no embedding for (dialogue_id=" + dialogue_id + ", turn=" + std::to_string(turn_index) +
                          ")");
    return Tensor::from({1, v->size()}, std::vector<double>(v->begin(), v->end()));
}

std::vector<std::string> FileEmbeddingProvider::missing_keys(const DialogueSession& dialogue) const {
    std::vector<std::string> missing;
    for (std::size_t t = 0; t < dialogue.turns.size(); ++t)
        if (!store_->find(dialogue.id, static_cast<std::uint32_t>(t)))
            missing.push_back("(dialogue_id=" + dialogue.id + ", turn=" + std::to_string(t) + ")");
    return missing;
}

// ---------------------------------------------------------------------------
// Tokens and vocabulary

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isalnum(c) || c >= 0x80) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{kUnkToken}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty() || tokens_.front() != kUnkToken)
        throw ConfigError("vocabulary must start with the UNK token");
    for (std::size_t i = 0; i < tokens_.size(); ++i)
        if (!index_.emplace(tokens_[i], i).second) throw ConfigError("duplicate vocabulary token '" + tokens_[i] + "'");
}

std::size_t Vocabulary::lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

Vocabulary build_vocabulary(const std::vector<DialogueSession>& train, std::size_t min_count) {
    std::map<std::string, std::size_t> counts;
    for (const auto& d : train)
        for (const auto& t : d.turns) {
            for (auto& tok : tokenize(t.system)) ++counts[tok];
            for (auto& tok : tokenize(t.user)) ++counts[tok];
        }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, n] : counts)
        if (n >= min_count && tok != Vocabulary::kUnkToken) kept.emplace_back(tok, n);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::vector<std::string> tokens{Vocabulary::kUnkToken};
    for (auto& [tok, n] : kept) tokens.push_back(tok);
    return Vocabulary(std::move(tokens));
}

// ---------------------------------------------------------------------------
// BagOfTokensEncoder

BagOfTokensEncoder::BagOfTokensEncoder(Vocabulary vocab, std::size_t dim, Rng& rng)
    : vocab_(std::move(vocab)), dim_(dim) {
    if (dim_ == 0) throw ConfigError("bag-of-tokens: dim must be >= 1");
    table_ = params_.add_uniform(kTableName, {vocab_.size(), dim_}, 1.0, rng, true);
}

BagOfTokensEncoder::BagOfTokensEncoder(Vocabulary vocab, Tensor table) : vocab_(std::move(vocab)) {
    if (table.rank() != 2 || table.dim(0) != vocab_.size())
        throw ConfigError("bag-of-tokens: table shape " + shape_string(table.shape()) + " does not match vocabulary of " +
                          std::to_string(vocab_.size()));
    dim_ = table.dim(1);
    table_ = params_.add(kTableName, std::move(table), true);
}

std::vector<std::size_t> BagOfTokensEncoder::encode(std::string_view system, std::string_view user) const {
    std::vector<std::size_t> ids;
    for (const auto* text : {&system, &user})
        for (const auto& tok : tokenize(*text)) {
            if (ids.size() == kMaxTokens) return ids;
            ids.push_back(vocab_.lookup(tok));
        }
    return ids;
}

Tensor BagOfTokensEncoder::embed_turn(const std::string&, std::size_t, std::string_view system,
                                      std::string_view user) const {
    return embedding_bag(table_, {encode(system, user)});
}

Tensor BagOfTokensEncoder::embed_dialogue(const DialogueSession& dialogue) const {
    if (dialogue.turns.empty()) throw ContractError("embed_dialogue: dialogue has no turns");
    std::vector<std::vector<std::size_t>> bags;
    bags.reserve(dialogue.turns.size());
    for (const auto& t : dialogue.turns) bags.push_back(encode(t.system, t.user));
    return embedding_bag(table_, bags);
}

}  // namespace asap
