#pragma once

// Per-turn semantic vectors h_t behind a pluggable provider interface.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "asap/data.hpp"
#include "asap/nn.hpp"
#include "asap/tensor.hpp"

namespace asap {

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual std::size_t dim() const = 0;
    virtual std::string kind() const = 0;

    /// Vector for one turn as a [1 x d] tensor. Turn indices are 0-based.
    virtual Tensor embed_turn(const std::string& dialogue_id, std::size_t turn_index, std::string_view system,
                              std::string_view user) const = 0;
    /// [T x d] rows for every turn of the dialogue.
    virtual Tensor embed_dialogue(const DialogueSession& dialogue) const;
    /// Keys this provider cannot serve; empty when the dialogue is fully covered.
    virtual std::vector<std::string> missing_keys(const DialogueSession& dialogue) const;
    /// Learnable parameters, or nullptr for frozen providers.
    virtual ParameterStore* parameters() { return nullptr; }
    virtual const ParameterStore* parameters() const { return nullptr; }
};

/// In-memory image of an embedding file:
///   "ASAPEMB1" | u32 version=1 | u32 dim | u64 count |
///   count x [u16 id-len | id bytes | u32 turn-index | dim x f32], little-endian.
class EmbeddingStore {
public:
    static constexpr std::uint32_t kVersion = 1;

    explicit EmbeddingStore(std::size_t dim = 0) : dim_(dim) {}

    static EmbeddingStore read(const std::filesystem::path& path);
    static EmbeddingStore parse(std::string_view bytes);
    void write(const std::filesystem::path& path) const;
    std::string serialize() const;

    /// Throws ContractError on width mismatch or duplicate key.
    void insert(const std::string& dialogue_id, std::uint32_t turn_index, std::vector<float> vector);
    const std::vector<float>* find(const std::string& dialogue_id, std::uint32_t turn_index) const;

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return records_.size(); }

    struct Record {
        std::string dialogue_id;
        std::uint32_t turn_index;
        std::vector<float> vector;
    };
    const std::vector<Record>& records() const { return records_; }

private:
    static std::string key(const std::string& dialogue_id, std::uint32_t turn_index);

    std::size_t dim_;
    std::vector<Record> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Store with one random N(0, 1) vector per turn of every dialogue.
EmbeddingStore random_embedding_store(const std::vector<DialogueSession>& dialogues, std::size_t dim,
                                      std::uint64_t seed);

/// Frozen provider backed by an embedding store.
class FileEmbeddingProvider : public EmbeddingProvider {
public:
    explicit FileEmbeddingProvider(std::shared_ptr<const EmbeddingStore> store);

    std::size_t dim() const override { return store_->dim(); }
    std::string kind() const override { return "file"; }
    Tensor embed_turn(const std::string& dialogue_id, std::size_t turn_index, std::string_view system,
                      std::string_view user) const override;
    std::vector<std::string> missing_keys(const DialogueSession& dialogue) const override;

private:
    std::shared_ptr<const EmbeddingStore> store_;
};

/// Lowercased alphanumeric runs; everything else separates tokens.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
public:
    static constexpr std::size_t kUnk = 0;
    static constexpr const char* kUnkToken = "<unk>";

    Vocabulary();
    /// Tokens in index order; index 0 must be the UNK token.
    explicit Vocabulary(std::vector<std::string> tokens);

    std::size_t lookup(const std::string& token) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Tokens seen at least `min_count` times, ordered by (count desc, token asc) after UNK.
Vocabulary build_vocabulary(const std::vector<DialogueSession>& train, std::size_t min_count = 2);

/// Trainable provider: h_t is the mean token embedding of "system user".
class BagOfTokensEncoder : public EmbeddingProvider {
public:
    static constexpr std::size_t kMaxTokens = 512;

    /// Fresh embeddings drawn from Uniform(-1, 1).
    BagOfTokensEncoder(Vocabulary vocab, std::size_t dim, Rng& rng);
    /// Adopts an existing [vocab x dim] table (checkpoint load).
    BagOfTokensEncoder(Vocabulary vocab, Tensor table);

    std::size_t dim() const override { return dim_; }
    std::string kind() const override { return "bag_of_tokens"; }
    Tensor embed_turn(const std::string& dialogue_id, std::size_t turn_index, std::string_view system,
                      std::string_view user) const override;
    Tensor embed_dialogue(const DialogueSession& dialogue) const override;
    ParameterStore* parameters() override { return &params_; }
    const ParameterStore* parameters() const override { return &params_; }

    /// Token indices for a turn, truncated to kMaxTokens.
    std::vector<std::size_t> encode(std::string_view system, std::string_view user) const;
    const Vocabulary& vocabulary() const { return vocab_; }
    const Tensor& table() const { return table_; }

    static constexpr const char* kTableName = "utterance.token_embeddings";

private:
    Vocabulary vocab_;
    std::size_t dim_;
    ParameterStore params_;
    Tensor table_;
};

}  // namespace asap
