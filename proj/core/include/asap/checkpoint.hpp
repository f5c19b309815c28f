#pragma once

// Checkpoint file:
//   "ASAPCKPT" | u32 version | u32 config-length | config JSON (UTF-8) |
//   repeated [u16 name-length | name | u8 rank | rank x u32 dim | f32 values], little-endian.
// Records run to end of file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "asap/model.hpp"
#include "asap/tensor.hpp"

namespace asap {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointContents {
    nlohmann::json config;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

std::string serialize_checkpoint(const nlohmann::json& config, const std::vector<std::pair<std::string, Tensor>>& tensors);
CheckpointContents parse_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                      const std::vector<std::pair<std::string, Tensor>>& tensors);
CheckpointContents read_checkpoint(const std::filesystem::path& path);

/// Stores the model config, the provider description (merged with `provider_extra`)
/// and every parameter of the estimator.
void save_estimator(const std::filesystem::path& path, const Estimator& estimator,
                    const nlohmann::json& provider_extra = nlohmann::json::object());

/// Rebuilds an estimator. File-backed providers read their embeddings from
/// `embeddings_override` when given, else from the path recorded at save time.
Estimator load_estimator(const std::filesystem::path& path,
                         const std::optional<std::filesystem::path>& embeddings_override = std::nullopt);

/// Rounds every parameter value to the nearest float32, the precision checkpoints store.
void round_to_float32(ParameterStore& params);

}  // namespace asap
