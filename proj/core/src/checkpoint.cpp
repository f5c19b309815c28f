#include "asap/checkpoint.hpp"

#include "asap/config.hpp"
#include "asap/errors.hpp"
#include "detail/binary_io.hpp"

namespace asap {

namespace {
constexpr std::string_view kCheckpointMagic = "ASAPCKPT";
}

std::string serialize_checkpoint(const nlohmann::json& config,
                                 const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::string out(kCheckpointMagic);
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    const std::string blob = config.dump();
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
    out += blob;
    for (const auto& [name, tensor] : tensors) {
        if (name.size() > 0xFFFF) throw ContractError("checkpoint: parameter name too long");
        if (tensor.rank() > 0xFF) throw ContractError("checkpoint: rank too large");
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
        for (auto d : tensor.shape()) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (double v : tensor.values()) detail::put_f32(out, static_cast<float>(v));
    }
    return out;
}

CheckpointContents parse_checkpoint(std::string_view bytes) {
    detail::ByteReader in(bytes, "checkpoint");
    if (in.get_string(kCheckpointMagic.size()) != kCheckpointMagic) throw ParseError("checkpoint: bad magic");
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    const auto blob_len = in.get<std::uint32_t>();
    CheckpointContents out;
    try {
        out.config = nlohmann::json::parse(in.get_string(blob_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("checkpoint: config blob is not JSON: ") + e.what());
    }
    while (!in.at_end()) {
        const auto name_len = in.get<std::uint16_t>();
        std::string name = in.get_string(name_len);
        const auto rank = in.get<std::uint8_t>();
        Shape shape(rank);
        for (auto& d : shape) d = in.get<std::uint32_t>();
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = static_cast<double>(in.get_f32());
        out.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
    }
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                      const std::vector<std::pair<std::string, Tensor>>& tensors) {
    detail::write_file_bytes(path.string(), serialize_checkpoint(config, tensors));
}

CheckpointContents read_checkpoint(const std::filesystem::path& path) {
    try {
        return parse_checkpoint(detail::read_file_bytes(path.string()));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void save_estimator(const std::filesystem::path& path, const Estimator& estimator,
                    const nlohmann::json& provider_extra) {
    nlohmann::json provider = provider_extra.is_object() ? provider_extra : nlohmann::json::object();
    provider["kind"] = estimator.provider().kind();
    provider["dim"] = estimator.provider().dim();
    if (const auto* bag = dynamic_cast<const BagOfTokensEncoder*>(&estimator.provider()))
        provider["vocabulary"] = bag->vocabulary().tokens();

    nlohmann::json config;
    config["model"] = estimator.config();
    config["provider"] = std::move(provider);

    std::vector<std::pair<std::string, Tensor>> tensors;
    const ParameterStore params = estimator.all_parameters();
    for (const auto& p : params.entries()) tensors.emplace_back(p.name, p.tensor);
    write_checkpoint(path, config, tensors);
}

Estimator load_estimator(const std::filesystem::path& path,
                         const std::optional<std::filesystem::path>& embeddings_override) {
    auto contents = read_checkpoint(path);
    if (!contents.config.contains("model") || !contents.config.contains("provider"))
        throw ParseError(path.string() + ": checkpoint config lacks 'model' or 'provider'");
    const ModelConfig model_config = model_config_from_json(contents.config["model"]);
    const auto& provider_json = contents.config["provider"];
    const std::string kind = provider_json.value("kind", "");

    std::vector<std::pair<std::string, Tensor>> remaining;
    std::unique_ptr<EmbeddingProvider> provider;
    if (kind == "bag_of_tokens") {
        Vocabulary vocab(provider_json.at("vocabulary").get<std::vector<std::string>>());
        Tensor table;
        for (auto& [name, t] : contents.tensors) {
            if (name == BagOfTokensEncoder::kTableName)
                table = t;
            else
                remaining.emplace_back(name, t);
        }
        if (!table.defined()) throw ParseError(path.string() + ": missing token embedding table");
        provider = std::make_unique<BagOfTokensEncoder>(std::move(vocab), std::move(table));
    } else if (kind == "file") {
        std::filesystem::path emb;
        if (embeddings_override)
            emb = *embeddings_override;
        else if (provider_json.contains("embeddings_path"))
            emb = provider_json["embeddings_path"].get<std::string>();
        else
            throw ConfigError("checkpoint uses a file provider but no embeddings path is known");
        provider = std::make_unique<FileEmbeddingProvider>(
            std::make_shared<const EmbeddingStore>(EmbeddingStore::read(emb)));
        remaining = std::move(contents.tensors);
    } else {
        throw ParseError(path.string() + ": unknown provider kind '" + kind + "'");
    }

    AsapModel model(model_config, 0);
    auto& entries = model.parameters().entries();
    if (remaining.size() != entries.size())
        throw ConfigError(path.string() + ": checkpoint has " + std::to_string(remaining.size()) +
                          " model tensors, config expects " + std::to_string(entries.size()));
    for (const auto& [name, t] : remaining) {
        auto it = std::find_if(entries.begin(), entries.end(), [&](const NamedParameter& p) { return p.name == name; });
        if (it == entries.end()) throw ConfigError(path.string() + ": unexpected tensor '" + name + "'");
        if (it->tensor.shape() != t.shape())
            throw ConfigError(path.string() + ": tensor '" + name + "' has shape " + shape_string(t.shape()) +
                              ", config expects " + shape_string(it->tensor.shape()));
        const auto src = t.values();
        auto dst = it->tensor.mutable_values();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return Estimator(std::move(model), std::move(provider));
}

void round_to_float32(ParameterStore& params) {
    for (auto& p : params.entries())
        for (auto& v : p.tensor.mutable_values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace asap
