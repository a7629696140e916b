#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "guardrail/adapter/lora.hpp"
#include "guardrail/benchgen.hpp"
#include "guardrail/rng.hpp"
#include "guardrail/textenc/model.hpp"
#include "guardrail/textenc/tokenizer.hpp"

namespace guardrail::io {

using json = nlohmann::ordered_json;

inline constexpr int format_version = 1;

/// Provenance stamped on every artifact.
struct ArtifactHeader {
    std::string kind;
    std::uint64_t seed = 0;
    std::string config_hash;
};

/// 16 hex digits of FNV-1a over the compact JSON dump.
inline std::string hash_json(const json& j) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << fnv1a64(j.dump());
    return os.str();
}

inline json header_json(const ArtifactHeader& h) {
    return json{{"format_version", format_version}, {"kind", h.kind}, {"seed", h.seed}, {"config_hash", h.config_hash}};
}

inline ArtifactHeader read_header(const json& j, const std::string& expected_kind) {
    require(j.is_object() && j.contains("format_version"), ErrorCode::schema_violation,
            "artifact: missing format_version");
    const int v = j.at("format_version").get<int>();
    require(v == format_version, ErrorCode::version_mismatch,
            "artifact: format_version " + std::to_string(v) + ", expected " + std::to_string(format_version));
    ArtifactHeader h;
    try {
        h.kind = j.at("kind").get<std::string>();
        h.seed = j.at("seed").get<std::uint64_t>();
        h.config_hash = j.at("config_hash").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema_violation, std::string("artifact header: ") + e.what());
    }
    require(h.kind == expected_kind, ErrorCode::schema_violation,
            "artifact: expected kind '" + expected_kind + "', found '" + h.kind + "'");
    return h;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::missing_input, "cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::io_failure, "cannot write " + path.string());
    out << text;
    require(out.good(), ErrorCode::io_failure, "write failed for " + path.string());
}

inline json parse_json(const std::string& text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::schema_violation, source + ": " + e.what());
    }
}

inline json read_json(const std::filesystem::path& path) { return parse_json(read_text(path), path.string()); }

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---- tensors -------------------------------------------------------------

inline json tensor_json(const diff::Tensor& t) { return json{{"shape", t.shape()}, {"data", t.data()}}; }

inline diff::Tensor tensor_from_json(const json& j, const std::string& what) {
    try {
        auto shape = j.at("shape").get<diff::Shape>();
        auto data = j.at("data").get<std::vector<double>>();
        require(data.size() == diff::shape_size(shape), ErrorCode::schema_violation,
                what + ": data length does not match shape");
        return diff::Tensor(std::move(shape), std::move(data));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema_violation, what + ": " + e.what());
    }
}

// ---- model checkpoint ----------------------------------------------------

inline json config_json(const textenc::EncoderConfig& c) {
    return json{{"n_layers", c.n_layers}, {"d_model", c.d_model},     {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},         {"max_len", c.max_len},     {"vocab_size", c.vocab_size},
                {"n_classes", c.n_classes}, {"seed", c.seed}};
}

inline textenc::EncoderConfig config_from_json(const json& j) {
    textenc::EncoderConfig c;
    try {
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.d_ff = j.at("d_ff").get<std::size_t>();
        c.max_len = j.at("max_len").get<std::size_t>();
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.n_classes = j.at("n_classes").get<std::size_t>();
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema_violation, std::string("encoder_config: ") + e.what());
    }
    c.validate();
    return c;
}

struct ModelCheckpoint {
    ArtifactHeader header;
    textenc::ClassifierModel model;
    textenc::Vocabulary vocabulary;
};

inline json model_json(const ModelCheckpoint& ck) {
    json j = header_json(ck.header);
    j["encoder_config"] = config_json(ck.model.config);
    j["vocabulary"] = ck.vocabulary.user_tokens();
    json params = json::object();
    for (const auto& [name, tensor] : ck.model.parameters()) params[name] = tensor_json(*tensor);
    j["parameters"] = std::move(params);
    return j;
}

inline ModelCheckpoint model_from_json(const json& j) {
    ModelCheckpoint ck;
    ck.header = read_header(j, "model");
    try {
        ck.vocabulary = textenc::Vocabulary::from_tokens(j.at("vocabulary").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema_violation, std::string("vocabulary: ") + e.what());
    }
    const auto cfg = config_from_json(j.at("encoder_config"));
    require(cfg.vocab_size == ck.vocabulary.size(), ErrorCode::schema_violation,
            "model checkpoint: vocab_size disagrees with the vocabulary");
    ck.model = textenc::ClassifierModel::init(cfg);
    require(j.contains("parameters") && j.at("parameters").is_object(), ErrorCode::schema_violation,
            "model checkpoint: missing parameters");
    const json& params = j.at("parameters");
    for (auto& [name, tensor] : ck.model.parameters()) {
        require(params.contains(name), ErrorCode::schema_violation, "model checkpoint: missing parameter " + name);
        diff::Tensor t = tensor_from_json(params.at(name), name);
        require(t.shape() == tensor->shape(), ErrorCode::shape_mismatch,
                name + ": shape " + diff::shape_string(t.shape()) + ", expected " +
                    diff::shape_string(tensor->shape()));
        *tensor = std::move(t);
    }
    require(params.size() == ck.model.parameters().size(), ErrorCode::schema_violation,
            "model checkpoint: unexpected extra parameters");
    return ck;
}

// ---- adapter checkpoint --------------------------------------------------

struct AdapterCheckpoint {
    ArtifactHeader header;
    adapter::LoraAdapter adapter;
};

inline json adapter_json(const AdapterCheckpoint& ck) {
    json j = header_json(ck.header);
    j["rank"] = ck.adapter.rank;
    j["calibrated_alpha"] = ck.adapter.calibrated_alpha ? json(*ck.adapter.calibrated_alpha) : json(nullptr);
    json targets = json::array();
    for (const auto& t : ck.adapter.targets)
        targets.push_back(json{{"name", t.name}, {"a", tensor_json(t.a)}, {"b", tensor_json(t.b)}});
    j["targets"] = std::move(targets);
    return j;
}

inline AdapterCheckpoint adapter_from_json(const json& j) {
    AdapterCheckpoint ck;
    ck.header = read_header(j, "adapter");
    try {
        ck.adapter.rank = j.at("rank").get<std::size_t>();
        if (!j.at("calibrated_alpha").is_null()) ck.adapter.calibrated_alpha = j.at("calibrated_alpha").get<double>();
        for (const auto& t : j.at("targets")) {
            const auto name = t.at("name").get<std::string>();
            ck.adapter.targets.push_back({name, tensor_from_json(t.at("a"), name + ".a"),
                                          tensor_from_json(t.at("b"), name + ".b")});
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema_violation, std::string("adapter checkpoint: ") + e.what());
    }
    require(ck.adapter.rank >= 1, ErrorCode::schema_violation, "adapter checkpoint: rank must be positive");
    if (ck.adapter.calibrated_alpha)
        (void)adapter::BlendSpec(*ck.adapter.calibrated_alpha);
    for (const auto& t : ck.adapter.targets)
        require(t.a.rank() == 2 && t.b.rank() == 2 && t.a.shape()[0] == ck.adapter.rank &&
                    t.b.shape()[1] == ck.adapter.rank,
                ErrorCode::shape_mismatch, t.name + ": factor shapes disagree with rank");
    return ck;
}

/// Adapter targets must name linears of the model with matching sizes.
inline void check_compatible(const textenc::ClassifierModel& model, const adapter::LoraAdapter& lora) {
    const auto linears = model.adaptable_linears();
    require(linears.size() == lora.targets.size(), ErrorCode::schema_violation,
            "adapter: target count does not match the model");
    for (const auto& [name, linear] : linears) {
        const auto* t = lora.find(name);
        require(t != nullptr, ErrorCode::schema_violation, "adapter: missing target " + name);
        require(t->a.shape()[1] == linear->d_in() && t->b.shape()[0] == linear->d_out(), ErrorCode::shape_mismatch,
                "adapter: target " + name + " does not fit the model");
    }
}

// ---- datasets ------------------------------------------------------------

inline std::string dataset_jsonl(const bench::GroupedDataset& ds) {
    std::string out;
    for (const auto& e : ds.examples) {
        out += json{{"text", e.text}, {"label", e.label}, {"shortcut_present", e.shortcut_present}, {"group", e.group}}
                   .dump();
        out += '\n';
    }
    return out;
}

inline json dataset_manifest(const bench::GroupedDataset& ds, const ArtifactHeader& header) {
    json j = header_json(header);
    j["n_classes"] = ds.n_classes;
    j["shortcut_phrases"] = ds.shortcut_phrases;
    j["size"] = ds.size();
    j["group_counts"] = ds.group_counts();
    return j;
}

inline std::filesystem::path manifest_path(const std::filesystem::path& jsonl) {
    auto p = jsonl;
    p.replace_extension(".manifest.json");
    return p;
}

inline void write_dataset(const std::filesystem::path& path, const bench::GroupedDataset& ds,
                          const ArtifactHeader& header) {
    write_text(path, dataset_jsonl(ds));
    write_json(manifest_path(path), dataset_manifest(ds, header));
}

/// Reads a JSONL dataset. Without a manifest, n_classes is inferred from the
/// labels and no shortcut phrases are known.
inline bench::GroupedDataset read_dataset(const std::filesystem::path& path) {
    bench::GroupedDataset ds;
    std::istringstream in(read_text(path));
    std::string line;
    std::size_t lineno = 0, max_label = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const json j = parse_json(line, path.string() + ":" + std::to_string(lineno));
        bench::Example e;
        try {
            e.text = j.at("text").get<std::string>();
            e.label = j.at("label").get<std::size_t>();
            e.shortcut_present = j.value("shortcut_present", false);
            e.group = j.value("group", std::size_t{0});
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorCode::schema_violation, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
        max_label = std::max(max_label, e.label);
        ds.examples.push_back(std::move(e));
    }
    require(!ds.examples.empty(), ErrorCode::empty_input, path.string() + ": no examples");
    ds.n_classes = std::max<std::size_t>(2, max_label + 1);
    const auto mp = manifest_path(path);
    if (std::filesystem::exists(mp)) {
        const json m = read_json(mp);
        read_header(m, "dataset");
        ds.n_classes = m.at("n_classes").get<std::size_t>();
        ds.shortcut_phrases = m.at("shortcut_phrases").get<std::vector<std::string>>();
        require(max_label < ds.n_classes, ErrorCode::schema_violation, path.string() + ": label exceeds n_classes");
    }
    for (auto& e : ds.examples)
        if (e.group == 0) e.group = bench::group_id(e.label, e.shortcut_present);
    return ds;
}

}  // namespace guardrail::io
