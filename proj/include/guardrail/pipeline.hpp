#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "guardrail/calibrate.hpp"
#include "guardrail/io.hpp"
#include "guardrail/maskcl.hpp"
#include "guardrail/metrics.hpp"
#include "guardrail/textenc/train.hpp"

namespace guardrail::pipeline {

using io::json;

struct BenchmarkConfig {
    std::size_t n_classes = 5;
    std::size_t pool_size = 40;
    std::size_t neutral_size = 150;
    std::size_t min_words = 16;
    std::size_t max_words = 24;
    std::string shortcut_kind = "single_token";  // or "synonyms"
    std::string shortcut_token = "honestly";
    double lambda = 1.0;
    bool anti_test = true;  // reverse shortcut rates for adapt/support/test splits
    std::size_t train_size = 2000;
    std::size_t adapt_size = 400;
    std::size_t support_size = 40;
    std::size_t test_size = 1000;
};

struct AdaptConfig {
    std::size_t k = 10;
    double temperature = 0.1;
    double lr = 5e-3;
    std::size_t epochs = 2;
    std::size_t batch_size = 16;
    std::size_t grad_accumulation = 1;
    std::optional<std::size_t> rank;  // default_rank(adapt_size) when unset
};

struct RunConfig {
    std::uint64_t seed = 0;
    BenchmarkConfig benchmark;
    textenc::EncoderConfig model;  // vocab_size, n_classes and seed are filled at train time
    textenc::TrainConfig train{.epochs = 10, .lr = 3e-4, .batch_size = 16, .seed = 0};
    AdaptConfig adapt;
    std::size_t eval_k = 10;
};

// ---- config (de)serialization ---------------------------------------------

inline json to_json(const RunConfig& c) {
    const auto& b = c.benchmark;
    return json{
        {"seed", c.seed},
        {"benchmark",
         {{"n_classes", b.n_classes},
          {"pool_size", b.pool_size},
          {"neutral_size", b.neutral_size},
          {"min_words", b.min_words},
          {"max_words", b.max_words},
          {"shortcut_kind", b.shortcut_kind},
          {"shortcut_token", b.shortcut_token},
          {"lambda", b.lambda},
          {"anti_test", b.anti_test},
          {"train_size", b.train_size},
          {"adapt_size", b.adapt_size},
          {"support_size", b.support_size},
          {"test_size", b.test_size}}},
        {"model",
         {{"n_layers", c.model.n_layers},
          {"d_model", c.model.d_model},
          {"n_heads", c.model.n_heads},
          {"d_ff", c.model.d_ff},
          {"max_len", c.model.max_len}}},
        {"train", {{"epochs", c.train.epochs}, {"lr", c.train.lr}, {"batch_size", c.train.batch_size}}},
        {"adapt",
         {{"k", c.adapt.k},
          {"temperature", c.adapt.temperature},
          {"lr", c.adapt.lr},
          {"epochs", c.adapt.epochs},
          {"batch_size", c.adapt.batch_size},
          {"grad_accumulation", c.adapt.grad_accumulation},
          {"rank", c.adapt.rank ? json(*c.adapt.rank) : json(nullptr)}}},
        {"eval", {{"k", c.eval_k}}}};
}

namespace detail {
template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema_violation, std::string("config field '") + key + "': " + e.what());
    }
}

inline const json& section(const json& j, const char* key) {
    static const json empty = json::object();
    if (!j.contains(key)) return empty;
    require(j.at(key).is_object(), ErrorCode::schema_violation, std::string("config: '") + key + "' must be an object");
    return j.at(key);
}
}  // namespace detail

/// Missing fields keep their defaults; present fields must have the right type.
inline RunConfig config_from_json(const json& j) {
    require(j.is_object(), ErrorCode::schema_violation, "config: expected a JSON object");
    if (j.contains("format_version"))
        require(j.at("format_version").get<int>() == io::format_version, ErrorCode::version_mismatch,
                "config: unsupported format_version");
    using detail::read_field;
    RunConfig c;
    read_field(j, "seed", c.seed);
    const json& b = detail::section(j, "benchmark");
    read_field(b, "n_classes", c.benchmark.n_classes);
    read_field(b, "pool_size", c.benchmark.pool_size);
    read_field(b, "neutral_size", c.benchmark.neutral_size);
    read_field(b, "min_words", c.benchmark.min_words);
    read_field(b, "max_words", c.benchmark.max_words);
    read_field(b, "shortcut_kind", c.benchmark.shortcut_kind);
    read_field(b, "shortcut_token", c.benchmark.shortcut_token);
    read_field(b, "lambda", c.benchmark.lambda);
    read_field(b, "anti_test", c.benchmark.anti_test);
    read_field(b, "train_size", c.benchmark.train_size);
    read_field(b, "adapt_size", c.benchmark.adapt_size);
    read_field(b, "support_size", c.benchmark.support_size);
    read_field(b, "test_size", c.benchmark.test_size);
    const json& m = detail::section(j, "model");
    read_field(m, "n_layers", c.model.n_layers);
    read_field(m, "d_model", c.model.d_model);
    read_field(m, "n_heads", c.model.n_heads);
    read_field(m, "d_ff", c.model.d_ff);
    read_field(m, "max_len", c.model.max_len);
    const json& t = detail::section(j, "train");
    read_field(t, "epochs", c.train.epochs);
    read_field(t, "lr", c.train.lr);
    read_field(t, "batch_size", c.train.batch_size);
    const json& a = detail::section(j, "adapt");
    read_field(a, "k", c.adapt.k);
    read_field(a, "temperature", c.adapt.temperature);
    read_field(a, "lr", c.adapt.lr);
    read_field(a, "epochs", c.adapt.epochs);
    read_field(a, "batch_size", c.adapt.batch_size);
    read_field(a, "grad_accumulation", c.adapt.grad_accumulation);
    if (a.contains("rank") && !a.at("rank").is_null()) {
        std::size_t r = 0;
        read_field(a, "rank", r);
        c.adapt.rank = r;
    }
    read_field(detail::section(j, "eval"), "k", c.eval_k);
    require(c.benchmark.shortcut_kind == "single_token" || c.benchmark.shortcut_kind == "synonyms",
            ErrorCode::schema_violation, "config: shortcut_kind must be single_token or synonyms");
    require(c.benchmark.train_size > 0 && c.benchmark.adapt_size > 0 && c.benchmark.support_size > 0 &&
                c.benchmark.test_size > 0,
            ErrorCode::invalid_argument, "config: split sizes must be positive");
    return c;
}

inline std::string config_hash(const RunConfig& c) { return io::hash_json(to_json(c)); }

inline io::ArtifactHeader header(const RunConfig& c, std::string kind) {
    return io::ArtifactHeader{std::move(kind), c.seed, config_hash(c)};
}

// ---- stages ----------------------------------------------------------------

struct Splits {
    bench::GroupedDataset train, adapt, support, test;
};

inline bench::ShortcutSpec shortcut_of(const BenchmarkConfig& b) {
    auto s = b.shortcut_kind == "synonyms" ? bench::ShortcutSpec::synonyms(b.lambda)
                                           : bench::ShortcutSpec::single_token(b.shortcut_token, b.lambda);
    s.validate();
    return s;
}

/// Training split with the forward shortcut rates; adaptation, support and
/// test splits drawn from one shifted pool (reversed rates when anti_test).
inline Splits generate(const RunConfig& c) {
    const auto& b = c.benchmark;
    const auto shortcut = shortcut_of(b);
    auto spec = bench::CorpusSpec::synthetic(b.n_classes, b.pool_size, b.neutral_size, b.train_size,
                                             derive_seed(c.seed, "gen-data.train"));
    spec.min_words = b.min_words;
    spec.max_words = b.max_words;
    spec.validate();
    Splits s;
    s.train = bench::inject(bench::gen_corpus(spec), shortcut, false, derive_seed(c.seed, "gen-data.train.inject"));

    spec.size = b.adapt_size + b.support_size + b.test_size;
    spec.seed = derive_seed(c.seed, "gen-data.shifted");
    const auto shifted =
        bench::inject(bench::gen_corpus(spec), shortcut, b.anti_test, derive_seed(c.seed, "gen-data.shifted.inject"));
    auto slice = [&](std::size_t from, std::size_t n) {
        bench::GroupedDataset d{shifted.n_classes, shifted.shortcut_phrases, {}};
        d.examples.assign(shifted.examples.begin() + static_cast<std::ptrdiff_t>(from),
                          shifted.examples.begin() + static_cast<std::ptrdiff_t>(from + n));
        return d;
    };
    s.adapt = slice(0, b.adapt_size);
    s.support = slice(b.adapt_size, b.support_size);
    s.test = slice(b.adapt_size + b.support_size, b.test_size);
    return s;
}

inline std::vector<std::string> texts_of(const bench::GroupedDataset& ds) {
    std::vector<std::string> out;
    out.reserve(ds.size());
    for (const auto& e : ds.examples) out.push_back(e.text);
    return out;
}

struct TrainOutput {
    io::ModelCheckpoint checkpoint;
    std::vector<textenc::EpochStats> trace;
};

inline TrainOutput train(const RunConfig& c, const bench::GroupedDataset& train_ds) {
    auto vocab = textenc::Vocabulary::from_texts(texts_of(train_ds));
    textenc::EncoderConfig mc = c.model;
    mc.vocab_size = vocab.size();
    mc.n_classes = train_ds.n_classes;
    mc.seed = derive_seed(c.seed, "train.init");
    textenc::TrainConfig tc = c.train;
    tc.seed = derive_seed(c.seed, "train.order");
    const auto encoded = bench::encode(train_ds, vocab, mc.max_len);
    auto result = textenc::train_erm(textenc::ClassifierModel::init(mc), encoded, tc);
    return TrainOutput{{header(c, "model"), std::move(result.model), std::move(vocab)}, std::move(result.trace)};
}

struct AdaptOutput {
    io::AdapterCheckpoint checkpoint;
    std::vector<maskcl::AdaptStep> trace;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

inline maskcl::MaskCLConfig maskcl_config(const RunConfig& c) {
    maskcl::MaskCLConfig m;
    m.temperature = c.adapt.temperature;
    m.lr = c.adapt.lr;
    m.epochs = c.adapt.epochs;
    m.batch_size = c.adapt.batch_size;
    m.grad_accumulation = c.adapt.grad_accumulation;
    m.k = c.adapt.k;
    m.seed = derive_seed(c.seed, "adapt.order");
    return m;
}

/// Unlabeled adaptation on the given inputs; labels are stripped inside adapt().
inline AdaptOutput adapt(const RunConfig& c, const textenc::ClassifierModel& model,
                         const std::vector<textenc::EncodedInput>& inputs) {
    const std::size_t rank = c.adapt.rank.value_or(adapter::default_rank(inputs.size()));
    auto lora = adapter::inject(model, rank, derive_seed(c.seed, "adapt.init"));
    const auto mc = maskcl_config(c);
    AdaptOutput out;
    out.initial_loss = maskcl::evaluate_loss(model, lora, inputs, mc);
    auto result = maskcl::adapt(model, std::move(lora), inputs, mc);
    out.final_loss = maskcl::evaluate_loss(model, result.adapter, inputs, mc);
    out.checkpoint = io::AdapterCheckpoint{header(c, "adapter"), std::move(result.adapter)};
    out.trace = std::move(result.trace);
    return out;
}

inline json trace_json(const AdaptOutput& a, const io::ArtifactHeader& h) {
    json j = io::header_json(h);
    j["initial_loss"] = a.initial_loss;
    j["final_loss"] = a.final_loss;
    json steps = json::array();
    for (const auto& s : a.trace) steps.push_back(json{{"epoch", s.epoch}, {"step", s.step}, {"loss", s.loss}});
    j["steps"] = std::move(steps);
    return j;
}

inline std::string calibration_csv(const calibrate::CalibrationResult& r) {
    std::ostringstream os;
    os << "alpha,support_accuracy,selected\n";
    for (const auto& g : r.grid)
        os << json(g.alpha).dump() << ',' << json(g.accuracy).dump() << ','
           << (g.alpha == r.selected_alpha ? 1 : 0) << '\n';
    return os.str();
}

// ---- evaluation ------------------------------------------------------------

/// Every metric for one (model, adapter, α) on a grouped dataset. Contains no
/// identity of the adapter, so α = 0 reports equal the base-model report.
inline json evaluate(const io::ModelCheckpoint& model, const adapter::LoraAdapter* lora, double alpha,
                     const bench::GroupedDataset& ds, std::size_t k, const io::ArtifactHeader& h) {
    (void)adapter::BlendSpec(alpha);
    const auto encoded = bench::encode(ds, model.vocabulary, model.model.config.max_len);
    const auto groups = metrics::group_report(model.model, lora, alpha, ds, encoded);
    const auto ms = metrics::mstps(model.model, lora, alpha, encoded, k);
    const auto mis = metrics::misclass_decomposition(model.model, encoded, ds.shortcut_phrases, k, lora, alpha);
    json j = io::header_json(h);
    j["alpha"] = alpha;
    j["k"] = k;
    j["n"] = groups.total;
    j["accuracy"] = groups.accuracy;
    j["worst_group_accuracy"] = groups.worst_group_accuracy;
    j["worst_group"] = groups.worst_group;
    json gs = json::array();
    for (const auto& g : groups.groups)
        gs.push_back(json{{"group", g.group},
                          {"label", (g.group - 1) / 2},
                          {"shortcut_present", g.group % 2 == 0},
                          {"size", g.size},
                          {"correct", g.correct},
                          {"accuracy", g.empty ? json(nullptr) : json(g.accuracy)}});
    j["groups"] = std::move(gs);
    j["mstps"] = ms.mean;
    j["misclassification"] = json{{"total", mis.total_rate()},
                                  {"with_shortcut_in_top_k", mis.with_shortcut_rate()},
                                  {"without_shortcut_in_top_k", mis.without_shortcut_rate()},
                                  {"errors", mis.errors}};
    return j;
}

inline std::string report_csv(const json& report) {
    std::ostringstream os;
    os << "group,label,shortcut_present,size,correct,accuracy\n";
    for (const auto& g : report.at("groups"))
        os << g.at("group").dump() << ',' << g.at("label").dump() << ',' << (g.at("shortcut_present").get<bool>() ? 1 : 0)
           << ',' << g.at("size").dump() << ',' << g.at("correct").dump() << ','
           << (g.at("accuracy").is_null() ? std::string() : g.at("accuracy").dump()) << '\n';
    os << "all,,," << report.at("n").dump() << ",," << report.at("accuracy").dump() << '\n';
    return os.str();
}

// ---- full run --------------------------------------------------------------

struct RunResult {
    Splits splits;
    TrainOutput trained;
    AdaptOutput adapted;
    calibrate::CalibrationResult calibration;
    json erm_report;
    json guardrail_report;
    json report;  // consolidated
};

using Logger = std::function<void(const std::string&)>;

inline RunResult run(const RunConfig& c, const Logger& log = {}) {
    auto note = [&](const std::string& m) {
        if (log) log(m);
    };
    RunResult r;
    r.splits = generate(c);
    note("generated " + std::to_string(r.splits.train.size()) + " training and " +
         std::to_string(r.splits.test.size()) + " test examples");
    r.trained = train(c, r.splits.train);
    note("trained base model");
    const auto& ck = r.trained.checkpoint;
    const auto adapt_inputs = bench::encode(r.splits.adapt, ck.vocabulary, ck.model.config.max_len, false);
    r.adapted = adapt(c, ck.model, adapt_inputs);
    note("adapted: contrastive loss " + json(r.adapted.initial_loss).dump() + " -> " +
         json(r.adapted.final_loss).dump());
    const auto support = bench::encode(r.splits.support, ck.vocabulary, ck.model.config.max_len);
    r.calibration = calibrate::calibrate(ck.model, r.adapted.checkpoint.adapter, {support});
    r.adapted.checkpoint.adapter.calibrated_alpha = r.calibration.selected_alpha;
    note("calibrated alpha = " + json(r.calibration.selected_alpha).dump());
    const auto rh = header(c, "report");
    r.erm_report = evaluate(ck, nullptr, 0.0, r.splits.test, c.eval_k, rh);
    r.guardrail_report =
        evaluate(ck, &r.adapted.checkpoint.adapter, r.calibration.selected_alpha, r.splits.test, c.eval_k, rh);
    note("evaluated");

    json rep = io::header_json(header(c, "pipeline_report"));
    rep["config"] = to_json(c);
    json train_trace = json::array();
    for (const auto& e : r.trained.trace)
        train_trace.push_back(json{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"train_accuracy", e.train_accuracy}});
    rep["train"] = json{{"parameters", ck.model.parameter_count()}, {"trace", std::move(train_trace)}};
    rep["adapt"] = json{{"rank", r.adapted.checkpoint.adapter.rank},
                        {"parameters", r.adapted.checkpoint.adapter.parameter_count()},
                        {"steps", r.adapted.trace.size()},
                        {"initial_loss", r.adapted.initial_loss},
                        {"final_loss", r.adapted.final_loss}};
    json grid = json::array();
    for (const auto& g : r.calibration.grid) grid.push_back(json{{"alpha", g.alpha}, {"support_accuracy", g.accuracy}});
    rep["calibration"] = json{{"selected_alpha", r.calibration.selected_alpha}, {"grid", std::move(grid)}};
    rep["erm"] = r.erm_report;
    rep["guardrail"] = r.guardrail_report;
    r.report = std::move(rep);
    return r;
}

/// Writes every artifact of a run under dir.
inline void write_artifacts(const std::filesystem::path& dir, const RunConfig& c, const RunResult& r) {
    const auto dh = header(c, "dataset");
    io::write_dataset(dir / "data" / "train.jsonl", r.splits.train, dh);
    io::write_dataset(dir / "data" / "adapt.jsonl", r.splits.adapt, dh);
    io::write_dataset(dir / "data" / "support.jsonl", r.splits.support, dh);
    io::write_dataset(dir / "data" / "test.jsonl", r.splits.test, dh);
    io::write_json(dir / "model.json", io::model_json(r.trained.checkpoint));
    io::write_json(dir / "adapter.json", io::adapter_json(r.adapted.checkpoint));
    io::write_json(dir / "adapt_trace.json", trace_json(r.adapted, header(c, "adapt_trace")));
    io::write_text(dir / "calibration.csv", calibration_csv(r.calibration));
    io::write_json(dir / "report_erm.json", r.erm_report);
    io::write_text(dir / "report_erm.csv", report_csv(r.erm_report));
    io::write_json(dir / "report_guardrail.json", r.guardrail_report);
    io::write_text(dir / "report_guardrail.csv", report_csv(r.guardrail_report));
    io::write_json(dir / "report.json", r.report);
}

}  // namespace guardrail::pipeline
