#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "guardrail/io.hpp"
#include "guardrail/pipeline.hpp"

using namespace guardrail;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("guardrail_test_io_" + std::to_string(::getpid())) / name;
    fs::create_directories(dir);
    return dir;
}

io::ModelCheckpoint small_checkpoint() {
    const auto vocab = textenc::Vocabulary::from_tokens({"alpha", "beta", "gamma", "book"});
    textenc::EncoderConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 8;
    cfg.max_len = 8;
    cfg.vocab_size = vocab.size();
    cfg.seed = 3;
    return io::ModelCheckpoint{{"model", 3, "0123456789abcdef"}, textenc::ClassifierModel::init(cfg), vocab};
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(GUARDRAIL_CLI) + " " + args + " 2>/dev/null >/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::ok;
}

}  // namespace

TEST_CASE("model checkpoints round-trip exactly") {
    auto ck = small_checkpoint();
    Rng rng(1);
    for (auto& [name, t] : ck.model.parameters())
        for (double& v : t->values()) v = rng.normal();
    const auto dir = scratch("model");
    io::write_json(dir / "model.json", io::model_json(ck));
    const auto back = io::model_from_json(io::read_json(dir / "model.json"));
    CHECK(back.model == ck.model);
    CHECK(back.vocabulary.user_tokens() == ck.vocabulary.user_tokens());
    CHECK(back.header.seed == 3);
    CHECK(back.header.config_hash == "0123456789abcdef");
    CHECK(io::model_json(back).dump() == io::model_json(ck).dump());
}

TEST_CASE("adapter checkpoints round-trip exactly") {
    const auto ck = small_checkpoint();
    auto lora = adapter::inject(ck.model, 2, 4);
    Rng rng(5);
    for (auto& t : lora.targets)
        for (double& v : t.b.values()) v = rng.normal();
    for (auto alpha : {std::optional<double>{}, std::optional<double>{0.3}}) {
        lora.calibrated_alpha = alpha;
        const io::AdapterCheckpoint a{{"adapter", 3, "x"}, lora};
        const auto back = io::adapter_from_json(io::parse_json(io::adapter_json(a).dump(2), "mem"));
        CHECK(back.adapter == lora);
        CHECK_NOTHROW(io::check_compatible(ck.model, back.adapter));
    }
}

TEST_CASE("version, kind and schema violations are reported with their codes") {
    const auto ck = small_checkpoint();
    auto j = io::model_json(ck);
    j["format_version"] = 2;
    CHECK(code_of([&] { io::model_from_json(j); }) == ErrorCode::version_mismatch);
    j = io::model_json(ck);
    j["kind"] = "adapter";
    CHECK(code_of([&] { io::model_from_json(j); }) == ErrorCode::schema_violation);
    j = io::model_json(ck);
    j["parameters"].erase("head.bias");
    CHECK(code_of([&] { io::model_from_json(j); }) == ErrorCode::schema_violation);
    j = io::model_json(ck);
    j["parameters"]["head.bias"]["shape"] = {3};
    CHECK(code_of([&] { io::model_from_json(j); }) != ErrorCode::ok);
    j = io::model_json(ck);
    j["parameters"]["extra"] = io::tensor_json(diff::Tensor(diff::Shape{1}));
    CHECK(code_of([&] { io::model_from_json(j); }) == ErrorCode::schema_violation);
    j = io::model_json(ck);
    j.erase("format_version");
    CHECK(code_of([&] { io::model_from_json(j); }) == ErrorCode::schema_violation);
    CHECK(code_of([&] { io::parse_json("{not json", "mem"); }) == ErrorCode::schema_violation);
    CHECK(code_of([&] { io::read_text("/nonexistent/file.json"); }) == ErrorCode::missing_input);

    auto lora = adapter::inject(ck.model, 2, 1);
    lora.calibrated_alpha = 1.5;
    CHECK(code_of([&] { io::adapter_from_json(io::adapter_json({{"adapter", 0, ""}, lora})); }) ==
          ErrorCode::invalid_argument);
    auto other = small_checkpoint();
    other.model = textenc::ClassifierModel::init([&] {
        auto c = ck.model.config;
        c.d_ff = 16;
        return c;
    }());
    CHECK(code_of([&] { io::check_compatible(other.model, adapter::inject(ck.model, 2, 1)); }) ==
          ErrorCode::shape_mismatch);
}

TEST_CASE("datasets round-trip with their manifest") {
    const auto clean = bench::gen_corpus(bench::CorpusSpec::synthetic(3, 6, 10, 60, 2));
    const auto ds = bench::inject(clean, bench::ShortcutSpec::synonyms(1.0), false, 3);
    const auto dir = scratch("data");
    io::write_dataset(dir / "test.jsonl", ds, {"dataset", 1, "h"});
    const auto back = io::read_dataset(dir / "test.jsonl");
    REQUIRE(back.size() == ds.size());
    CHECK(back.n_classes == 3);
    CHECK(back.shortcut_phrases == ds.shortcut_phrases);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.examples[i].text == ds.examples[i].text);
        CHECK(back.examples[i].label == ds.examples[i].label);
        CHECK(back.examples[i].group == ds.examples[i].group);
        CHECK(back.examples[i].shortcut_present == ds.examples[i].shortcut_present);
    }
    const auto manifest = io::read_json(io::manifest_path(dir / "test.jsonl"));
    CHECK(manifest.at("group_counts").get<std::vector<std::size_t>>() == ds.group_counts());
    io::write_text(dir / "bad.jsonl", "{\"label\": 1}\n");
    CHECK(code_of([&] { io::read_dataset(dir / "bad.jsonl"); }) == ErrorCode::schema_violation);
}

TEST_CASE("run configurations round-trip and hash deterministically") {
    pipeline::RunConfig c;
    c.seed = 11;
    c.adapt.rank = 4;
    const auto j = pipeline::to_json(c);
    const auto back = pipeline::config_from_json(j);
    CHECK(pipeline::to_json(back).dump() == j.dump());
    CHECK(pipeline::config_hash(back) == pipeline::config_hash(c));
    CHECK(pipeline::config_hash(c).size() == 16);
    auto d = c;
    d.seed = 12;
    CHECK(pipeline::config_hash(d) != pipeline::config_hash(c));
    CHECK(derive_seed(1, "train.init") != derive_seed(1, "adapt.init"));
    CHECK(derive_seed(1, "train.init") == derive_seed(1, "train.init"));
}

TEST_CASE("CLI exit codes follow the error taxonomy") {
    const auto dir = scratch("cli");
    CHECK(run_cli("theory-sim --num-chains 5 --alphabet-max 4 --seed 1 --out " + (dir / "th.csv").string()) == 0);
    CHECK(fs::exists(dir / "th.csv"));
    CHECK(run_cli("theory-sim --alphabet-max 40 --out " + (dir / "x.csv").string()) == 2);
    CHECK(run_cli("no-such-command") == 2);
    CHECK(run_cli("eval --model /nonexistent/model.json --data /nonexistent/d.jsonl --out " + dir.string()) == 5);

    auto j = io::model_json(small_checkpoint());
    j["format_version"] = 99;
    io::write_json(dir / "old.json", j);
    io::write_text(dir / "d.jsonl", "{\"text\": \"alpha beta\", \"label\": 0}\n");
    CHECK(run_cli("eval --model " + (dir / "old.json").string() + " --data " + (dir / "d.jsonl").string() +
                  " --out " + (dir / "r").string()) == 6);
    io::write_json(dir / "good.json", io::model_json(small_checkpoint()));
    CHECK(run_cli("eval --model " + (dir / "good.json").string() + " --alpha 1.5 --data " +
                  (dir / "d.jsonl").string() + " --out " + (dir / "r").string()) == 2);
    CHECK(run_cli("eval --model " + (dir / "good.json").string() + " --data " + (dir / "d.jsonl").string() +
                  " --out " + (dir / "r").string()) == 0);
    CHECK(fs::exists(dir / "r" / "report.json"));
}
