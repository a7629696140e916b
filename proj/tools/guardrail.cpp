// guardrail: data generation, training, attribution, adaptation, calibration,
// evaluation and theory simulation from the command line.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "guardrail/attribution.hpp"
#include "guardrail/pipeline.hpp"
#include "guardrail/theorylab.hpp"

namespace fs = std::filesystem;
using namespace guardrail;
using io::json;

namespace {

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("guardrail");
    logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    spdlog::set_default_logger(logger);
    const char* env = std::getenv("GUARDRAIL_LOG");
    const std::string level = env ? env : "info";
    if (level == "error") spdlog::set_level(spdlog::level::err);
    else if (level == "debug") spdlog::set_level(spdlog::level::debug);
    else spdlog::set_level(spdlog::level::info);
}

pipeline::RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
    pipeline::RunConfig c = path.empty() ? pipeline::RunConfig{} : pipeline::config_from_json(io::read_json(path));
    if (seed) c.seed = *seed;
    return c;
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
    fs::path out = p;
    out.replace_extension(suffix);
    return out;
}

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string model;
    std::string data;
    std::string adapter_path;
    std::string trace;
    std::string csv;
    std::optional<double> alpha;
    std::optional<std::size_t> k;
    std::optional<double> tau;
    std::optional<double> lr;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> rank;
    std::optional<std::size_t> batch_size;
    std::size_t num_chains = 200;
    std::size_t alphabet_max = 8;
};

void cmd_gen_data(const Options& o) {
    const auto c = load_config(o.config, o.seed);
    const auto splits = pipeline::generate(c);
    const fs::path dir = o.out;
    const auto h = pipeline::header(c, "dataset");
    io::write_dataset(dir / "train.jsonl", splits.train, h);
    io::write_dataset(dir / "adapt.jsonl", splits.adapt, h);
    io::write_dataset(dir / "support.jsonl", splits.support, h);
    io::write_dataset(dir / "test.jsonl", splits.test, h);
    json cfg = pipeline::to_json(c);
    cfg["format_version"] = io::format_version;
    io::write_json(dir / "config.json", cfg);
    spdlog::info("wrote {} / {} / {} / {} examples to {}", splits.train.size(), splits.adapt.size(),
                 splits.support.size(), splits.test.size(), dir.string());
}

void cmd_train(const Options& o) {
    auto c = load_config(o.config, o.seed);
    if (o.epochs) c.train.epochs = *o.epochs;
    if (o.lr) c.train.lr = *o.lr;
    if (o.batch_size) c.train.batch_size = *o.batch_size;
    const auto ds = io::read_dataset(o.data);
    const auto out = pipeline::train(c, ds);
    for (const auto& e : out.trace)
        spdlog::info("epoch {}: loss {:.4f}, train accuracy {:.3f}", e.epoch, e.mean_loss, e.train_accuracy);
    io::write_json(o.out, io::model_json(out.checkpoint));
    spdlog::info("wrote {} ({} parameters)", o.out, out.checkpoint.model.parameter_count());
}

void cmd_attribute(const Options& o) {
    const auto ck = io::model_from_json(io::read_json(o.model));
    const auto ds = io::read_dataset(o.data);
    const std::size_t k = o.k.value_or(10);
    const auto encoded = bench::encode(ds, ck.vocabulary, ck.model.config.max_len, false);
    std::string lines;
    for (std::size_t i = 0; i < encoded.size(); ++i) {
        const auto s = attribution::saliency(ck.model, encoded[i]);
        const auto h = attribution::top_k(s, k);
        lines += json{{"input_id", i},
                      {"tokens", encoded[i].tokens},
                      {"scores", s.scores},
                      {"predicted", s.predicted},
                      {"topk_positions", h.positions}}
                     .dump();
        lines += '\n';
    }
    io::write_text(o.out, lines);
    spdlog::info("wrote attributions for {} inputs to {}", encoded.size(), o.out);
}

void cmd_adapt(const Options& o) {
    auto c = load_config(o.config, o.seed);
    if (o.k) c.adapt.k = *o.k;
    if (o.tau) c.adapt.temperature = *o.tau;
    if (o.lr) c.adapt.lr = *o.lr;
    if (o.epochs) c.adapt.epochs = *o.epochs;
    if (o.rank) c.adapt.rank = *o.rank;
    if (o.batch_size) c.adapt.batch_size = *o.batch_size;
    const auto ck = io::model_from_json(io::read_json(o.model));
    const auto ds = io::read_dataset(o.data);
    const auto inputs = bench::encode(ds, ck.vocabulary, ck.model.config.max_len, false);
    const auto out = pipeline::adapt(c, ck.model, inputs);
    spdlog::info("contrastive loss {:.4f} -> {:.4f} over {} steps", out.initial_loss, out.final_loss, out.trace.size());
    io::write_json(o.out, io::adapter_json(out.checkpoint));
    const fs::path trace = o.trace.empty() ? sibling(o.out, ".trace.json") : fs::path(o.trace);
    io::write_json(trace, pipeline::trace_json(out, pipeline::header(c, "adapt_trace")));
    spdlog::info("wrote {} and {}", o.out, trace.string());
}

void cmd_calibrate(const Options& o) {
    const auto ck = io::model_from_json(io::read_json(o.model));
    auto ad = io::adapter_from_json(io::read_json(o.adapter_path));
    io::check_compatible(ck.model, ad.adapter);
    const auto ds = io::read_dataset(o.data);
    const auto support = bench::encode(ds, ck.vocabulary, ck.model.config.max_len);
    const auto result = calibrate::calibrate(ck.model, ad.adapter, {support});
    ad.adapter.calibrated_alpha = result.selected_alpha;
    const fs::path out = o.out.empty() ? sibling(o.adapter_path, ".calibrated.json") : fs::path(o.out);
    io::write_json(out, io::adapter_json(ad));
    const fs::path csv = o.csv.empty() ? sibling(out, ".csv") : fs::path(o.csv);
    io::write_text(csv, pipeline::calibration_csv(result));
    spdlog::info("selected alpha {} (support accuracy {:.3f}); wrote {} and {}", result.selected_alpha,
                 result.selected_accuracy, out.string(), csv.string());
}

void cmd_eval(const Options& o) {
    const auto ck = io::model_from_json(io::read_json(o.model));
    std::optional<io::AdapterCheckpoint> ad;
    if (!o.adapter_path.empty()) {
        ad = io::adapter_from_json(io::read_json(o.adapter_path));
        io::check_compatible(ck.model, ad->adapter);
    }
    double alpha = 0.0;
    if (o.alpha) alpha = *o.alpha;
    else if (ad && ad->adapter.calibrated_alpha) alpha = *ad->adapter.calibrated_alpha;
    (void)adapter::BlendSpec(alpha);
    require(alpha == 0.0 || ad.has_value(), ErrorCode::missing_input, "eval: alpha > 0 needs --adapter");
    const auto ds = io::read_dataset(o.data);
    const auto h = io::ArtifactHeader{"report", ck.header.seed, ck.header.config_hash};
    const auto report = pipeline::evaluate(ck, ad ? &ad->adapter : nullptr, alpha, ds, o.k.value_or(10), h);
    const fs::path dir = o.out;
    io::write_json(dir / "report.json", report);
    io::write_text(dir / "report.csv", pipeline::report_csv(report));
    spdlog::info("alpha {}: accuracy {:.3f}, worst-group {:.3f}, MSTPS {:.4f}", alpha,
                 report.at("accuracy").get<double>(), report.at("worst_group_accuracy").get<double>(),
                 report.at("mstps").get<double>());
}

void cmd_theory_sim(const Options& o) {
    Rng rng(derive_seed(o.seed.value_or(0), "theory-sim"));
    std::ostringstream os;
    os << "chain,alphabet,h_s,i_data,i_theta,i_g,delta_i,l_deploy_raw,l_train_raw,l_deploy,l_train,"
          "bayes_error_theta,bayes_error_data,dpi_holds,ordering_holds,bayes_dominates_fano\n";
    std::size_t violations = 0;
    for (std::size_t n = 0; n < o.num_chains; ++n) {
        const auto r = theory::analyze_chain(theory::random_chain(o.alphabet_max, rng));
        const bool dpi = r.i_g <= r.i_theta + 1e-10 && r.i_theta <= r.i_data + 1e-10;
        const bool ordering = r.l_deploy_raw >= r.l_train_raw;
        const bool fano = r.bayes_error_theta >= r.l_deploy && r.bayes_error_data >= r.l_train;
        violations += !(dpi && ordering && fano);
        auto num = [](double v) { return json(v).dump(); };
        os << n << ',' << r.alphabet << ',' << num(r.h_s) << ',' << num(r.i_data) << ',' << num(r.i_theta) << ','
           << num(r.i_g) << ',' << num(r.delta_i) << ',' << (std::isfinite(r.l_deploy_raw) ? num(r.l_deploy_raw) : "-inf")
           << ',' << (std::isfinite(r.l_train_raw) ? num(r.l_train_raw) : "-inf") << ',' << num(r.l_deploy) << ','
           << num(r.l_train) << ',' << num(r.bayes_error_theta) << ',' << num(r.bayes_error_data) << ',' << dpi
           << ',' << ordering << ',' << fano << '\n';
    }
    io::write_text(o.out, os.str());
    spdlog::info("{} chains, {} with a violated inequality; wrote {}", o.num_chains, violations, o.out);
}

void cmd_pipeline(const Options& o) {
    const auto c = load_config(o.config, o.seed);
    const auto result = pipeline::run(c, [](const std::string& m) { spdlog::info("{}", m); });
    pipeline::write_artifacts(o.out, c, result);
    const auto& erm = result.erm_report;
    const auto& sg = result.guardrail_report;
    spdlog::info("ERM: accuracy {:.3f}, worst-group {:.3f}; guardrail (alpha {}): accuracy {:.3f}, worst-group {:.3f}",
                 erm.at("accuracy").get<double>(), erm.at("worst_group_accuracy").get<double>(),
                 result.calibration.selected_alpha, sg.at("accuracy").get<double>(),
                 sg.at("worst_group_accuracy").get<double>());
    spdlog::info("wrote {}", (fs::path(o.out) / "report.json").string());
}

int report_error(ErrorCode code, const std::string& message) {
    std::cerr << json{{"error", {{"code", static_cast<int>(code)}, {"kind", to_string(code)}, {"message", message}}}}.dump()
              << '\n';
    return static_cast<int>(code);
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Shortcut mitigation toolkit for small text classifiers"};
    app.require_subcommand(1);
    Options o;

    auto seed_opt = [&](CLI::App* s) { s->add_option("--seed", o.seed, "Global seed"); };
    auto config_opt = [&](CLI::App* s) { s->add_option("--config", o.config, "Run configuration (JSON)")->check(CLI::ExistingFile); };

    auto* gen = app.add_subcommand("gen-data", "Generate train/adapt/support/test splits");
    config_opt(gen);
    seed_opt(gen);
    gen->add_option("--out", o.out, "Output directory")->required();

    auto* tr = app.add_subcommand("train", "Train the base classifier (ERM)");
    config_opt(tr);
    seed_opt(tr);
    tr->add_option("--train-file", o.data, "Training split (JSONL)")->required();
    tr->add_option("--epochs", o.epochs);
    tr->add_option("--lr", o.lr);
    tr->add_option("--batch-size", o.batch_size);
    tr->add_option("--out", o.out, "Model checkpoint path")->required();

    auto* at = app.add_subcommand("attribute", "Gradient x input saliency and top-k tokens");
    at->add_option("--model", o.model)->required();
    at->add_option("--data", o.data, "Inputs (JSONL)")->required();
    at->add_option("--k", o.k);
    at->add_option("--out", o.out, "Output JSONL")->required();

    auto* ad = app.add_subcommand("adapt", "Train the low-rank adapter on unlabeled inputs");
    config_opt(ad);
    seed_opt(ad);
    ad->add_option("--model", o.model)->required();
    ad->add_option("--test-file", o.data, "Unlabeled inputs (JSONL)")->required();
    ad->add_option("--k", o.k);
    ad->add_option("--tau", o.tau);
    ad->add_option("--lr", o.lr);
    ad->add_option("--epochs", o.epochs);
    ad->add_option("--rank", o.rank);
    ad->add_option("--batch-size", o.batch_size);
    ad->add_option("--out", o.out, "Adapter checkpoint path")->required();
    ad->add_option("--trace", o.trace, "Loss trace path (default: <out>.trace.json)");

    auto* ca = app.add_subcommand("calibrate", "Select the blending strength on a labeled support set");
    ca->add_option("--model", o.model)->required();
    ca->add_option("--adapter", o.adapter_path)->required();
    ca->add_option("--support-file", o.data)->required();
    ca->add_option("--out", o.out, "Calibrated adapter path (default: <adapter>.calibrated.json)");
    ca->add_option("--csv", o.csv, "Per-alpha accuracy CSV");

    auto* ev = app.add_subcommand("eval", "Accuracy, worst-group accuracy, MSTPS and error decomposition");
    ev->add_option("--model", o.model)->required();
    ev->add_option("--adapter", o.adapter_path);
    ev->add_option("--alpha", o.alpha, "Blending strength (default: calibrated value or 0)");
    ev->add_option("--data", o.data)->required();
    ev->add_option("--k", o.k);
    ev->add_option("--out", o.out, "Report directory")->required();

    auto* th = app.add_subcommand("theory-sim", "Exact information bounds on random Markov chains");
    seed_opt(th);
    th->add_option("--num-chains", o.num_chains);
    th->add_option("--alphabet-max", o.alphabet_max)->check(CLI::Range(2, 16));
    th->add_option("--out", o.out, "Output CSV")->required();

    auto* pl = app.add_subcommand("pipeline", "gen-data, train, adapt, calibrate and eval in one run");
    config_opt(pl);
    seed_opt(pl);
    pl->add_option("--out", o.out, "Run directory")->default_val("run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error(ErrorCode::invalid_argument, e.what());
    }

    try {
        if (*gen) cmd_gen_data(o);
        else if (*tr) cmd_train(o);
        else if (*at) cmd_attribute(o);
        else if (*ad) cmd_adapt(o);
        else if (*ca) cmd_calibrate(o);
        else if (*ev) cmd_eval(o);
        else if (*th) cmd_theory_sim(o);
        else if (*pl) cmd_pipeline(o);
    } catch (const Error& e) {
        return report_error(e.code(), e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return report_error(ErrorCode::io_failure, e.what());
    }
    return 0;
}
