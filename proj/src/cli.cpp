#include "ssnn/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssnn/checkpoint.hpp"
#include "ssnn/config.hpp"
#include "ssnn/evaluate.hpp"
#include "ssnn/grad_check.hpp"
#include "ssnn/oracle.hpp"

namespace ssnn {

namespace {

using ordered_json = nlohmann::ordered_json;

FileFormat parse_format(const std::string& name) {
    if (name == "csv") return FileFormat::Csv;
    if (name == "raw") return FileFormat::RawF32;
    throw usage_error("unknown dataset format '" + name + "' (expected csv or raw)");
}

std::string data_extension(FileFormat f) { return f == FileFormat::Csv ? ".csv" : ".bin"; }

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::int64_t seed = -1;  // -1: keep config value

    CliConfig resolve() const {
        CliConfig cfg;
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const std::string& kv : overrides) cfg.apply_assignment(kv);
        if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
        return cfg;
    }
};

void add_common(CLI::App* cmd, CommonOptions& common) {
    cmd->add_option("--config", common.config_path, "flat section.key = value config file");
    cmd->add_option("--set", common.overrides, "override a config key, e.g. --set train.lr=0.01")
        ->take_all();
    cmd->add_option("--seed", common.seed, "seed controlling all randomness");
}

void write_json(const ordered_json& j, const std::string& path) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
        out << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

ordered_json report_to_json(const EvalReport& report, bool timings) {
    ordered_json j;
    j["report_version"] = report.report_version;
    j["elbo_samples"] = report.elbo_samples;
    ordered_json agg;
    agg["sequences"] = report.evaluated;
    if (report.has_error) {
        agg["error_mean"] = report.error_mean;
        agg["error_std"] = report.error_std;
    }
    agg["elbo_mean"] = report.elbo_mean;
    if (report.has_oracle) agg["oracle_ll_mean"] = report.oracle_ll_mean;
    j["aggregate"] = agg;
    if (!report.probe_r2.empty()) j["probe_r2"] = report.probe_r2;
    ordered_json rows = ordered_json::array();
    for (const SequenceEval& ev : report.per_sequence) {
        ordered_json row;
        row["id"] = ev.id;
        if (ev.has_error) {
            row["error_rate"] = ev.error_rate;
            row["decoder"] = ev.decoded_by_oracle ? "oracle-map" : "posterior";
        }
        row["elbo_mean"] = ev.elbo_mean;
        row["elbo_stderr"] = ev.elbo_stderr;
        if (ev.has_oracle) row["oracle_ll"] = ev.oracle_ll;
        rows.push_back(row);
    }
    j["per_sequence"] = rows;
    if (timings) j["runtime_ms"] = report.runtime_ms;
    return j;
}

void print_report_table(const EvalReport& report) {
    std::printf("%-16s %10s %14s %14s\n", "sequence", "error", "elbo", "oracle_ll");
    for (const SequenceEval& ev : report.per_sequence) {
        std::string err = ev.has_error ? std::to_string(ev.error_rate).substr(0, 6) : "-";
        std::string oll = ev.has_oracle ? std::to_string(ev.oracle_ll).substr(0, 12) : "-";
        std::printf("%-16s %10s %14.4f %14s\n", ev.id.c_str(), err.c_str(), ev.elbo_mean, oll.c_str());
    }
    if (report.has_error)
        std::printf("error rate: %.4f +- %.4f over %d sequences\n", report.error_mean, report.error_std,
                    report.evaluated);
    std::printf("mean elbo: %.4f", report.elbo_mean);
    if (report.has_oracle) std::printf("   mean oracle ll: %.4f", report.oracle_ll_mean);
    std::printf("\n");
    if (!report.probe_r2.empty()) {
        std::printf("probe R^2:");
        for (double r : report.probe_r2) std::printf(" %.4f", r);
        std::printf("\n");
    }
}

Dataset load_dataset(const std::string& path, const std::string& format, const std::string& truth_path) {
    Dataset data = read_dataset(path, parse_format(format));
    if (!truth_path.empty()) read_truth_sidecar(data, truth_path);
    return data;
}

int cmd_gen_data(const std::string& kind, const std::string& out_prefix, const std::string& format_name,
                 int count, int length, const CommonOptions& common) {
    CliConfig cfg = common.resolve();
    FileFormat format = parse_format(format_name);
    std::string data_path = out_prefix + data_extension(format);

    if (kind == "pendulum") {
        PendulumConfig pc = cfg.pendulum;
        if (length > 0) pc.duration = length * pc.dt;
        Rng rng(derive_seed(cfg.train.seed, hash_str("pendulum"), 0));
        PendulumDataset gen = generate_pendulum_dataset(pc, count, rng);
        write_dataset(gen.data, data_path, format);
        write_dataset(gen.probe_targets, out_prefix + ".targets.csv", FileFormat::Csv);
        std::printf("wrote %d pendulum sequences to %s (targets: %s)\n", count, data_path.c_str(),
                    (out_prefix + ".targets.csv").c_str());
        return 0;
    }
    if (kind == "ssnn") {
        Rng model_rng(derive_seed(cfg.train.seed, hash_str("model"), 0));
        GenerativeParams theta =
            GenerativeParams::random_init(cfg.train.dims, model_rng, cfg.train.no_self_transitions);
        InferenceParams phi = InferenceParams::random_init(cfg.train.dims, model_rng);
        Rng rng(derive_seed(cfg.train.seed, hash_str("ssnn-data"), 0));
        Dataset data = generate_ssnn_dataset(theta, count, length, rng);
        write_dataset(data, data_path, format);
        write_truth_sidecar(data, out_prefix + ".truth.csv");
        Checkpoint ckpt(cfg.train.dims, std::move(theta), std::move(phi));
        ckpt.config = cfg.train;
        write_checkpoint_file(ckpt, out_prefix + ".model.ckpt");
        std::printf("wrote %d sampled sequences to %s (truth: %s, model: %s)\n", count, data_path.c_str(),
                    (out_prefix + ".truth.csv").c_str(), (out_prefix + ".model.ckpt").c_str());
        return 0;
    }
    throw usage_error("unknown --kind '" + kind + "' (expected pendulum or ssnn)");
}

int cmd_train(const std::string& data_path, const std::string& format, const std::string& out_path,
              const std::string& history_path, bool timings, const CommonOptions& common) {
    CliConfig cfg = common.resolve();
    Dataset data = load_dataset(data_path, format, "");
    cfg.train.dims.m = data.obs_dim();

    NormStats stats = compute_norm_stats(data);
    apply_normalization(data, stats);

    Rng init(derive_seed(cfg.train.seed, hash_str("init"), 0));
    GenerativeParams theta =
        GenerativeParams::random_init(cfg.train.dims, init, cfg.train.no_self_transitions);
    InferenceParams phi = InferenceParams::random_init(cfg.train.dims, init);

    std::ofstream history;
    if (!history_path.empty()) {
        history.open(history_path, std::ios::trunc);
        if (!history) throw std::runtime_error("cannot open history file '" + history_path + "'");
    }
    IterationCallback on_iter = nullptr;
    if (history.is_open())
        on_iter = [&history, timings](const IterationRecord& rec) {
            ordered_json j;
            j["iteration"] = rec.iteration;
            j["elbo"] = rec.mean_elbo;
            j["tau"] = rec.tau;
            j["grad_norm"] = rec.grad_norm;
            if (timings) j["wall_ms"] = rec.wall_ms;
            history << j.dump() << "\n";
        };

    CheckpointWriter writer = [&](int iteration, const GenerativeParams& th, const InferenceParams& ph) {
        (void)iteration;
        Checkpoint ckpt(cfg.train.dims, th, ph);
        ckpt.config = cfg.train;
        ckpt.stats = stats;
        write_checkpoint_file(ckpt, out_path);
    };

    TrainResult result = train(data, theta, phi, cfg.train, on_iter, writer);
    if (result.aborted) {
        std::fprintf(stderr, "training aborted: %s (last good checkpoint retained at %s)\n",
                     result.abort_reason.c_str(), out_path.c_str());
        return 2;
    }
    if (!result.history.empty())
        std::printf("trained %d iterations; final mean elbo %.4f\n", cfg.train.iterations,
                    result.history.back().mean_elbo);
    std::printf("checkpoint written to %s\n", out_path.c_str());
    return 0;
}

int cmd_sample(const std::string& ckpt_path, int count, int length, const std::string& out_prefix,
               const std::string& format_name, const CommonOptions& common) {
    CliConfig cfg = common.resolve();
    Checkpoint ckpt = read_checkpoint_file(ckpt_path);
    FileFormat format = parse_format(format_name);

    Rng rng(derive_seed(cfg.train.seed, hash_str("sample"), 0));
    Dataset data = generate_ssnn_dataset(ckpt.theta, count, length, rng);
    if (ckpt.stats) {
        // the model lives in normalized space; emit raw-space observations
        for (Sequence& s : data.sequences)
            for (int t = 0; t < s.length(); ++t)
                for (int j = 0; j < s.obs_dim(); ++j)
                    s.x.at(t, j) = s.x.at(t, j) * ckpt.stats->std[static_cast<size_t>(j)] +
                                   ckpt.stats->mean[static_cast<size_t>(j)];
    }
    std::string data_path = out_prefix + data_extension(format);
    write_dataset(data, data_path, format);
    write_truth_sidecar(data, out_prefix + ".truth.csv");
    std::printf("sampled %d sequences of length %d to %s\n", count, length, data_path.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& format,
             const std::string& truth_path, const std::string& probe_path, const std::string& report_path,
             int elbo_samples, bool timings, bool require_error, bool no_oracle,
             const CommonOptions& common) {
    CliConfig cfg = common.resolve();
    Checkpoint ckpt = read_checkpoint_file(ckpt_path);
    Dataset data = load_dataset(data_path, format, truth_path);
    if (ckpt.stats) apply_normalization(data, *ckpt.stats);

    EvalOptions options;
    options.elbo_samples = elbo_samples;
    options.seed = cfg.train.seed;
    options.require_error = require_error;
    options.skip_oracle = no_oracle;
    if (!probe_path.empty()) options.probe_targets = read_dataset(probe_path, FileFormat::Csv);

    EvalReport report = evaluate(ckpt.theta, ckpt.phi, data, options);
    print_report_table(report);
    if (!report_path.empty()) write_json(report_to_json(report, timings), report_path);
    return 0;
}

int cmd_oracle(const std::string& ckpt_path, const std::string& data_path, const std::string& format,
               const std::string& out_path, const std::string& map_out, bool streaming,
               const CommonOptions& common) {
    (void)common;
    Checkpoint ckpt = read_checkpoint_file(ckpt_path);
    Dataset data = load_dataset(data_path, format, "");
    if (ckpt.stats) apply_normalization(data, *ckpt.stats);

    OracleOptions opts;
    opts.streaming = streaming;
    ordered_json rows = ordered_json::array();
    Dataset with_paths = data;
    for (int i = 0; i < data.size(); ++i) {
        const Sequence& seq = data.sequences[static_cast<size_t>(i)];
        double ll = exact_log_likelihood(seq, ckpt.theta, opts);
        LatentPath map = map_segmentation(seq, ckpt.theta);
        double map_score = joint_log_prob(seq, map, ckpt.theta);
        ordered_json row;
        row["id"] = seq.id;
        row["log_likelihood"] = ll;
        row["map_log_joint"] = map_score;
        rows.push_back(row);
        with_paths.sequences[static_cast<size_t>(i)].truth = map;
        std::printf("%-16s  log-likelihood %14.6f  map joint %14.6f\n", seq.id.c_str(), ll, map_score);
    }
    if (!out_path.empty()) {
        ordered_json j;
        j["report_version"] = 1;
        j["sequences"] = rows;
        write_json(j, out_path);
    }
    if (!map_out.empty()) write_truth_sidecar(with_paths, map_out);
    return 0;
}

int cmd_gradcheck(int T, int K, int M, int m, int h, int e, int q, double tau, double step,
                  const CommonOptions& common) {
    CliConfig cfg = common.resolve();
    ModelDims dims;
    dims.K = K;
    dims.M = M;
    dims.m = m;
    dims.h = h;
    dims.e = e;
    dims.q = q;

    Rng init(derive_seed(cfg.train.seed, hash_str("gradcheck"), 0));
    GenerativeParams theta = GenerativeParams::random_init(dims, init);
    InferenceParams phi = InferenceParams::random_init(dims, init);
    Sequence seq;
    seq.id = "gradcheck";
    seq.x = Tensor(Shape{T, m});
    for (std::int64_t i = 0; i < seq.x.numel(); ++i) seq.x[i] = init.normal();

    // freeze one Gumbel realization, then audit the relaxed estimator
    Rng noise(derive_seed(cfg.train.seed, hash_str("gradcheck-noise"), 0));
    ad::Tape probe;
    ElboGraph realized =
        build_elbo_graph(probe, seq, theta, phi, Temperature(tau), TrainMode::Relaxed, &noise);
    RelaxedPath frozen = realized.path;

    LossBuilder loss = [&](ad::Tape& t, const ParamStore&) {
        return build_elbo_graph(t, seq, theta, phi, Temperature(tau), TrainMode::Relaxed, nullptr, &frozen)
            .elbo;
    };
    GradCheckReport rt = grad_check_report(loss, theta.store(), step);
    GradCheckReport rp = grad_check_report(loss, phi.store(), step);
    std::printf("theta max rel error: %.3e (%s[%d])\n", rt.max_rel_error, rt.worst_param.c_str(),
                rt.worst_entry);
    std::printf("phi   max rel error: %.3e (%s[%d])\n", rp.max_rel_error, rp.worst_param.c_str(),
                rp.worst_entry);
    bool ok = rt.max_rel_error < 1e-4 && rp.max_rel_error < 1e-4;
    std::printf("%s\n", ok ? "PASS" : "FAIL");
    return ok ? 0 : 2;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"stochastic sequential neural network: training, inference, and exact oracles"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset (pendulum or sampled model)");
    std::string gen_kind, gen_out, gen_format = "csv";
    int gen_count = 10, gen_length = 100;
    CommonOptions gen_common;
    gen->add_option("--kind", gen_kind, "pendulum | ssnn")->required();
    gen->add_option("--out", gen_out, "output path prefix")->required();
    gen->add_option("--format", gen_format, "csv | raw");
    gen->add_option("--count", gen_count, "number of sequences");
    gen->add_option("--length", gen_length, "sequence length T");
    add_common(gen, gen_common);

    // train
    auto* tr = app.add_subcommand("train", "train a model on a dataset");
    std::string tr_data, tr_format = "csv", tr_out, tr_history;
    bool tr_timings = false;
    CommonOptions tr_common;
    tr->add_option("--data", tr_data, "input dataset")->required();
    tr->add_option("--format", tr_format, "csv | raw");
    tr->add_option("--out", tr_out, "checkpoint output path")->required();
    tr->add_option("--history", tr_history, "JSON-lines training history output");
    tr->add_flag("--timings", tr_timings, "include wall-clock times in the history");
    add_common(tr, tr_common);

    // sample
    auto* sa = app.add_subcommand("sample", "sample sequences from a checkpoint");
    std::string sa_ckpt, sa_out, sa_format = "csv";
    int sa_count = 10, sa_length = 100;
    CommonOptions sa_common;
    sa->add_option("--ckpt", sa_ckpt, "model checkpoint")->required();
    sa->add_option("--count", sa_count, "number of sequences");
    sa->add_option("--length", sa_length, "sequence length T");
    sa->add_option("--out", sa_out, "output path prefix")->required();
    sa->add_option("--format", sa_format, "csv | raw");
    add_common(sa, sa_common);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_format = "csv", ev_truth, ev_probe, ev_report;
    int ev_samples = 64;
    bool ev_timings = false, ev_require_error = false, ev_no_oracle = false;
    CommonOptions ev_common;
    ev->add_option("--ckpt", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--data", ev_data, "input dataset")->required();
    ev->add_option("--format", ev_format, "csv | raw");
    ev->add_option("--truth", ev_truth, "ground-truth sidecar csv");
    ev->add_option("--probe-targets", ev_probe, "per-frame regression targets (csv dataset)");
    ev->add_option("--report", ev_report, "JSON report output path");
    ev->add_option("--elbo-samples", ev_samples, "posterior samples per sequence");
    ev->add_flag("--timings", ev_timings, "include runtimes in the report");
    ev->add_flag("--require-error", ev_require_error, "fail when truth paths are missing");
    ev->add_flag("--no-oracle", ev_no_oracle, "force posterior decoding");
    add_common(ev, ev_common);

    // oracle
    auto* orc = app.add_subcommand("oracle", "exact log-likelihoods and MAP segmentations");
    std::string orc_ckpt, orc_data, orc_format = "csv", orc_out, orc_map;
    bool orc_streaming = false;
    CommonOptions orc_common;
    orc->add_option("--ckpt", orc_ckpt, "model checkpoint")->required();
    orc->add_option("--data", orc_data, "input dataset")->required();
    orc->add_option("--format", orc_format, "csv | raw");
    orc->add_option("--out", orc_out, "JSON report output path");
    orc->add_option("--map-out", orc_map, "write MAP paths as a sidecar csv");
    orc->add_flag("--streaming", orc_streaming, "low-memory segment scoring");
    add_common(orc, orc_common);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of the ELBO gradients");
    gc->set_help_flag("--help", "print help");  // frees --h for the recurrent dim
    int gc_T = 4, gc_K = 2, gc_M = 2, gc_m = 2, gc_h = 3, gc_e = 3, gc_q = 3;
    double gc_tau = 0.5, gc_step = 1e-5;
    CommonOptions gc_common;
    gc->add_option("--T", gc_T, "sequence length");
    gc->add_option("--K", gc_K, "state count");
    gc->add_option("--M", gc_M, "duration bound");
    gc->add_option("--obs-dim", gc_m, "observation dim");
    gc->add_option("--h", gc_h, "recurrent dim");
    gc->add_option("--e", gc_e, "encoder dim");
    gc->add_option("--q", gc_q, "summary dim");
    gc->add_option("--tau", gc_tau, "gumbel-softmax temperature");
    gc->add_option("--step", gc_step, "finite-difference step");
    add_common(gc, gc_common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_kind, gen_out, gen_format, gen_count, gen_length, gen_common);
        if (tr->parsed()) return cmd_train(tr_data, tr_format, tr_out, tr_history, tr_timings, tr_common);
        if (sa->parsed()) return cmd_sample(sa_ckpt, sa_count, sa_length, sa_out, sa_format, sa_common);
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_data, ev_format, ev_truth, ev_probe, ev_report, ev_samples,
                            ev_timings, ev_require_error, ev_no_oracle, ev_common);
        if (orc->parsed())
            return cmd_oracle(orc_ckpt, orc_data, orc_format, orc_out, orc_map, orc_streaming, orc_common);
        if (gc->parsed())
            return cmd_gradcheck(gc_T, gc_K, gc_M, gc_m, gc_h, gc_e, gc_q, gc_tau, gc_step, gc_common);
    } catch (const usage_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}

}  // namespace ssnn
