// hicodit_cli: gen-data / train / sample / eval / verify
//
// Exit codes: 0 success, 1 verification failure, 2 runtime fault (including
// usage errors).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hicodit/checkpoint.hpp"
#include "hicodit/config.hpp"
#include "hicodit/corpus_io.hpp"
#include "hicodit/eval.hpp"
#include "hicodit/parallel.hpp"
#include "hicodit/verify.hpp"

using namespace hicodit;

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kFault = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string sidecar_path(const std::string& corpus, const std::string& given) {
    return given.empty() ? corpus + ".conditions.jsonl" : given;
}

ExperimentConfig config_or_default(const std::string& path) { return path.empty() ? ExperimentConfig{} : load_config(path); }

struct GuidanceFlags {
    std::optional<double> w_all, w_id, w_emo, w_lip;
    std::optional<int> steps;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--w-all", w_all, "joint guidance weight");
        cmd->add_option("--w-id", w_id, "identity guidance weight");
        cmd->add_option("--w-emo", w_emo, "emotion guidance weight");
        cmd->add_option("--w-lip", w_lip, "lip guidance weight");
        cmd->add_option("--steps", steps, "Euler steps (default 64)");
    }

    GuidanceConfig apply(GuidanceConfig g) const {
        if (w_all) g.w_all = *w_all;
        if (w_id) g.w_id = *w_id;
        if (w_emo) g.w_emo = *w_emo;
        if (w_lip) g.w_lip = *w_lip;
        if (steps) g.steps = *steps;
        g.validate();
        return g;
    }
};

void check_header(const TokenCorpus& c, const SynthSpec& spec, const std::string& what) {
    const CorpusHeader want{spec.levels, spec.frames, spec.vocab, spec.split};
    if (!(c.header == want)) throw std::runtime_error("config mismatch: " + what + " header does not match state_space");
}

void check_record_shapes(const std::vector<ConditionRecord>& recs, const NetworkConfig& nc) {
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& b = recs[i].bundle;
        const std::string where = "conditions record " + std::to_string(i + 1) + ": ";
        if (b.lip && (b.lip->rows() != nc.frames || b.lip->cols() != nc.lip_dim)) throw std::runtime_error(where + "lip shape mismatch");
        if (b.id && b.id->size() != nc.id_dim) throw std::runtime_error(where + "id dimension mismatch");
        if (recs[i].face && recs[i].face->size() != nc.face_dim) throw std::runtime_error(where + "face dimension mismatch");
        if (b.emo) {
            if (static_cast<int>(b.emo->size()) != nc.emotion_frames()) throw std::runtime_error(where + "emotion count mismatch");
            for (int e : *b.emo) {
                if (e < 0 || e >= nc.emo_classes) throw std::runtime_error(where + "emotion label out of range");
            }
        }
    }
}

// Loads the checkpoint and checks it against the config when one is given.
ScoreNetwork load_model(const std::string& ckpt, const std::string& config_path, NoiseSchedule& sched) {
    ScoreNetwork net = load_checkpoint(ckpt, &sched);
    if (!config_path.empty()) {
        const ExperimentConfig cfg = load_config(config_path);
        NetworkConfig want = cfg.network_config();
        want.variant = net.config().variant;  // variant may come from an ablation flag at train time
        if (!(want == net.config())) throw std::runtime_error("checkpoint/config mismatch: network shape differs");
        if (!same_schedule(cfg.schedule, sched)) throw std::runtime_error("checkpoint/config mismatch: schedule differs");
    }
    return net;
}

int cmd_gen_data(const std::string& config_path, const std::string& out, std::optional<int> n, std::optional<std::uint64_t> seed,
                 std::uint64_t stream) {
    ExperimentConfig cfg = config_or_default(config_path);
    if (seed) cfg.synth.seed = *seed;
    const int count = n.value_or(cfg.train_examples);
    if (count < 1) throw UsageError("gen-data: -n must be >= 1");
    const SynthSpec spec = cfg.synth_spec();
    const auto samples = generate(spec, count, stream);
    write_corpus_file(out, to_corpus(spec, samples));
    const std::string side = sidecar_path(out, "");
    std::ofstream sc(side);
    if (!sc) throw std::runtime_error("cannot open '" + side + "' for writing");
    write_sidecar(sc, samples);
    if (!sc) throw std::runtime_error("write failed for '" + side + "'");
    std::printf("wrote %d records to %s and %s\n", count, out.c_str(), side.c_str());
    return kOk;
}

struct TrainArgs {
    std::string config, corpus, conditions, out, metrics;
    std::optional<int> iters;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
    bool flat = false, single_scale = false, stable_csv = false;
    int nan_at = -1;
};

int cmd_train(const TrainArgs& a) {
    ExperimentConfig cfg = config_or_default(a.config);
    if (a.iters) cfg.train.iters = *a.iters;
    if (a.lr) cfg.train.lr = *a.lr;
    if (a.seed) cfg.train.seed = *a.seed;
    if (a.flat && a.single_scale) throw UsageError("train: --flat-ablation and --single-scale-adaln are exclusive");
    if (a.flat) cfg.network.variant = NetworkVariant::flat;
    if (a.single_scale) cfg.network.variant = NetworkVariant::single_scale;
    cfg.validate();

    const TokenCorpus corpus = read_corpus_file(a.corpus);
    check_header(corpus, cfg.synth_spec(), "corpus");
    const auto recs = read_sidecar_file(sidecar_path(a.corpus, a.conditions));
    if (recs.size() != corpus.grids.size()) throw std::runtime_error("corpus and conditions file have different record counts");
    ScoreNetwork net = make_network(cfg);
    check_record_shapes(recs, net.config());
    std::vector<TrainingExample> data;
    for (std::size_t i = 0; i < recs.size(); ++i) data.push_back(training_example(corpus.grids[i], recs[i]));

    const std::string metrics = a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;
    std::ofstream csv(metrics);
    if (!csv) throw std::runtime_error("cannot open '" + metrics + "' for writing");
    TrainHooks hooks;
    hooks.csv = &csv;
    hooks.stable_csv = a.stable_csv;
    if (a.nan_at >= 0) {
        hooks.on_iter = [&](const IterationMetrics& m) {
            if (m.iter == a.nan_at) net.parameters()[0].setConstant(std::nan(""));
        };
    }
    const TrainResult res = train_loop(cfg.train, data, net, cfg.schedule, hooks);
    csv.flush();
    if (res.non_finite) {
        std::fprintf(stderr, "error: non-finite loss at iteration %d; last good iteration %d\n", res.last.iter,
                     res.last_good_iter);
        return kFault;
    }
    save_checkpoint(a.out, net, cfg.schedule);
    std::printf("trained %d iterations (%s); final dse %.6f id %.6f; checkpoint %s, metrics %s\n", res.iterations,
                to_string(net.config().variant).c_str(), res.last.dse_loss, res.last.id_loss, a.out.c_str(), metrics.c_str());
    return kOk;
}

struct SampleArgs {
    std::string config, ckpt, conditions, out;
    bool oracle = false;
    GuidanceFlags guidance;
    std::uint64_t seed = 0;
    int batch = 64;
};

int cmd_sample(const SampleArgs& a, int threads) {
    const auto recs = read_sidecar_file(a.conditions);
    if (recs.empty()) throw std::runtime_error("conditions file has no records");
    NoiseSchedule sched;
    GuidanceConfig g;
    if (!a.config.empty()) g = load_config(a.config).guidance;
    g = a.guidance.apply(g);
    std::vector<TokenGrid> grids;
    SynthSpec spec;
    if (a.oracle) {
        if (a.config.empty()) throw UsageError("sample: --oracle needs --config");
        const ExperimentConfig cfg = load_config(a.config);
        spec = cfg.synth_spec();
        sched = cfg.schedule;
        check_record_shapes(recs, cfg.network_config());
        const SynthOracle oracle(spec);
        const OracleScoreModel model(oracle, sched, 1 << 16);
        std::vector<ConditionBundle> conds;
        for (const auto& r : recs) conds.push_back(inference_conditions(r, nullptr));
        grids = sample(model, conds, g, sched, a.seed, {threads, a.batch});
    } else {
        if (a.ckpt.empty()) throw UsageError("sample: --ckpt or --oracle is required");
        const ScoreNetwork net = load_model(a.ckpt, a.config, sched);
        check_record_shapes(recs, net.config());
        const NetworkScoreModel model(net, sched);
        std::vector<ConditionBundle> conds;
        for (const auto& r : recs) conds.push_back(inference_conditions(r, &net));
        grids = sample(model, conds, g, sched, a.seed, {threads, a.batch});
        const auto& c = net.config();
        spec.levels = c.levels;
        spec.frames = c.frames;
        spec.vocab = c.vocab;
        spec.split = c.split;
    }
    TokenCorpus out;
    out.header = {spec.levels, spec.frames, spec.vocab, spec.split};
    out.grids = std::move(grids);
    write_corpus_file(a.out, out);
    std::printf("wrote %zu samples (%d steps) to %s\n", out.grids.size(), g.steps, a.out.c_str());
    return kOk;
}

struct EvalArgs {
    std::string config, ckpt, corpus, conditions, out;
    bool oracle = false;
    GuidanceFlags guidance;
    int samples = 1000;
    std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a, int threads) {
    if (a.config.empty()) throw UsageError("eval: --config is required");
    if (a.oracle == !a.ckpt.empty()) throw UsageError("eval: give exactly one of --ckpt and --oracle");
    const ExperimentConfig cfg = load_config(a.config);
    const SynthSpec spec = cfg.synth_spec();
    const TokenCorpus corpus = read_corpus_file(a.corpus);
    check_header(corpus, spec, "corpus");
    const auto recs = read_sidecar_file(sidecar_path(a.corpus, a.conditions));
    if (recs.size() != corpus.grids.size()) throw std::runtime_error("corpus and conditions file have different record counts");
    check_record_shapes(recs, cfg.network_config());
    std::vector<LabeledExample> data;
    for (std::size_t i = 0; i < recs.size(); ++i) data.push_back(labeled(corpus.grids[i], recs[i]));

    const SynthOracle oracle(spec);
    NoiseSchedule sched = cfg.schedule;
    std::optional<ScoreNetwork> net;
    std::unique_ptr<ScoreModel> model;
    if (a.oracle) {
        model = std::make_unique<OracleScoreModel>(oracle, sched, 1 << 16);
    } else {
        net.emplace(load_model(a.ckpt, a.config, sched));
        model = std::make_unique<NetworkScoreModel>(*net, sched);
    }
    const OracleScoreModel oracle_model(oracle, sched, 1 << 16);

    std::vector<std::pair<std::string, double>> rows;
    const CorruptedSet cu = corrupt_uniform(data, sched, derive_seed(a.seed, 1), cfg.train.t_floor);
    rows.emplace_back("heldout_dse", heldout_dse(*model, data, cu, sched));
    rows.emplace_back("oracle_dse", heldout_dse(oracle_model, data, cu, sched));
    const CorruptedSet ch = corrupt_half(data, sched, derive_seed(a.seed, 2));
    const LevelAccuracy acc = argmax_accuracy(*model, data, ch);
    const LevelAccuracy bayes = bayes_argmax_rate(oracle, data, ch);
    for (int r = 0; r < spec.levels; ++r) rows.emplace_back("accuracy_level" + std::to_string(r), acc.accuracy[static_cast<std::size_t>(r)]);
    rows.emplace_back("accuracy", acc.overall);
    rows.emplace_back("bayes_rate", bayes.overall);
    rows.emplace_back("accuracy_positions", static_cast<double>(std::accumulate(acc.count.begin(), acc.count.end(), 0L)));

    const GuidanceConfig g = a.guidance.apply(cfg.guidance);
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, a.samples)), data.size());
    if (n > 0) {
        std::vector<ConditionBundle> conds;
        std::vector<LabeledExample> truth(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n));
        for (std::size_t i = 0; i < n; ++i) conds.push_back(inference_conditions(recs[i], net ? &*net : nullptr));
        const auto grids = sample(*model, conds, g, sched, derive_seed(a.seed, 3), {threads, 64});
        const Agreement ag = agreement(oracle, grids, truth);
        rows.emplace_back("lip_agreement", ag.lip);
        rows.emplace_back("emotion_agreement", ag.emotion);
        if (enumerable(spec)) {
            // Unconditional samples against the exact marginal of the generator.
            const std::vector<ConditionBundle> none(n);
            const auto un = sample(*model, none, g, sched, derive_seed(a.seed, 4), {threads, 64});
            rows.emplace_back("sample_tv", tv_distance(empirical_distribution(oracle, un), oracle.grid_distribution({})));
        }
    }
    std::ofstream csv(a.out);
    if (!csv) throw std::runtime_error("cannot open '" + a.out + "' for writing");
    csv << "metric,value\n";
    for (const auto& [k, v] : rows) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.10g", v);
        csv << k << ',' << buf << '\n';
        std::printf("%-20s %s\n", k.c_str(), buf);
    }
    if (!csv) throw std::runtime_error("write failed for '" + a.out + "'");
    return kOk;
}

int cmd_verify(const std::string& config_path, const std::string& only, const std::string& fault, int threads) {
    const ExperimentConfig cfg = config_or_default(config_path);
    Fault f = Fault::none;
    if (fault == "sigma-bar-nonmonotone") {
        f = Fault::sigma_bar_nonmonotone;
    } else if (!fault.empty()) {
        throw UsageError("verify: unknown fault '" + fault + "'");
    }
    const auto t0 = std::chrono::steady_clock::now();
    int failed = 0;
    std::vector<Check> checks;
    try {
        checks = run_verify(cfg, only, f, threads);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    for (const auto& c : checks) {
        failed += !c.passed;
        std::printf("%s %s/%s  %s\n", c.passed ? "PASS" : "FAIL", c.group.c_str(), c.name.c_str(), c.detail.c_str());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%zu checks, %d failed, %.1fs\n", checks.size(), failed, secs);
    return failed ? kVerifyFailed : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical masked discrete diffusion on synthetic token grids"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker threads (default: HCDT_THREADS, else 1)")->check(CLI::NonNegativeNumber);

    std::string gd_config, gd_out;
    std::optional<int> gd_n;
    std::optional<std::uint64_t> gd_seed;
    std::uint64_t gd_stream = 0;
    auto* gen = app.add_subcommand("gen-data", "write a synthetic corpus and its conditions sidecar");
    gen->add_option("--config", gd_config, "experiment config (JSON)");
    gen->add_option("--out", gd_out, "corpus path; conditions go to <out>.conditions.jsonl")->required();
    gen->add_option("-n,--count", gd_n, "number of records (default: train.examples)");
    gen->add_option("--seed", gd_seed, "generator seed (default: synth.seed)");
    gen->add_option("--stream", gd_stream, "sample stream; use distinct streams for train and held-out sets");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train the score network");
    train->add_option("--config", ta.config, "experiment config (JSON)");
    train->add_option("--corpus", ta.corpus, "training corpus")->required();
    train->add_option("--conditions", ta.conditions, "conditions sidecar (default: <corpus>.conditions.jsonl)");
    train->add_option("--out", ta.out, "checkpoint path")->required();
    train->add_option("--metrics", ta.metrics, "metrics CSV (default: <out>.metrics.csv)");
    train->add_option("--iters", ta.iters, "iterations");
    train->add_option("--lr", ta.lr, "learning rate");
    train->add_option("--seed", ta.seed, "training seed");
    train->add_flag("--flat-ablation", ta.flat, "one block stack over all levels");
    train->add_flag("--single-scale-adaln", ta.single_scale, "pooled-emotion single-scale modulation in the high tier");
    train->add_flag("--stable-csv", ta.stable_csv, "write wall_ms as 0 for byte-stable traces");
    train->add_option("--fault-nan-after", ta.nan_at, "fault injection: poison a parameter after this iteration");

    SampleArgs sa;
    auto* samp = app.add_subcommand("sample", "guided Euler sampling");
    samp->add_option("--config", sa.config, "experiment config; guidance defaults and a shape check");
    samp->add_option("--ckpt", sa.ckpt, "checkpoint");
    samp->add_flag("--oracle", sa.oracle, "use exact oracle scores (needs --config)");
    samp->add_option("--conditions", sa.conditions, "conditions file (JSON lines; null marks a dropped condition)")->required();
    samp->add_option("--out", sa.out, "output corpus")->required();
    samp->add_option("--seed", sa.seed, "sampling seed");
    samp->add_option("--batch", sa.batch, "samples per model call")->check(CLI::PositiveNumber);
    sa.guidance.add_to(samp);

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "held-out metrics table");
    ev->add_option("--config", ea.config, "experiment config")->required();
    ev->add_option("--ckpt", ea.ckpt, "checkpoint");
    ev->add_flag("--oracle", ea.oracle, "evaluate exact oracle scores");
    ev->add_option("--corpus", ea.corpus, "held-out corpus")->required();
    ev->add_option("--conditions", ea.conditions, "conditions sidecar (default: <corpus>.conditions.jsonl)");
    ev->add_option("--out", ea.out, "output CSV")->required();
    ev->add_option("--samples", ea.samples, "samples drawn for agreement and TV");
    ev->add_option("--seed", ea.seed, "evaluation seed");
    ea.guidance.add_to(ev);

    std::string v_config, v_only, v_fault;
    auto* ver = app.add_subcommand("verify", "run the invariant battery");
    ver->add_option("--config", v_config, "experiment config");
    ver->add_option("--only", v_only, "run one group: token_space, marginals, diffusion, dse, dropout, routing, gradients, guidance, synth, oracle");
    ver->add_option("--fault", v_fault, "fault injection: sigma-bar-nonmonotone");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kFault;
    }
    const int nthreads = resolve_threads(threads);
    try {
        if (*gen) return cmd_gen_data(gd_config, gd_out, gd_n, gd_seed, gd_stream);
        if (*train) return cmd_train(ta);
        if (*samp) return cmd_sample(sa, nthreads);
        if (*ev) return cmd_eval(ea, nthreads);
        if (*ver) return cmd_verify(v_config, v_only, v_fault, nthreads);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kFault;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFault;
    }
    return kFault;
}
