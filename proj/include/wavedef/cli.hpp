#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "wavedef/checkpoint.hpp"
#include "wavedef/config.hpp"
#include "wavedef/pipeline.hpp"
#include "wavedef/train.hpp"

namespace wavedef {

/// Canonical artifact paths inside a run's output directory.
namespace artifact {

inline std::string config_echo(const std::string& out) { return out + "/config.echo.ini"; }
inline std::string lockfile(const std::string& out) { return out + "/.lock"; }
inline std::string victim_ckpt(const std::string& out) { return out + "/victim.ckpt"; }
inline std::string victim_history(const std::string& out) { return out + "/victim_train.csv"; }
inline std::string surrogate_ckpt(const std::string& out) { return out + "/surrogate.ckpt"; }
inline std::string steal_history(const std::string& out) { return out + "/steal_history.csv"; }
inline std::string sd_ckpt(const std::string& out) { return out + "/sd.ckpt"; }
inline std::string sda_ckpt(const std::string& out) { return out + "/sda.ckpt"; }
inline std::string kselection_csv(const std::string& out) { return out + "/kselection.csv"; }
inline std::string regen_ckpt(const std::string& out) { return out + "/regen.ckpt"; }
inline std::string regen_history(const std::string& out) { return out + "/regen_history.csv"; }
inline std::string adv_ckpt(const std::string& out, const std::string& kind) {
    return out + "/adv_" + kind + ".ckpt";
}
inline std::string eval_csv(const std::string& out) { return out + "/eval.csv"; }
inline std::string eval_md(const std::string& out) { return out + "/eval.md"; }

}  // namespace artifact

/**
 * @brief Exclusive ownership of an output directory for one run's duration.
 *
 * Creates the directory and claims its lockfile atomically; a second run
 * against the same directory fails until the first releases it. A lockfile
 * left behind by a killed process must be removed by hand.
 */
class OutputLock {
public:
    explicit OutputLock(const std::string& dir) : path_(artifact::lockfile(dir)) {
        std::filesystem::create_directories(dir);
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        require_runtime(f != nullptr, "output directory '" + dir +
                                          "' is locked by another run (remove " + path_ +
                                          " if that run is gone)");
        std::fputs("locked\n", f);
        std::fclose(f);
    }
    ~OutputLock() { std::remove(path_.c_str()); }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    std::string path_;
};

/// Fails with the expected path and the subcommand that produces it.
inline std::string require_artifact(const std::string& path, const char* producer) {
    require_runtime(std::filesystem::exists(path),
                    "missing artifact: " + path + " (run `" + producer + "` first)");
    return path;
}

inline Classifier load_classifier_artifact(const std::string& path, const ClassifierSpec& spec) {
    Classifier model(spec, 0);
    load_checkpoint_file(path, model.checkpoint_tag(), model.store());
    return model;
}

inline Regenerator load_regen_artifact(const std::string& path, const RegeneratorSpec& spec) {
    Regenerator regen(spec, 0);
    load_checkpoint_file(path, regen.checkpoint_tag(), regen.store());
    return regen;
}

/// Named data tensors in the model checkpoint container.
inline void save_tensor_bundle(const std::string& path, const std::string& tag,
                               const std::vector<std::pair<std::string, Tensor>>& tensors) {
    ParamStore store;
    for (const auto& [name, t] : tensors) store.add(name, t);
    write_file(path, serialize_checkpoint(tag, store));
}

inline Checkpoint load_tensor_bundle(const std::string& path, const std::string& tag) {
    Checkpoint ck = parse_checkpoint(read_file(path));
    require_runtime(ck.tag == tag, "artifact " + path + ": unexpected tag '" + ck.tag +
                                       "' (expected '" + tag + "')");
    return ck;
}

inline const Tensor& bundle_tensor(const Checkpoint& ck, const std::string& name,
                                   const std::string& path) {
    for (size_t i = 0; i < ck.names.size(); ++i)
        if (ck.names[i] == name) return ck.tensors[i];
    throw std::runtime_error("artifact " + path + ": missing tensor '" + name + "'");
}

/// First n rows of an NCHW batch (the whole batch when n covers it).
inline Tensor head_rows(const Tensor& t, int64_t n) {
    require(t.rank() == 4 && n >= 1 && n <= t.dim(0),
            "head_rows: need 1 <= n <= rows of an NCHW batch");
    if (n == t.dim(0)) return t;
    Tensor out({n, t.dim(1), t.dim(2), t.dim(3)});
    std::copy(t.data(), t.data() + out.numel(), out.mutable_data());
    return out;
}

inline Dataset training_set(const RunConfig& cfg) {
    if (cfg.dataset.kind == "cifar10") return load_cifar10(cfg.dataset.path);
    SyntheticSpec spec{cfg.dataset.num_classes, cfg.dataset.count, cfg.dataset.height,
                       cfg.dataset.width};
    return gen_synthetic_dataset(spec, cfg.dataset.seed);
}

/// Held-out evaluation set: a disjoint seeded draw for synthetic data, the
/// test batch (truncated to eval_count) for CIFAR-10.
inline Dataset evaluation_set(const RunConfig& cfg) {
    if (cfg.dataset.kind == "cifar10") {
        const std::string path =
            cfg.dataset.test_path.empty() ? cfg.dataset.path : cfg.dataset.test_path;
        Dataset ds = load_cifar10(path);
        if (cfg.dataset.eval_count < ds.size()) return ds.slice(0, cfg.dataset.eval_count);
        return ds;
    }
    SyntheticSpec spec{cfg.dataset.num_classes, cfg.dataset.eval_count, cfg.dataset.height,
                       cfg.dataset.width};
    return gen_synthetic_dataset(spec, cfg.dataset.seed + 1);
}

/// Prediction-only access to the victim: remote when a host is configured,
/// otherwise the victim checkpoint served in-process.
inline BlackBoxHandle victim_handle(const RunConfig& cfg) {
    if (!cfg.blackbox.host.empty())
        return BlackBoxHandle::remote(cfg.blackbox.host, static_cast<int>(cfg.blackbox.port));
    const std::string path =
        require_artifact(artifact::victim_ckpt(cfg.run.output_dir), "train-victim");
    return BlackBoxHandle::in_process(load_classifier_artifact(path, cfg.victim_spec()));
}

inline int64_t read_k_hat(const std::string& path) {
    const std::string text = read_file(path);
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        constexpr const char* kKey = "# k_hat=";
        if (line.rfind(kKey, 0) == 0)
            return detail::parse_config_i64("k_hat", line.substr(std::string(kKey).size()));
    }
    throw std::runtime_error("artifact " + path + ": no k_hat metadata line");
}

inline void stage_train_victim(const RunConfig& cfg) {
    const std::string& out = cfg.run.output_dir;
    const Dataset train = training_set(cfg);
    const Dataset test = evaluation_set(cfg);
    Classifier victim(cfg.victim_spec(), cfg.victim.seed);
    const std::vector<double> losses = train_classifier(
        victim, train, cfg.victim.epochs, cfg.victim.batch_size,
        static_cast<float>(cfg.victim.lr), cfg.victim.seed);
    save_checkpoint_file(artifact::victim_ckpt(out), victim.checkpoint_tag(), victim.store());
    std::string csv = "epoch,loss\n";
    for (size_t e = 0; e < losses.size(); ++e)
        csv += std::to_string(e) + "," + fmt_double(losses[e]) + "\n";
    write_file(artifact::victim_history(out), csv);
    std::cout << "train-victim: train acc "
              << eval_accuracy(victim.forward_fn(), train) << "%, test acc "
              << eval_accuracy(victim.forward_fn(), test) << "% -> "
              << artifact::victim_ckpt(out) << "\n";
}

inline void stage_steal(const RunConfig& cfg) {
    const std::string& out = cfg.run.output_dir;
    const BlackBoxHandle bb = victim_handle(cfg);
    const Tensor source = generate_source(cfg.steal_source());
    DistillResult stolen =
        distill_surrogate(bb, cfg.surrogate_spec(), source, cfg.distill_config());
    save_checkpoint_file(artifact::surrogate_ckpt(out), stolen.student.checkpoint_tag(),
                         stolen.student.store());
    save_tensor_bundle(artifact::sd_ckpt(out), "dataset:sd:v1",
                       {{"images", stolen.retained_images}, {"probs", stolen.retained_probs}});
    std::string csv = "epoch,kl\n";
    for (size_t e = 0; e < stolen.kl_history.size(); ++e)
        csv += std::to_string(e) + "," + fmt_double(stolen.kl_history[e]) + "\n";
    write_file(artifact::steal_history(out), csv);
    std::cout << "steal: retained " << stolen.retained_images.dim(0) << "/" << source.dim(0)
              << " samples, " << bb.query_count() << " queries -> "
              << artifact::surrogate_ckpt(out) << "\n";
}

inline void stage_wcsm_sweep(const RunConfig& cfg) {
    const std::string& out = cfg.run.output_dir;
    const BlackBoxHandle bb = victim_handle(cfg);
    const Classifier surrogate = load_classifier_artifact(
        require_artifact(artifact::surrogate_ckpt(out), "steal"), cfg.surrogate_spec());
    const Checkpoint sd = load_tensor_bundle(require_artifact(artifact::sd_ckpt(out), "steal"),
                                             "dataset:sd:v1");
    const Tensor& s_d = bundle_tensor(sd, "images", artifact::sd_ckpt(out));

    // The adversarial counterpart of the whole retained set is crafted on the
    // surrogate once; the sweep reuses its head, regenerator training all of it.
    const AttackConfig sweep_attack = cfg.attack_config(cfg.wavelet.sweep_attack);
    const Tensor s_da = craft(surrogate.forward_fn(), s_d, bb.query_labels(s_d), sweep_attack);
    verify_attack_budget(s_d, s_da, sweep_attack.epsilon);
    save_tensor_bundle(
        artifact::sda_ckpt(out), "dataset:sda:v1",
        {{"images", s_da}, {"epsilon", Tensor::from_vector({1}, {sweep_attack.epsilon})}});

    const int64_t n = std::min<int64_t>(cfg.wavelet.sweep_samples, s_d.dim(0));
    KSelectionReport report = sweep_wcsm(head_rows(s_d, n), head_rows(s_da, n), bb,
                                         cfg.wnr_config(100), cfg.wavelet.k_max);
    report = cfg.wavelet.selection == "roc_saturation" ? select_k(report, cfg.wavelet.tau)
                                                       : select_k_lfr_from(report);

    std::string csv = "# k_hat=" + std::to_string(report.k_hat) + "\n";
    csv += "# rule=" + report.rule + "\n";
    csv += "# tau=" + fmt_double(cfg.wavelet.tau) + "\n";
    csv += kselection_csv(report);
    write_file(artifact::kselection_csv(out), csv);
    std::cout << "wcsm-sweep: k_hat=" << report.k_hat << " (" << report.rule << ", "
              << n << " samples) -> " << artifact::kselection_csv(out) << "\n";
}

inline void stage_train_regen(const RunConfig& cfg) {
    const std::string& out = cfg.run.output_dir;
    const Classifier surrogate = load_classifier_artifact(
        require_artifact(artifact::surrogate_ckpt(out), "steal"), cfg.surrogate_spec());
    const Checkpoint sd = load_tensor_bundle(require_artifact(artifact::sd_ckpt(out), "steal"),
                                             "dataset:sd:v1");
    const Checkpoint sda = load_tensor_bundle(
        require_artifact(artifact::sda_ckpt(out), "wcsm-sweep"), "dataset:sda:v1");
    const int64_t k_hat =
        read_k_hat(require_artifact(artifact::kselection_csv(out), "wcsm-sweep"));

    Regenerator regen(cfg.regen_spec(), cfg.regen.seed);
    const std::vector<RegenEpochStats> history = train_regenerator(
        regen, surrogate.forward_fn(), bundle_tensor(sd, "images", artifact::sd_ckpt(out)),
        bundle_tensor(sda, "images", artifact::sda_ckpt(out)), cfg.wnr_config(k_hat),
        cfg.loss_weights(), cfg.regen_train_config());
    save_checkpoint_file(artifact::regen_ckpt(out), regen.checkpoint_tag(), regen.store());
    write_file(artifact::regen_history(out), regen_history_csv(history));
    std::cout << "train-regen: " << history.size() << " epochs at k=" << k_hat
              << ", final total loss " << history.back().total << " -> "
              << artifact::regen_ckpt(out) << "\n";
}

inline void stage_craft_attacks(const RunConfig& cfg) {
    const std::string& out = cfg.run.output_dir;
    const BlackBoxHandle bb = victim_handle(cfg);
    const Classifier surrogate = load_classifier_artifact(
        require_artifact(artifact::surrogate_ckpt(out), "steal"), cfg.surrogate_spec());
    const Dataset test = evaluation_set(cfg);
    const std::vector<int64_t> labels = bb.query_labels(test.images);
    for (const std::string& kind : cfg.attack.kinds) {
        const AttackConfig attack = cfg.attack_config(kind);
        const Tensor adv = craft(surrogate.forward_fn(), test.images, labels, attack);
        verify_attack_budget(test.images, adv, attack.epsilon);
        save_tensor_bundle(
            artifact::adv_ckpt(out, kind), "dataset:adv:" + kind + ":v1",
            {{"images", adv}, {"epsilon", Tensor::from_vector({1}, {attack.epsilon})}});
        std::cout << "craft-attacks: " << kind << " on " << test.size() << " samples -> "
                  << artifact::adv_ckpt(out, kind) << "\n";
    }
}

inline void stage_evaluate(const RunConfig& cfg) {
    const std::string& out = cfg.run.output_dir;
    const BlackBoxHandle bb = victim_handle(cfg);
    const Dataset test = evaluation_set(cfg);
    const int64_t k_hat =
        read_k_hat(require_artifact(artifact::kselection_csv(out), "wcsm-sweep"));
    const Regenerator regen = load_regen_artifact(
        require_artifact(artifact::regen_ckpt(out), "train-regen"), cfg.regen_spec());

    PurifierConfig pass_through;
    pass_through.kind = "none";
    PurifierConfig purifier;
    purifier.kind = "wnr";
    purifier.wnr = cfg.wnr_config(k_hat);
    std::vector<std::pair<std::string, DefendedModel>> variants;
    variants.emplace_back("baseline", assemble_defense(pass_through, std::nullopt, bb));
    variants.emplace_back("wnr", assemble_defense(purifier, std::nullopt, bb));
    variants.emplace_back("wnr+regen", assemble_defense(purifier, regen, bb));

    std::vector<AdvSet> adv_sets;
    for (const std::string& kind : cfg.attack.kinds) {
        const std::string path =
            require_artifact(artifact::adv_ckpt(out, kind), "craft-attacks");
        const Checkpoint ck = load_tensor_bundle(path, "dataset:adv:" + kind + ":v1");
        adv_sets.push_back(AdvSet{kind, bundle_tensor(ck, "images", path),
                                  bundle_tensor(ck, "epsilon", path).data()[0]});
    }

    EvalReport report = evaluate(variants, test, adv_sets);
    report.metadata.emplace_back("dataset", cfg.dataset.kind);
    report.metadata.emplace_back("samples", std::to_string(test.size()));
    report.metadata.emplace_back("k_hat", std::to_string(k_hat));
    report.metadata.emplace_back("epsilon", fmt_double(cfg.attack.epsilon));
    write_file(artifact::eval_csv(out), eval_report_csv(report));
    const std::string table = eval_report_markdown(report, "baseline");
    write_file(artifact::eval_md(out), table);
    std::cout << "evaluate: " << test.size() << " samples, k=" << k_hat << "\n"
              << table << "-> " << artifact::eval_csv(out) << "\n";
}

inline void stage_full_dbma(const RunConfig& cfg) {
    // Stealing, then coefficient selection, then regenerator training; the
    // victim comes first and the assessment closes the chain.
    stage_train_victim(cfg);
    stage_steal(cfg);
    stage_wcsm_sweep(cfg);
    stage_train_regen(cfg);
    stage_craft_attacks(cfg);
    stage_evaluate(cfg);
}

/// Runs one subcommand under the output-directory lock, echoing the
/// effective config first so every run is reproducible from its artifacts.
inline void run_subcommand(const std::string& name, const RunConfig& cfg) {
    cfg.validate();
    OutputLock lock(cfg.run.output_dir);
    write_file(artifact::config_echo(cfg.run.output_dir), cfg.canonical_text());
    if (name == "train-victim")
        stage_train_victim(cfg);
    else if (name == "steal")
        stage_steal(cfg);
    else if (name == "wcsm-sweep")
        stage_wcsm_sweep(cfg);
    else if (name == "craft-attacks")
        stage_craft_attacks(cfg);
    else if (name == "train-regen")
        stage_train_regen(cfg);
    else if (name == "evaluate")
        stage_evaluate(cfg);
    else if (name == "full-dbma")
        stage_full_dbma(cfg);
    else
        throw std::invalid_argument("unknown subcommand '" + name + "'");
}

/// Serves the victim checkpoint over the wire protocol: a line-delimited
/// stdio session when stdio is set, otherwise a loopback TCP listener on an
/// ephemeral port (printed on startup) that runs until the process is killed.
inline void serve_victim(const RunConfig& cfg, bool stdio) {
    cfg.validate();
    const std::string path =
        require_artifact(artifact::victim_ckpt(cfg.run.output_dir), "train-victim");
    Classifier victim = load_classifier_artifact(path, cfg.victim_spec());
    for (Tensor& p : victim.store().params()) p = p.detached();
    const Responder respond = model_responder(victim.forward_fn());
    if (stdio) {
        serve_blackbox_stdio(respond, std::cin, std::cout);
        return;
    }
    BlackBoxServer server(respond);
    const int port = server.start();
    std::cout << "serving black box on 127.0.0.1:" << port << "\n" << std::flush;
    for (;;) std::this_thread::sleep_for(std::chrono::seconds(1));
}

}  // namespace wavedef
