#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wavedef/attacks.hpp"
#include "wavedef/blackbox.hpp"
#include "wavedef/dataset.hpp"
#include "wavedef/distill.hpp"
#include "wavedef/fnr.hpp"
#include "wavedef/models.hpp"
#include "wavedef/wcsm.hpp"
#include "wavedef/wnr.hpp"

namespace wavedef {

/// Input purification stage of the defense: wavelet, Fourier, or none.
struct PurifierConfig {
    std::string kind = "wnr";  // none | wnr | fnr
    WnrConfig wnr;
    double fnr_radius = 11.0;

    void validate() const {
        require(kind == "none" || kind == "wnr" || kind == "fnr",
                "PurifierConfig: unknown kind '" + kind + "' (expected none, wnr, or fnr)");
        if (kind == "wnr")
            require(wnr.k >= 0 && wnr.k <= 100, "PurifierConfig: wnr k must be in [0, 100]");
        if (kind == "fnr") require(fnr_radius >= 0.0, "PurifierConfig: radius must be >= 0");
    }

    Tensor apply_batch(const Tensor& nchw) const {
        if (kind == "none") return nchw;
        if (kind == "wnr") return wnr.apply_batch(nchw);
        return lowpass_filter_batch(nchw, fnr_radius);
    }
};

/// No-grad regenerator inference over an NCHW batch, in bounded slices.
inline Tensor infer_regen(const Regenerator& regen, const Tensor& images, int64_t chunk = 64) {
    require(images.rank() == 4, "infer_regen: expected NCHW");
    const int64_t n = images.dim(0);
    const int64_t stride = images.numel() / n;
    Tensor out(images.shape());
    for (int64_t at = 0; at < n; at += chunk) {
        const int64_t take = std::min(chunk, n - at);
        Tensor part({take, images.dim(1), images.dim(2), images.dim(3)});
        std::copy(images.data() + at * stride, images.data() + (at + take) * stride,
                  part.mutable_data());
        Tape t;
        const Tensor& y = t.value(regen.forward(t, t.constant(part)));
        std::copy(y.data(), y.data() + y.numel(), out.mutable_data() + at * stride);
    }
    return out;
}

/**
 * @brief The defended predictor: purifier -> optional regenerator -> black box.
 *
 * Prediction path is argmax blackbox(R_n(purify(x))), with R_n skipped when
 * absent. The regenerator is stored as a frozen snapshot (detached weights),
 * and the black box only ever sees purified pixels; no stage exposes
 * gradients.
 */
class DefendedModel {
public:
    DefendedModel(PurifierConfig purifier, std::optional<Regenerator> regen, BlackBoxHandle bb)
        : purifier_(std::move(purifier)), regen_(std::move(regen)), blackbox_(std::move(bb)) {
        purifier_.validate();
        if (regen_.has_value())
            for (Tensor& p : regen_->store().params()) p = p.detached();
    }

    const PurifierConfig& purifier() const { return purifier_; }
    bool has_regenerator() const { return regen_.has_value(); }
    const BlackBoxHandle& blackbox() const { return blackbox_; }

    /// The defense module alone: purified (and regenerated) pixels.
    Tensor defend(const Tensor& images) const {
        Tensor defended = purifier_.apply_batch(images);
        if (regen_.has_value()) defended = infer_regen(*regen_, defended);
        return defended;
    }

    Tensor predict_probs(const Tensor& images) const {
        return query_probs_chunked(blackbox_, defend(images));
    }

    std::vector<int64_t> predict_labels(const Tensor& images) const {
        return argmax_rows(predict_probs(images));
    }

    /// The attacker's view: the whole defended pipeline as one black box.
    BlackBoxHandle as_blackbox() const {
        return BlackBoxHandle::composite(
            [*this](const Tensor& batch) { return predict_probs(batch); });
    }

private:
    PurifierConfig purifier_;
    std::optional<Regenerator> regen_;
    BlackBoxHandle blackbox_;
};

/// Composes the defense, validating stage compatibility.
inline DefendedModel assemble_defense(const PurifierConfig& purifier,
                                      const std::optional<Regenerator>& regen,
                                      const BlackBoxHandle& blackbox) {
    purifier.validate();
    if (regen.has_value()) {
        require(regen->spec().in_channels == 3 && regen->spec().out_channels == 3,
                "assemble_defense: regenerator must map 3-channel images to 3-channel images");
    }
    return DefendedModel(purifier, regen, blackbox);
}

/// Attacker simulation output: the stolen surrogate and the crafted set.
struct AttackerResult {
    Classifier surrogate;
    Tensor adv;
    std::vector<double> kl_history;
};

/**
 * @brief Simulates the black-box attacker against a defended pipeline.
 *
 * The attacker distills a surrogate from the defended model's own outputs
 * (the defense is inside the black box from the attacker's point of view),
 * then crafts adversarial examples on that surrogate against the defended
 * model's clean-sample labels. The crafted set is budget-verified.
 */
inline AttackerResult attacker_loop(const DefendedModel& defended,
                                    const ClassifierSpec& attacker_arch,
                                    const Tensor& stealing_source, const DistillConfig& steal_cfg,
                                    const Tensor& clean_test, const AttackConfig& attack_cfg) {
    BlackBoxHandle view = defended.as_blackbox();
    DistillResult stolen = distill_surrogate(view, attacker_arch, stealing_source, steal_cfg);
    const std::vector<int64_t> labels = view.query_labels(clean_test);
    Tensor adv = craft(stolen.student.forward_fn(), clean_test, labels, attack_cfg);
    verify_attack_budget(clean_test, adv, attack_cfg.epsilon);
    return AttackerResult{std::move(stolen.student), std::move(adv),
                          std::move(stolen.kl_history)};
}

/// One adversarial evaluation set with the budget it was crafted under.
struct AdvSet {
    std::string attack;  // fgsm | bim | pgd | none
    Tensor images;
    float epsilon = 0.0f;
};

struct EvalRow {
    std::string variant;
    std::string attack;
    double clean_acc = 0.0;
    double adv_acc = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<std::pair<std::string, std::string>> metadata;  // ordered key/value
};

/**
 * @brief Evaluates every defense variant against every adversarial set.
 *
 * Emits one row per (variant, attack) carrying both the variant's clean
 * accuracy and its accuracy on that adversarial set. Every adversarial set
 * is re-checked against the attack budget before scoring.
 */
inline EvalReport evaluate(const std::vector<std::pair<std::string, DefendedModel>>& variants,
                           const Dataset& test, const std::vector<AdvSet>& adv_sets) {
    require(!variants.empty(), "evaluate: no variants");
    require(test.size() >= 1, "evaluate: empty test set");
    for (const AdvSet& a : adv_sets) {
        require(a.images.shape() == test.images.shape(),
                "evaluate: adversarial set '" + a.attack + "' misaligned with the test set");
        verify_attack_budget(test.images, a.images, a.epsilon);
    }

    EvalReport report;
    for (const auto& [name, model] : variants) {
        const double clean_acc = accuracy_percent(model.predict_labels(test.images), test.labels);
        if (adv_sets.empty())
            report.rows.push_back(EvalRow{name, "none", clean_acc, clean_acc});
        for (const AdvSet& a : adv_sets) {
            const double adv_acc = accuracy_percent(model.predict_labels(a.images), test.labels);
            report.rows.push_back(EvalRow{name, a.attack, clean_acc, adv_acc});
        }
    }
    return report;
}

/// CSV emission: metadata as leading "# key=value" lines, then one row per
/// (variant, attack) pair.
inline std::string eval_report_csv(const EvalReport& report) {
    std::string out;
    for (const auto& [k, v] : report.metadata) out += "# " + k + "=" + v + "\n";
    out += "variant,attack,clean_acc,adv_acc\n";
    for (const EvalRow& r : report.rows)
        out += r.variant + "," + r.attack + "," + fmt_double(r.clean_acc) + "," +
               fmt_double(r.adv_acc) + "\n";
    return out;
}

/// Parses eval_report_csv output; parse(emit(r)) reproduces r exactly.
inline EvalReport parse_eval_report_csv(const std::string& text) {
    EvalReport report;
    size_t pos = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        if (line[0] == '#') {
            const size_t start = line.find_first_not_of(" \t", 1);
            const size_t eq = line.find('=', start);
            require_runtime(start != std::string::npos && eq != std::string::npos,
                            "parse_eval_report_csv: bad metadata line '" + line + "'");
            report.metadata.emplace_back(line.substr(start, eq - start), line.substr(eq + 1));
            continue;
        }
        if (!header_seen) {
            require_runtime(line == "variant,attack,clean_acc,adv_acc",
                            "parse_eval_report_csv: unexpected header '" + line + "'");
            header_seen = true;
            continue;
        }
        std::vector<std::string> fields;
        size_t at = 0;
        for (int i = 0; i < 3; ++i) {
            const size_t comma = line.find(',', at);
            require_runtime(comma != std::string::npos,
                            "parse_eval_report_csv: bad row '" + line + "'");
            fields.push_back(line.substr(at, comma - at));
            at = comma + 1;
        }
        fields.push_back(line.substr(at));
        report.rows.push_back(EvalRow{fields[0], fields[1], std::strtod(fields[2].c_str(), nullptr),
                                      std::strtod(fields[3].c_str(), nullptr)});
    }
    require_runtime(header_seen, "parse_eval_report_csv: missing header");
    return report;
}

inline bool operator==(const EvalRow& a, const EvalRow& b) {
    return a.variant == b.variant && a.attack == b.attack && a.clean_acc == b.clean_acc &&
           a.adv_acc == b.adv_acc;
}

inline bool operator==(const EvalReport& a, const EvalReport& b) {
    return a.rows == b.rows && a.metadata == b.metadata;
}

/// Markdown table: one row per variant, a clean column, one column per
/// attack, and adversarial-accuracy deltas against the baseline variant.
inline std::string eval_report_markdown(const EvalReport& report,
                                        const std::string& baseline_variant = "baseline") {
    std::vector<std::string> variants, attacks;
    std::map<std::string, double> clean;
    std::map<std::string, std::map<std::string, double>> adv;
    for (const EvalRow& r : report.rows) {
        if (!clean.count(r.variant)) variants.push_back(r.variant);
        clean[r.variant] = r.clean_acc;
        if (std::find(attacks.begin(), attacks.end(), r.attack) == attacks.end())
            attacks.push_back(r.attack);
        adv[r.variant][r.attack] = r.adv_acc;
    }

    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        return std::string(buf);
    };

    std::string out = "| variant | clean |";
    for (const std::string& a : attacks) out += " " + a + " |";
    const bool with_delta = clean.count(baseline_variant) > 0;
    if (with_delta)
        for (const std::string& a : attacks) out += " d(" + a + ") |";
    out += "\n|---|---|";
    for (size_t i = 0; i < attacks.size() * (with_delta ? 2 : 1); ++i) out += "---|";
    out += "\n";

    for (const std::string& v : variants) {
        out += "| " + v + " | " + pct(clean[v]) + " |";
        for (const std::string& a : attacks)
            out += adv[v].count(a) ? " " + pct(adv[v][a]) + " |" : " — |";
        if (with_delta)
            for (const std::string& a : attacks) {
                if (adv[v].count(a) && adv[baseline_variant].count(a)) {
                    const double d = adv[v][a] - adv[baseline_variant][a];
                    out += std::string(" ") + (d >= 0 ? "+" : "") + pct(d) + " |";
                } else {
                    out += " — |";
                }
            }
        out += "\n";
    }
    return out;
}

}  // namespace wavedef
