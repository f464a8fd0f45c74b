#pragma once

#include <cctype>
#include <cstdlib>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "wavedef/attacks.hpp"
#include "wavedef/common.hpp"
#include "wavedef/dataset.hpp"
#include "wavedef/distill.hpp"
#include "wavedef/models.hpp"
#include "wavedef/regen_train.hpp"
#include "wavedef/wavelet.hpp"
#include "wavedef/wcsm.hpp"
#include "wavedef/wnr.hpp"

namespace wavedef {

/**
 * @brief Effective configuration of one experiment run.
 *
 * Every knob of every stage lives here, so the canonical text emitted by
 * canonical_text() is sufficient to reproduce a run bit-identically. The
 * on-disk format is sectioned key-value text ('#' starts a comment, later
 * assignments win); a JSON object of sections is accepted as an alternative.
 */
struct RunConfig {
    struct DatasetCfg {
        std::string kind = "synthetic";  // synthetic | cifar10
        std::string path;                // cifar10 training batch (binary format)
        std::string test_path;           // cifar10 test batch; falls back to path
        int64_t num_classes = 10;
        int64_t count = 1000;     // synthetic training-set size
        int64_t eval_count = 256; // held-out evaluation-set size
        int64_t height = 32, width = 32;
        uint32_t seed = 0;
    } dataset;

    struct VictimCfg {
        std::string arch = "cnn_small";  // cnn_small | cnn_half | cnn_residual
        int64_t width = 16;
        int64_t epochs = 10;
        int64_t batch_size = 64;
        double lr = 2e-3;
        uint32_t seed = 1;
    } victim;

    /// Remote victim endpoint; when host is empty the victim checkpoint in
    /// the output directory is served in-process instead.
    struct BlackboxCfg {
        std::string host;
        int64_t port = 0;
    } blackbox;

    struct StealCfg {
        std::string source = "procedural_shapes";  // uniform_noise | procedural_shapes | file_proxy
        int64_t source_count = 1024;
        uint32_t source_seed = 11;
        std::string source_path;  // file_proxy only
        std::string arch = "cnn_small";
        int64_t width = 16;
        int64_t epochs = 30;
        int64_t batch_size = 64;
        double lr = 1e-3;
        double confidence_floor = 0.3;
        uint32_t seed = 2;
    } steal;

    struct WaveletCfg {
        std::string family = "db2";
        int64_t levels = 2;
        int64_t k_max = 50;
        double tau = 0.005;
        std::string selection = "roc_saturation";  // roc_saturation | lfr_argmin
        int64_t sweep_samples = 64;                // retained samples used per sweep position
        std::string sweep_attack = "pgd";          // attack that crafts the sweep's adversarial set
    } wavelet;

    struct AttackCfg {
        std::vector<std::string> kinds = {"fgsm", "pgd"};
        double epsilon = 8.0 / 255.0;
        int64_t iterations = 20;
        uint32_t seed = 3;
    } attack;

    struct RegenCfg {
        int64_t base_width = 64;
        int64_t epochs = 60;
        int64_t batch_size = 128;
        double lr = 2e-4;
        double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 1.0;
        uint32_t seed = 4;
    } regen;

    struct RunSection {
        std::string output_dir = "out";
    } run;

    void validate() const;
    std::string canonical_text() const;

    // Stage-facing views of the configuration.
    ClassifierSpec victim_spec() const {
        return ClassifierSpec{victim.arch, dataset.num_classes,
                              {3, dataset.height, dataset.width}, victim.width};
    }
    ClassifierSpec surrogate_spec() const {
        return ClassifierSpec{steal.arch, dataset.num_classes,
                              {3, dataset.height, dataset.width}, steal.width};
    }
    SyntheticSource steal_source() const {
        SyntheticSource src;
        src.kind = steal.source;
        src.count = steal.source_count;
        src.seed = steal.source_seed;
        src.channels = 3;
        src.height = dataset.height;
        src.width = dataset.width;
        src.path = steal.source_path;
        return src;
    }
    DistillConfig distill_config() const {
        return DistillConfig{steal.epochs, steal.batch_size, static_cast<float>(steal.lr),
                             static_cast<float>(steal.confidence_floor), steal.seed};
    }
    WnrConfig wnr_config(int64_t k) const {
        WnrConfig w;
        w.family = wavelet.family;
        w.levels = static_cast<int>(wavelet.levels);
        w.k = static_cast<int>(k);
        return w;
    }
    AttackConfig attack_config(const std::string& kind) const {
        AttackConfig cfg =
            attack_preset(kind, static_cast<float>(attack.epsilon), attack.iterations);
        cfg.seed = attack.seed;
        return cfg;
    }
    LossWeights loss_weights() const {
        return LossWeights{static_cast<float>(regen.lambda1), static_cast<float>(regen.lambda2),
                           static_cast<float>(regen.lambda3)};
    }
    RegenTrainConfig regen_train_config() const {
        return RegenTrainConfig{regen.epochs, regen.batch_size, static_cast<float>(regen.lr),
                                regen.seed};
    }
    RegeneratorSpec regen_spec() const {
        RegeneratorSpec spec;
        spec.base_width = regen.base_width;
        return spec;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline int64_t parse_config_i64(const std::string& key, const std::string& v) {
    require(!v.empty(), "config: key '" + key + "' has an empty value");
    char* end = nullptr;
    errno = 0;
    const long long n = std::strtoll(v.c_str(), &end, 10);
    require(errno == 0 && end == v.c_str() + v.size(),
            "config: key '" + key + "' expects an integer, got '" + v + "'");
    return static_cast<int64_t>(n);
}

inline uint32_t parse_config_u32(const std::string& key, const std::string& v) {
    const int64_t n = parse_config_i64(key, v);
    require(n >= 0 && n <= 0xFFFFFFFFLL,
            "config: key '" + key + "' expects a 32-bit unsigned seed, got '" + v + "'");
    return static_cast<uint32_t>(n);
}

inline double parse_config_f64(const std::string& key, const std::string& v) {
    require(!v.empty(), "config: key '" + key + "' has an empty value");
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    require(end == v.c_str() + v.size() && std::isfinite(x),
            "config: key '" + key + "' expects a finite number, got '" + v + "'");
    return x;
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    size_t at = 0;
    while (at <= v.size()) {
        const size_t comma = v.find(',', at);
        const std::string piece = trim(v.substr(at, comma == std::string::npos ? comma
                                                                               : comma - at));
        if (!piece.empty()) out.push_back(piece);
        if (comma == std::string::npos) break;
        at = comma + 1;
    }
    return out;
}

inline std::string join_list(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

/// One configurable field: its dotted name plus typed set/get closures.
/// The table below is the single schema driving parsing, overrides, and
/// canonical emission, so the three can never drift apart.
struct ConfigField {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class Acc>
ConfigField field_i64(const char* key, Acc acc) {
    return {key, [key, acc](RunConfig& c, const std::string& v) { acc(c) = parse_config_i64(key, v); },
            [acc](const RunConfig& c) { return std::to_string(acc(c)); }};
}
template <class Acc>
ConfigField field_u32(const char* key, Acc acc) {
    return {key, [key, acc](RunConfig& c, const std::string& v) { acc(c) = parse_config_u32(key, v); },
            [acc](const RunConfig& c) { return std::to_string(acc(c)); }};
}
template <class Acc>
ConfigField field_f64(const char* key, Acc acc) {
    return {key, [key, acc](RunConfig& c, const std::string& v) { acc(c) = parse_config_f64(key, v); },
            [acc](const RunConfig& c) { return fmt_double(acc(c)); }};
}
template <class Acc>
ConfigField field_str(const char* key, Acc acc) {
    return {key, [acc](RunConfig& c, const std::string& v) { acc(c) = v; },
            [acc](const RunConfig& c) { return acc(c); }};
}
template <class Acc>
ConfigField field_list(const char* key, Acc acc) {
    return {key, [acc](RunConfig& c, const std::string& v) { acc(c) = split_list(v); },
            [acc](const RunConfig& c) { return join_list(acc(c)); }};
}

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = {
        field_str("dataset.kind", [](auto& c) -> auto& { return c.dataset.kind; }),
        field_str("dataset.path", [](auto& c) -> auto& { return c.dataset.path; }),
        field_str("dataset.test_path", [](auto& c) -> auto& { return c.dataset.test_path; }),
        field_i64("dataset.num_classes", [](auto& c) -> auto& { return c.dataset.num_classes; }),
        field_i64("dataset.count", [](auto& c) -> auto& { return c.dataset.count; }),
        field_i64("dataset.eval_count", [](auto& c) -> auto& { return c.dataset.eval_count; }),
        field_i64("dataset.height", [](auto& c) -> auto& { return c.dataset.height; }),
        field_i64("dataset.width", [](auto& c) -> auto& { return c.dataset.width; }),
        field_u32("dataset.seed", [](auto& c) -> auto& { return c.dataset.seed; }),

        field_str("victim.arch", [](auto& c) -> auto& { return c.victim.arch; }),
        field_i64("victim.width", [](auto& c) -> auto& { return c.victim.width; }),
        field_i64("victim.epochs", [](auto& c) -> auto& { return c.victim.epochs; }),
        field_i64("victim.batch_size", [](auto& c) -> auto& { return c.victim.batch_size; }),
        field_f64("victim.lr", [](auto& c) -> auto& { return c.victim.lr; }),
        field_u32("victim.seed", [](auto& c) -> auto& { return c.victim.seed; }),

        field_str("blackbox.host", [](auto& c) -> auto& { return c.blackbox.host; }),
        field_i64("blackbox.port", [](auto& c) -> auto& { return c.blackbox.port; }),

        field_str("steal.source", [](auto& c) -> auto& { return c.steal.source; }),
        field_i64("steal.source_count", [](auto& c) -> auto& { return c.steal.source_count; }),
        field_u32("steal.source_seed", [](auto& c) -> auto& { return c.steal.source_seed; }),
        field_str("steal.source_path", [](auto& c) -> auto& { return c.steal.source_path; }),
        field_str("steal.arch", [](auto& c) -> auto& { return c.steal.arch; }),
        field_i64("steal.width", [](auto& c) -> auto& { return c.steal.width; }),
        field_i64("steal.epochs", [](auto& c) -> auto& { return c.steal.epochs; }),
        field_i64("steal.batch_size", [](auto& c) -> auto& { return c.steal.batch_size; }),
        field_f64("steal.lr", [](auto& c) -> auto& { return c.steal.lr; }),
        field_f64("steal.confidence_floor",
                  [](auto& c) -> auto& { return c.steal.confidence_floor; }),
        field_u32("steal.seed", [](auto& c) -> auto& { return c.steal.seed; }),

        field_str("wavelet.family", [](auto& c) -> auto& { return c.wavelet.family; }),
        field_i64("wavelet.levels", [](auto& c) -> auto& { return c.wavelet.levels; }),
        field_i64("wavelet.k_max", [](auto& c) -> auto& { return c.wavelet.k_max; }),
        field_f64("wavelet.tau", [](auto& c) -> auto& { return c.wavelet.tau; }),
        field_str("wavelet.selection", [](auto& c) -> auto& { return c.wavelet.selection; }),
        field_i64("wavelet.sweep_samples",
                  [](auto& c) -> auto& { return c.wavelet.sweep_samples; }),
        field_str("wavelet.sweep_attack", [](auto& c) -> auto& { return c.wavelet.sweep_attack; }),

        field_list("attack.kinds", [](auto& c) -> auto& { return c.attack.kinds; }),
        field_f64("attack.epsilon", [](auto& c) -> auto& { return c.attack.epsilon; }),
        field_i64("attack.iterations", [](auto& c) -> auto& { return c.attack.iterations; }),
        field_u32("attack.seed", [](auto& c) -> auto& { return c.attack.seed; }),

        field_i64("regen.base_width", [](auto& c) -> auto& { return c.regen.base_width; }),
        field_i64("regen.epochs", [](auto& c) -> auto& { return c.regen.epochs; }),
        field_i64("regen.batch_size", [](auto& c) -> auto& { return c.regen.batch_size; }),
        field_f64("regen.lr", [](auto& c) -> auto& { return c.regen.lr; }),
        field_f64("regen.lambda1", [](auto& c) -> auto& { return c.regen.lambda1; }),
        field_f64("regen.lambda2", [](auto& c) -> auto& { return c.regen.lambda2; }),
        field_f64("regen.lambda3", [](auto& c) -> auto& { return c.regen.lambda3; }),
        field_u32("regen.seed", [](auto& c) -> auto& { return c.regen.seed; }),

        field_str("run.output_dir", [](auto& c) -> auto& { return c.run.output_dir; }),
    };
    return fields;
}

inline const ConfigField& config_field(const std::string& key) {
    static const std::unordered_map<std::string, const ConfigField*> index = [] {
        std::unordered_map<std::string, const ConfigField*> m;
        for (const ConfigField& f : config_fields()) m[f.key] = &f;
        return m;
    }();
    const auto it = index.find(key);
    require(it != index.end(), "config: unknown key '" + key + "'");
    return *it->second;
}

}  // namespace detail

/// One "section.key = value" assignment, in source order.
struct ConfigEntry {
    std::string key;
    std::string value;
};

/// Parses the sectioned text format into flat dotted assignments.
inline std::vector<ConfigEntry> parse_config_entries(const std::string& text) {
    std::vector<ConfigEntry> entries;
    std::string section;
    size_t pos = 0;
    int64_t lineno = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) {
            if (pos > text.size()) break;
            continue;
        }
        const std::string where = "config line " + std::to_string(lineno);
        if (line.front() == '[') {
            require(line.back() == ']', where + ": unterminated section header '" + line + "'");
            section = detail::trim(line.substr(1, line.size() - 2));
            require(!section.empty(), where + ": empty section name");
            continue;
        }
        const size_t eq = line.find('=');
        require(eq != std::string::npos, where + ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        require(!key.empty(), where + ": empty key");
        require(!section.empty(), where + ": assignment before any [section]");
        entries.push_back(ConfigEntry{section + "." + key, detail::trim(line.substr(eq + 1))});
    }
    return entries;
}

/// Parses the JSON alternative: an object of sections, each an object of
/// scalar (or string-array) values.
inline std::vector<ConfigEntry> parse_config_entries_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: JSON parse error: ") + e.what());
    }
    require(doc.is_object(), "config: JSON root must be an object of sections");
    std::vector<ConfigEntry> entries;
    for (const auto& [section, body] : doc.items()) {
        require(body.is_object(), "config: JSON section '" + section + "' must be an object");
        for (const auto& [key, value] : body.items()) {
            const std::string dotted = section + "." + key;
            std::string text_value;
            if (value.is_string()) {
                text_value = value.get<std::string>();
            } else if (value.is_boolean()) {
                text_value = value.get<bool>() ? "true" : "false";
            } else if (value.is_number_integer()) {
                text_value = std::to_string(value.get<int64_t>());
            } else if (value.is_number_float()) {
                text_value = fmt_double(value.get<double>());
            } else if (value.is_array()) {
                std::vector<std::string> items;
                for (const auto& item : value) {
                    require(item.is_string(),
                            "config: JSON list '" + dotted + "' must hold strings");
                    items.push_back(item.get<std::string>());
                }
                text_value = detail::join_list(items);
            } else {
                throw std::invalid_argument("config: JSON value for '" + dotted +
                                            "' must be a scalar or string list");
            }
            entries.push_back(ConfigEntry{dotted, text_value});
        }
    }
    return entries;
}

/// Applies one dotted assignment ("section.key=value") to a config in place.
inline void apply_config_override(RunConfig& cfg, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    require(eq != std::string::npos,
            "config: override '" + assignment + "' must look like section.key=value");
    const std::string key = detail::trim(assignment.substr(0, eq));
    detail::config_field(key).set(cfg, detail::trim(assignment.substr(eq + 1)));
}

/// Builds a config from text, starting at defaults; JSON is detected by a
/// leading '{'. Later assignments to the same key win.
inline RunConfig parse_run_config(const std::string& text) {
    size_t first = 0;
    while (first < text.size() && std::isspace(static_cast<unsigned char>(text[first]))) ++first;
    const bool json = first < text.size() && text[first] == '{';
    RunConfig cfg;
    for (const ConfigEntry& e :
         json ? parse_config_entries_json(text) : parse_config_entries(text))
        detail::config_field(e.key).set(cfg, e.value);
    return cfg;
}

/// Canonical sectioned-text form: every key in schema order with its
/// effective value. parse_run_config(canonical_text()) reproduces the config.
inline std::string RunConfig::canonical_text() const {
    std::string out = "# wavedef-config v1\n";
    std::string section;
    for (const detail::ConfigField& f : detail::config_fields()) {
        const std::string key = f.key;
        const size_t dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            out += (section.empty() ? "" : "\n") + ("[" + sec + "]\n");
            section = sec;
        }
        out += key.substr(dot + 1) + " = " + f.get(*this) + "\n";
    }
    return out;
}

inline void RunConfig::validate() const {
    require(dataset.kind == "synthetic" || dataset.kind == "cifar10",
            "config: dataset.kind must be synthetic or cifar10, got '" + dataset.kind + "'");
    if (dataset.kind == "cifar10") {
        require(!dataset.path.empty(), "config: dataset.kind=cifar10 requires dataset.path");
        require(dataset.height == 32 && dataset.width == 32,
                "config: cifar10 images are 32x32");
    }
    require(dataset.num_classes >= 2, "config: dataset.num_classes must be >= 2");
    require(dataset.count >= 1 && dataset.eval_count >= 1,
            "config: dataset.count and dataset.eval_count must be >= 1");
    // Five stride-2 regenerator stages halve the spatial dims five times.
    require(dataset.height >= 32 && dataset.width >= 32 && dataset.height % 32 == 0 &&
                dataset.width % 32 == 0,
            "config: dataset.height and dataset.width must be positive multiples of 32");

    for (const auto* m : {&victim.arch, &steal.arch})
        require(*m == "cnn_small" || *m == "cnn_half" || *m == "cnn_residual",
                "config: unknown classifier arch '" + *m + "'");
    require(victim.width >= 1 && steal.width >= 1, "config: classifier width must be >= 1");
    require(victim.epochs >= 1 && victim.batch_size >= 1 && victim.lr > 0.0,
            "config: victim training needs epochs >= 1, batch_size >= 1, lr > 0");

    require(blackbox.port >= 0 && blackbox.port <= 65535,
            "config: blackbox.port must be in [0, 65535]");
    if (!blackbox.host.empty())
        require(blackbox.port >= 1, "config: blackbox.host requires a nonzero blackbox.port");

    require(steal.source == "uniform_noise" || steal.source == "procedural_shapes" ||
                steal.source == "file_proxy",
            "config: unknown steal.source '" + steal.source + "'");
    if (steal.source == "file_proxy")
        require(!steal.source_path.empty(),
                "config: steal.source=file_proxy requires steal.source_path");
    require(steal.source_count >= 1, "config: steal.source_count must be >= 1");
    require(steal.epochs >= 1 && steal.batch_size >= 1 && steal.lr > 0.0,
            "config: stealing needs epochs >= 1, batch_size >= 1, lr > 0");
    require(steal.confidence_floor >= 0.0 && steal.confidence_floor < 1.0,
            "config: steal.confidence_floor must be in [0, 1)");

    try {
        filter_bank(wavelet.family);
    } catch (const std::invalid_argument&) {
        throw std::invalid_argument("config: unknown wavelet.family '" + wavelet.family + "'");
    }
    require(wavelet.levels >= 1, "config: wavelet.levels must be >= 1");
    require(wavelet.k_max >= 2 && wavelet.k_max <= 100,
            "config: wavelet.k_max must be in [2, 100]");
    require(wavelet.tau > 0.0, "config: wavelet.tau must be positive");
    require(wavelet.selection == "roc_saturation" || wavelet.selection == "lfr_argmin",
            "config: wavelet.selection must be roc_saturation or lfr_argmin, got '" +
                wavelet.selection + "'");
    require(wavelet.sweep_samples >= 1, "config: wavelet.sweep_samples must be >= 1");

    require(!attack.kinds.empty(), "config: attack.kinds must name at least one attack");
    std::vector<std::string> kinds_with_sweep = attack.kinds;
    kinds_with_sweep.push_back(wavelet.sweep_attack);
    for (const std::string& kind : kinds_with_sweep)
        require(kind == "fgsm" || kind == "bim" || kind == "pgd",
                "config: unknown attack kind '" + kind + "'");
    for (size_t i = 0; i < attack.kinds.size(); ++i)
        for (size_t j = i + 1; j < attack.kinds.size(); ++j)
            require(attack.kinds[i] != attack.kinds[j],
                    "config: attack.kinds repeats '" + attack.kinds[i] + "'");
    require(attack.epsilon > 0.0, "config: attack.epsilon must be positive");
    require(attack.iterations >= 1, "config: attack.iterations must be >= 1");

    require(regen.base_width >= 1, "config: regen.base_width must be >= 1");
    require(regen.epochs >= 1 && regen.batch_size >= 1 && regen.lr > 0.0,
            "config: regenerator training needs epochs >= 1, batch_size >= 1, lr > 0");
    loss_weights().validate();

    require(!run.output_dir.empty(), "config: run.output_dir must not be empty");
}

}  // namespace wavedef
