#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "wavedef/cli.hpp"

namespace {

struct Invocation {
    std::string subcommand;
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    bool stdio = false;
};

wavedef::RunConfig effective_config(const Invocation& inv) {
    wavedef::RunConfig cfg;
    if (!inv.config_path.empty())
        cfg = wavedef::parse_run_config(wavedef::read_file(inv.config_path));
    for (const std::string& assignment : inv.overrides)
        wavedef::apply_config_override(cfg, assignment);
    if (!inv.out_dir.empty()) cfg.run.output_dir = inv.out_dir;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wavedef: wavelet-purification defense pipeline for black-box models"};
    app.require_subcommand(1);

    Invocation inv;
    const std::pair<const char*, const char*> kSubcommands[] = {
        {"train-victim", "Train the victim classifier and write its checkpoint"},
        {"steal", "Distill a surrogate of the victim from synthetic queries"},
        {"wcsm-sweep", "Sweep wavelet retention k and select k_hat by label consistency"},
        {"craft-attacks", "Craft adversarial evaluation sets on the surrogate"},
        {"train-regen", "Train the regenerator against the frozen surrogate"},
        {"evaluate", "Score defense variants on clean and adversarial sets"},
        {"full-dbma", "Run the whole defense pipeline end to end"},
        {"serve", "Serve the victim checkpoint over the wire protocol"},
    };
    for (const auto& [name, description] : kSubcommands) {
        CLI::App* sub = app.add_subcommand(name, description);
        sub->add_option("--config", inv.config_path,
                        "Run configuration file (sectioned text or JSON)")
            ->check(CLI::ExistingFile);
        sub->add_option("--set", inv.overrides,
                        "Override one key as section.key=value (repeatable)");
        sub->add_option("--out", inv.out_dir, "Output directory (overrides run.output_dir)");
        if (std::string(name) == "serve")
            sub->add_flag("--stdio", inv.stdio, "Speak the protocol over stdin/stdout");
        sub->callback([&inv, name = std::string(name)] { inv.subcommand = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad flags are configuration errors
    }

    try {
        const wavedef::RunConfig cfg = effective_config(inv);
        if (inv.subcommand == "serve")
            wavedef::serve_victim(cfg, inv.stdio);
        else
            wavedef::run_subcommand(inv.subcommand, cfg);
        return 0;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
