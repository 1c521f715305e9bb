#include <iostream>

#include <CLI11.hpp>
#include <omp.h>

#include "app.hpp"
#include "samba/errors.hpp"

namespace samba::app {

int run_cli(int argc, char** argv) {
    CLI::App cli{"Promptable tumor segmentation pipeline on synthetic MRI phantoms"};
    cli.require_subcommand(1);
    std::string config, workdir, stage;
    bool force = false;
    int threads = 0;
    std::uint64_t seed = 0;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "Experiment JSON")->required();
        sub->add_option("--workdir", workdir, "Override paths.workdir");
        sub->add_flag("--force", force, "Rebuild outputs that already exist");
        sub->add_option("--threads", threads, "OpenMP threads (0 keeps the runtime default)")->check(CLI::NonNegativeNumber);
        sub->add_option("--seed", seed, "Override every seed in the config");
    };
    auto* gen = cli.add_subcommand("gen", "Generate the phantom dataset");
    auto* train = cli.add_subcommand("train", "Train one stage");
    train->add_option("--stage", stage, "foundation | localizer | samba | voting")
        ->required()
        ->check(CLI::IsMember({"foundation", "localizer", "samba", "voting"}));
    auto* eval = cli.add_subcommand("eval", "Evaluate every configured condition on the val split");
    auto* sens = cli.add_subcommand("sensitivity", "Probe IoU under unit prompt shifts");
    auto* report = cli.add_subcommand("report", "Write report.md from the evaluation outputs");
    for (auto* s : {gen, train, eval, sens, report}) common(s);

    try {
        cli.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return cli.exit(e);
    } catch (const CLI::ParseError& e) {
        cli.exit(e);
        return 2;
    }

    try {
        if (threads > 0) omp_set_num_threads(threads);
        Overrides ov;
        if (!workdir.empty()) ov.workdir = workdir;
        for (auto* s : {gen, train, eval, sens, report})
            if (s->count("--seed")) ov.seed = seed;
        const Experiment e = load_experiment(config, ov);
        const Options opt{force, nullptr};
        if (*gen) cmd_gen(e, opt);
        else if (*train) cmd_train(e, stage, opt);
        else if (*eval) cmd_eval(e, opt);
        else if (*sens) cmd_sensitivity(e, opt);
        else cmd_report(e, opt);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifactError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 4;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 5;
    }
}

}  // namespace samba::app
