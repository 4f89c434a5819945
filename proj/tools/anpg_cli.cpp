#include "anpg/harness.hpp"

#include <CLI11.hpp>

int main(int argc, char** argv) {
    CLI::App app{"anpg: accelerated natural policy gradient on tabular MDPs"};
    app.require_subcommand(1);

    std::optional<std::string> output_dir;
    std::string spec_path, audit_name, generator, out_path;
    double gamma = 0.9;

    auto* run = app.add_subcommand("run", "execute every sweep point and audit of a spec");
    run->add_option("spec", spec_path, "experiment spec file")->required();
    run->add_option("--output-dir", output_dir, "overrides output_dir and ANPG_OUTPUT_DIR");

    auto* audit = app.add_subcommand("audit", "run one audit suite against a spec");
    audit->add_option("name", audit_name, "oracle-selfcheck, lemma1, lemma5, lemma6, lemma7, corollary1, scaling, asgd-vs-sgd")
        ->required();
    audit->add_option("spec", spec_path, "experiment spec file")->required();
    audit->add_option("--output-dir", output_dir, "overrides output_dir and ANPG_OUTPUT_DIR");

    auto* gen = app.add_subcommand("gen", "write a generated MDP file");
    gen->add_option("generator", generator, "chain(n), gridworld(w,h) or random(S,A,seed,branching)")->required();
    gen->add_option("out", out_path, "output path")->required();
    gen->add_option("--gamma", gamma, "discount factor")->capture_default_str();

    app.add_subcommand("version", "print the version");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : anpg::kExitConfig;
    }

    anpg::CliOptions opt;
    opt.output_dir = output_dir;
    if (run->parsed()) return anpg::cli_run(spec_path, opt);
    if (audit->parsed()) return anpg::cli_audit(audit_name, spec_path, opt);
    if (gen->parsed()) return anpg::cli_generate_mdp(generator, out_path, gamma, opt);
    std::cout << "anpg " << anpg::kVersion << "\n";
    return 0;
}
