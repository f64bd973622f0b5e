#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "azsl/experiment.hpp"

int main(int argc, char** argv) {
    using namespace azsl::cli;
    CLI::App app{"Absolute zero-shot learning: teacher server, data-free client, evaluation"};
    app.require_subcommand(1);

    std::string config, transcript, spec, out_path, param;
    std::vector<std::string> values;

    auto* run = app.add_subcommand("run", "train a client against a teacher and evaluate");
    run->add_option("config", config, "experiment config")->required();

    auto* serve = app.add_subcommand("serve", "train the teacher and serve feedback over TCP");
    serve->add_option("config", config, "experiment config")->required();

    auto* aud = app.add_subcommand("audit", "summarize a channel transcript");
    aud->add_option("transcript", transcript, "transcript.json")->required();

    auto* sweep = app.add_subcommand("sweep", "run one experiment per parameter value");
    sweep->add_option("config", config, "experiment config")->required();
    sweep->add_option("--param", param, "noise_dim or alpha")->required();
    sweep->add_option("--values", values, "comma-separated values")->required()->delimiter(',');

    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
    gen->add_option("spec", spec, "synthetic spec file")->required();
    gen->add_option("out", out_path, "output .csv or .azb")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    if (*run) return cmd_run(config, std::cout, std::cerr);
    if (*serve) return cmd_serve(config, std::cout, std::cerr);
    if (*aud) return cmd_audit(transcript, std::cout, std::cerr);
    if (*sweep) return cmd_sweep(config, param, values, std::cout, std::cerr);
    if (*gen) return cmd_gen_data(spec, out_path, std::cout, std::cerr);
    return kExitUsage;
}
