#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pssuq/app.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Periodic steady state with stochastic testing uncertainty quantification"};
    app.require_subcommand(1, 1);

    pssuq::RunRequest req;
    std::uint64_t seed = 0;
    int order = 0;
    std::string mode;

    for (const auto& kind : pssuq::analysis_kinds()) {
        CLI::App* sub = app.add_subcommand(kind, "run the " + kind + " analysis");
        sub->add_option("--netlist", req.netlist, "netlist file");
        sub->add_option("--config", req.config, "analysis config (JSON)")->required();
        sub->add_option("--out", req.out_dir, "output directory")->required();
        sub->add_option("--seed", seed, "override the Monte Carlo / sampling seed");
        sub->add_option("--order", order, "override the gPC order")->check(CLI::NonNegativeNumber);
        sub->add_option("--mode", mode, "coupled or decoupled Jacobian solve")
            ->check(CLI::IsMember({"coupled", "decoupled"}));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    req.command = sub->get_name();
    if (sub->count("--seed") > 0) {
        req.seed = seed;
    }
    if (sub->count("--order") > 0) {
        req.order = order;
    }
    if (sub->count("--mode") > 0) {
        req.mode = pssuq::solve_mode_from_name(mode);
    }
    return pssuq::run(req, std::cerr);
}
