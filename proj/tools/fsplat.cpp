#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "featsplat/gradcheck.hpp"
#include "featsplat/pipeline.hpp"

namespace {

using namespace fsplat;

struct Overrides {
    std::string config;
    std::optional<long long> seed, iterations, resolution;
    std::optional<std::string> tcf, retrack;
    bool deterministic = false;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "key = value config file");
        app->add_option("--seed", seed, "training seed");
        app->add_flag("--deterministic", deterministic, "fixed frame order and reduction order");
        app->add_option("--iterations", iterations, "training iterations");
        app->add_option("--tcf", tcf, "temporal condition features")->check(CLI::IsMember({"on", "off"}));
        app->add_option("--retrack", retrack, "landmark retracking before fitting")->check(CLI::IsMember({"on", "off"}));
        app->add_option("--resolution", resolution, "UV texture resolution");
    }

    Config load() const {
        Config cfg = config.empty() ? Config::parse("", "defaults") : Config::load(config);
        if (seed) cfg.set("seed", std::to_string(*seed));
        if (iterations) cfg.set("iterations", std::to_string(*iterations));
        if (resolution) cfg.set("resolution", std::to_string(*resolution));
        if (tcf) cfg.set("tcf", *tcf);
        if (retrack) cfg.set("retrack", *retrack);
        if (deterministic) cfg.set("deterministic", "on");
        else if (!cfg.has("deterministic")) cfg.set("deterministic", "off");
        cfg.require_known(known_config_keys());
        return cfg;
    }
};

void configure_threads() {
#ifdef _OPENMP
    if (const char* env = std::getenv("FSPLAT_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) omp_set_num_threads(n);
    }
#endif
}

}  // namespace

int main(int argc, char** argv) {
    configure_threads();
    CLI::App app{"fsplat: feature Gaussian portrait fitting and rendering"};
    app.require_subcommand(1);
    Overrides ov;

    std::string out, dataset, track, ckpt, scope = "all", corrupt;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic oracle dataset");
    synth->add_option("--out", out, "dataset directory")->required();

    CLI::App* rt = app.add_subcommand("retrack", "re-estimate body parameters from landmarks");
    rt->add_option("dataset", dataset)->required();
    rt->add_option("--out", out, "output track CSV")->required();

    CLI::App* fit = app.add_subcommand("fit", "train a portrait model");
    fit->add_option("dataset", dataset)->required();
    fit->add_option("--track", track, "track CSV (default: the dataset's true track)");
    fit->add_option("--out", out, "checkpoint directory")->required();

    CLI::App* render = app.add_subcommand("render", "render frames from a checkpoint");
    render->add_option("checkpoint", ckpt)->required();
    render->add_option("--dataset", dataset, "dataset supplying asset, cameras, backgrounds and masks")->required();
    render->add_option("--track", track, "track CSV (default: the dataset's true track)");
    render->add_option("--out", out, "frame directory")->required();

    CLI::App* swap = app.add_subcommand("swap", "retrack, fit and render in one go");
    swap->add_option("dataset", dataset)->required();
    swap->add_option("--out", out, "output directory")->required();

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every adjoint");
    gc->add_option("--scope", scope, "all, renderer, body, texture, temporal, rerender, loss, end_to_end");
    gc->add_option("--corrupt", corrupt, "scale one class's analytic gradient (harness self-test)");

    for (CLI::App* sub : {synth, rt, fit, render, swap, gc}) ov.attach(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const auto opt_path = [](const std::string& s) {
        return s.empty() ? std::optional<std::filesystem::path>{} : std::optional<std::filesystem::path>{s};
    };

    try {
        const Config cfg = ov.load();
        if (*synth) {
            cmd_synth(cfg, out, std::cout);
        } else if (*rt) {
            cmd_retrack(dataset, cfg, out, std::cout);
        } else if (*fit) {
            cmd_fit(dataset, opt_path(track), cfg, out, std::cout);
        } else if (*render) {
            cmd_render(ckpt, dataset, opt_path(track), out, std::cout);
        } else if (*swap) {
            cmd_swap(dataset, cfg, out, std::cout);
        } else if (*gc) {
            GradcheckOptions go;
            go.scope = scope;
            go.corrupt = corrupt;
            if (ov.seed) go.seed = static_cast<std::uint64_t>(*ov.seed);
            const GradcheckReport report = run_gradcheck(go);
            std::cout << report.format() << "gradcheck " << (report.passed() ? "passed" : "FAILED") << " in "
                      << report.seconds << " s\n";
            return report.passed() ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const TopologyMismatch& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
