#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "countgrid/errors.hpp"
#include "countgrid/metrics.hpp"
#include "countgrid/runner.hpp"

namespace {

int dispatch(int argc, char** argv) {
    CLI::App app{"Grid-detector training, label propagation, and counting evaluation"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Generate a synthetic benchmark");
    std::string gen_spec, gen_out;
    int gen_count = 20, gen_background = 10;
    gen->add_option("--spec", gen_spec, "Scene spec JSON file")->required();
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--count", gen_count, "Number of object scenes");
    gen->add_option("--background-count", gen_background, "Number of background images");

    // run
    auto* run = app.add_subcommand("run", "Train and evaluate a detector");
    std::string run_config, run_mode = "pfod";
    std::vector<std::string> run_overrides;
    run->add_option("--config", run_config, "Run config JSON file")->required();
    run->add_option("--mode", run_mode, "od | pfod")
        ->check(CLI::IsMember({"od", "pfod"}));
    run->add_option("--set", run_overrides,
                    "Override config keys via dotted paths, e.g. schedule.num_stages=3");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Recompute metrics from saved predictions");
    std::string eval_preds, eval_ann;
    eval->add_option("--predictions", eval_preds, "predictions.jsonl path")->required();
    eval->add_option("--test-annotations", eval_ann, "Test annotations JSONL")->required();

    // visualize
    auto* vis = app.add_subcommand("visualize", "Render prediction overlays");
    std::string vis_model, vis_ann, vis_out;
    double vis_threshold = 0.5;
    vis->add_option("--model", vis_model, "Model checkpoint")->required();
    vis->add_option("--annotations", vis_ann, "Annotations JSONL")->required();
    vis->add_option("--threshold", vis_threshold, "Counting score threshold");
    vis->add_option("--out", vis_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        countgrid::run_generate(countgrid::load_scene_spec(gen_spec), gen_out, gen_count,
                                gen_background);
        std::cout << "wrote " << gen_count << " scenes and " << gen_background
                  << " background images to " << gen_out << "\n";
    } else if (run->parsed()) {
        const countgrid::RunConfig config =
            countgrid::load_run_config(run_config, run_overrides);
        const countgrid::RunMode mode =
            run_mode == "od" ? countgrid::RunMode::Od : countgrid::RunMode::Pfod;
        const countgrid::RunArtifacts artifacts = countgrid::run_experiment(config, mode);
        std::cout << artifacts.report.to_json() << "\n";
        std::cout << "artifacts in " << config.output_dir << "\n";
    } else if (eval->parsed()) {
        const countgrid::EvalReport report = countgrid::run_evaluate(
            eval_preds, eval_ann, countgrid::default_counting_grid());
        std::cout << report.to_json() << "\n";
    } else if (vis->parsed()) {
        countgrid::run_visualize(vis_model, vis_ann, vis_threshold, vis_out);
        std::cout << "overlays written to " << vis_out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const countgrid::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const countgrid::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const countgrid::DivergenceError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
