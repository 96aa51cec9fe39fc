// nndm command line: data generation, staged training, refinement evaluation, ablations, reports.
#include "nndm/config.hpp"
#include "nndm/errors.hpp"
#include "nndm/log.hpp"
#include "nndm/pipeline.hpp"
#include "nndm/tensor_io.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace nndm;

namespace {

struct SharedOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string data;
    std::string log_level = "info";
};

void add_shared(CLI::App* cmd, SharedOptions& o) {
    cmd->add_option("--config", o.config_path, "experiment config (JSON)");
    cmd->add_option("--seed", o.seed, "top-level seed (overrides the config)");
    cmd->add_option("--out", o.out, "run directory (overrides output_dir)");
    cmd->add_option("--data", o.data, "dataset directory (overrides dataset_dir)");
    cmd->add_option("--log-level", o.log_level, "debug|info|warning|error|off")
        ->check(CLI::IsMember({"debug", "info", "warning", "error", "off"}));
}

ExperimentConfig resolve(const SharedOptions& o) {
    ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (!o.out.empty()) c.output_dir = o.out;
    if (!o.data.empty()) c.dataset_dir = o.data;
    validate(c);
    return c;
}

void apply_log_level(const std::string& name) {
    static const std::map<std::string, log::Level> levels{{"debug", log::Level::debug},
                                                          {"info", log::Level::info},
                                                          {"warning", log::Level::warning},
                                                          {"error", log::Level::error},
                                                          {"off", log::Level::off}};
    log::set_level(levels.at(name));
}

Checkpoint load_stage(const ExperimentConfig& c, const std::string& explicit_path,
                      std::initializer_list<const char*> stages) {
    if (!explicit_path.empty()) {
        return load_checkpoint(explicit_path);
    }
    const RunLayout layout{c.output_dir};
    for (const char* stage : stages) {
        if (fs::exists(layout.checkpoint(stage))) {
            return load_checkpoint(layout.checkpoint(stage));
        }
    }
    std::string names;
    for (const char* stage : stages) names += std::string(names.empty() ? "" : ", ") + stage + ".ckpt";
    throw DataError("no checkpoint (" + names + ") in " + layout.checkpoints().string());
}

Checkpoint optional_seg(const ExperimentConfig& c, const std::string& path) {
    if (c.diffusion.initial_mask == InitialMaskSource::stress && path.empty() &&
        !fs::exists(RunLayout{c.output_dir}.checkpoint("seg"))) {
        Checkpoint none;
        none.stage = "none";
        none.config = c;
        return none;
    }
    return load_stage(c, path, {"seg"});
}

int run(int argc, char** argv) {
    CLI::App app{"Residual diffusion refinement of segmentation masks"};
    app.require_subcommand(1);
    SharedOptions shared;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic phantom suite");
    add_shared(gen, shared);
    std::optional<int> n, hw;
    std::optional<double> sigma;
    gen->add_option("--n", n, "number of cases");
    gen->add_option("--hw", hw, "image side length");
    gen->add_option("--noise-sigma", sigma, "Gaussian noise std before normalization");
    gen->callback([&] {
        ExperimentConfig c = shared.config_path.empty() ? ExperimentConfig{} : load_config(shared.config_path);
        if (shared.seed) c.seed = *shared.seed;
        if (n) c.data.n = *n;
        if (hw) c.data.hw = *hw;
        if (sigma) c.data.noise_sigma = *sigma;
        // for gen-data, --out names the dataset directory
        if (!shared.out.empty()) c.dataset_dir = shared.out;
        if (!shared.data.empty()) c.dataset_dir = shared.data;
        generate_dataset(c);
    });

    auto* train_seg = app.add_subcommand("train-seg", "stage 1: train the segmentation network");
    add_shared(train_seg, shared);
    train_seg->callback([&] { run_train_seg(resolve(shared)); });

    std::string seg_path, diff_path, ckpt_path;
    auto* train_diff = app.add_subcommand("train-diff", "stage 2: train the residual noise predictor");
    add_shared(train_diff, shared);
    train_diff->add_option("--seg", seg_path, "segmentation checkpoint (default <out>/checkpoints/seg.ckpt)");
    train_diff->callback([&] {
        const ExperimentConfig c = resolve(shared);
        run_train_diff(c, optional_seg(c, seg_path));
    });

    auto* finetune = app.add_subcommand("finetune", "stage 3: joint fine-tuning");
    add_shared(finetune, shared);
    finetune->add_option("--seg", seg_path, "segmentation checkpoint");
    finetune->add_option("--diff", diff_path, "predictor checkpoint");
    finetune->callback([&] {
        const ExperimentConfig c = resolve(shared);
        run_joint_finetune(c, load_stage(c, seg_path, {"seg"}), load_stage(c, diff_path, {"diff"}));
    });

    std::string split_name = "test";
    std::optional<int> steps;
    auto* refine_eval = app.add_subcommand("refine-eval", "baseline vs refined metrics on a split");
    add_shared(refine_eval, shared);
    refine_eval->add_option("--checkpoint", ckpt_path, "checkpoint (default finetune.ckpt, else diff.ckpt)");
    refine_eval->add_option("--split", split_name, "val|test")->check(CLI::IsMember({"val", "test"}));
    refine_eval->add_option("--steps", steps, "reverse steps (default diffusion.inference_steps)");
    refine_eval->callback([&] {
        const ExperimentConfig c = resolve(shared);
        const RefineEvalReport r =
            run_refine_eval(c, load_stage(c, ckpt_path, {"finetune", "diff"}), parse_split(split_name), steps);
        std::cout << paired_metrics_csv(r).substr(paired_metrics_csv(r).rfind("mean,"));
    });

    std::vector<std::string> arms;
    auto* ablate = app.add_subcommand("ablate", "run the ablation arms");
    add_shared(ablate, shared);
    ablate->add_option("--checkpoint", ckpt_path, "checkpoint (default finetune.ckpt, else diff.ckpt)");
    ablate->add_option("--split", split_name, "val|test")->check(CLI::IsMember({"val", "test"}));
    ablate->add_option("--arms", arms, "arm families (overrides ablation.arms)");
    ablate->callback([&] {
        ExperimentConfig c = resolve(shared);
        if (!arms.empty()) {
            c.ablation.arms = arms;
            validate(c);
        }
        const AblationReport r = run_ablation(c, load_stage(c, ckpt_path, {"finetune", "diff"}), parse_split(split_name));
        std::cout << ablation_csv(r);
    });

    auto* report = app.add_subcommand("report", "tables and plots from a run directory");
    add_shared(report, shared);
    report->callback([&] {
        const ExperimentConfig c = resolve(shared);
        const RunLayout layout{c.output_dir};
        emit_report(collect_report_inputs(layout), layout.root);
        std::cout << read_file_bytes(layout.report_md());
    });

    for (CLI::App* cmd : app.get_subcommands({})) {
        cmd->parse_complete_callback([&] { apply_log_level(shared.log_level); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        log::error(e.what());
        return 2;
    } catch (const DataError& e) {
        log::error(e.what());
        return 3;
    } catch (const fs::filesystem_error& e) {
        log::error(e.what());
        return 3;
    } catch (const NumericalError& e) {
        log::error(e.what());
        return 4;
    } catch (const std::exception& e) {
        log::error(std::string("unexpected failure: ") + e.what());
        return 1;
    }
}
