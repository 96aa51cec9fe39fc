#include "nndm/pipeline.hpp"

#include "nndm/errors.hpp"
#include "nndm/log.hpp"
#include "nndm/plot.hpp"
#include "nndm/rng.hpp"
#include "nndm/tensor_io.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace nndm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fixed(double v, int decimals) {
    if (!std::isfinite(v)) {
        return "NA";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::string epoch_message(const char* stage, int epoch, int epochs, const std::string& losses) {
    return std::string(stage) + " epoch " + std::to_string(epoch + 1) + "/" + std::to_string(epochs) + " " +
           losses;
}

void require_stage(const Checkpoint& c, bool need_theta, bool need_phi, const char* what) {
    if ((need_theta && !c.segmentation) || (need_phi && !c.predictor)) {
        throw DataError(std::string(what) + ": checkpoint from stage '" + c.stage + "' lacks " +
                        (need_theta && !c.segmentation ? "segmentation" : "predictor") + " parameters");
    }
}

void check_compatible(const ExperimentConfig& config, const Checkpoint& c) {
    if (c.segmentation && !(c.segmentation->config() == config.segmentation_config())) {
        throw ConfigError("segmentation checkpoint architecture does not match the config");
    }
    if (c.predictor) {
        PredictorConfig expected = config.predictor_config();
        expected.condition_on_mask = c.predictor->config().condition_on_mask;
        if (!(c.predictor->config() == expected)) {
            throw ConfigError("predictor checkpoint architecture does not match the config");
        }
    }
}

void write_history(const RunLayout& layout, const std::vector<HistoryRow>& history) {
    write_file_bytes(layout.history_csv(), history_csv(history));
}

void finalize(const ExperimentConfig& config, Checkpoint& checkpoint) {
    const RunLayout layout{config.output_dir};
    fs::create_directories(layout.checkpoints());
    save_checkpoint(layout.checkpoint(checkpoint.stage), checkpoint);
    write_history(layout, checkpoint.history);
    log::info("wrote " + layout.checkpoint(checkpoint.stage).string());
}

std::vector<std::size_t> split_indices(const Dataset& dataset, Split split) {
    auto indices = dataset.manifest.indices(split);
    if (indices.empty()) {
        throw DataError(std::string("split '") + std::string(to_string(split)) + "' is empty");
    }
    return indices;
}

std::vector<ResidualCase> residual_cases(const ExperimentConfig& config, const SegmentationModel* model,
                                         const Dataset& dataset, Split split) {
    std::vector<ResidualCase> out;
    for (std::size_t i : split_indices(dataset, split)) {
        const PhantomCase& c = dataset.cases[i];
        PredictedMask y0 = initial_mask(config, model, dataset, i);
        ResidualMap e = compute_residual(c.mask, y0);
        out.push_back({c.volume, std::move(y0), std::move(e)});
    }
    return out;
}

NetworkNoisePredictor train_predictor(const ExperimentConfig& config, const PredictorConfig& pc,
                                      const NoiseSchedule& schedule, std::span<const ResidualCase> cases,
                                      const std::string& tag, std::vector<HistoryRow>* history,
                                      nn::Adam* optimizer_out) {
    NetworkNoisePredictor predictor(pc, derive_seed(config.seed, "phi/" + tag));
    nn::Adam adam(predictor.network().params());
    Rng rng(derive_seed(config.seed, "diff-train/" + tag));
    const TrainOptions options{config.diffusion.lr, config.diffusion.batch_size};
    for (int epoch = 0; epoch < config.diffusion.epochs; ++epoch) {
        const double loss = train_predictor_epoch(predictor, cases, schedule, adam, options, rng);
        log::info(epoch_message(("diff[" + tag + "]").c_str(), epoch, config.diffusion.epochs,
                                "l_diff=" + fixed(loss, 5)));
        if (history) {
            HistoryRow row;
            row.stage = "diff";
            row.epoch = epoch;
            row.l_diff = loss;
            history->push_back(row);
        }
    }
    if (optimizer_out) {
        *optimizer_out = std::move(adam);
    }
    return predictor;
}

json summary_json(const MetricSummary& s) {
    return {{"mean", std::isnan(s.mean) ? json(nullptr) : json(s.mean)},
            {"std", std::isnan(s.stddev) ? json(nullptr) : json(s.stddev)},
            {"count", s.count}};
}

double number_or_nan(const json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

MetricSummary summary_from_json(const json& j) {
    return {number_or_nan(j.at("mean")), number_or_nan(j.at("std")), j.at("count").get<std::size_t>()};
}

json refine_report_json(const RefineEvalReport& r) {
    json cases = json::array();
    for (std::size_t i = 0; i < r.baseline.cases.size(); ++i) {
        const auto& b = r.baseline.cases[i].metrics;
        const auto& f = r.refined.cases[i].metrics;
        cases.push_back({{"case_id", r.baseline.cases[i].case_id},
                         {"baseline_dsc", b.dsc},
                         {"baseline_hd95", b.hd95 ? json(*b.hd95) : json(nullptr)},
                         {"baseline_vs", b.vs},
                         {"refined_dsc", f.dsc},
                         {"refined_hd95", f.hd95 ? json(*f.hd95) : json(nullptr)},
                         {"refined_vs", f.vs}});
    }
    return {{"split", std::string(to_string(r.split))},
            {"steps", r.steps},
            {"baseline", {{"dsc", summary_json(r.baseline.dsc)},
                          {"hd95", summary_json(r.baseline.hd95)},
                          {"vs", summary_json(r.baseline.vs)}}},
            {"refined", {{"dsc", summary_json(r.refined.dsc)},
                         {"hd95", summary_json(r.refined.hd95)},
                         {"vs", summary_json(r.refined.vs)}}},
            {"baseline_seconds", r.baseline_seconds},
            {"refine_seconds", r.refine_seconds},
            {"cases", cases}};
}

json ablation_report_json(const AblationReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"arm", row.arm},
                        {"steps", row.steps},
                        {"dsc", summary_json(row.dsc)},
                        {"hd95", summary_json(row.hd95)},
                        {"vs", summary_json(row.vs)},
                        {"seconds", row.seconds}});
    }
    return {{"split", std::string(to_string(r.split))}, {"rows", rows}};
}

AblationRow ablation_row(std::string arm, int steps, const MetricsReport& report, double seconds) {
    return {std::move(arm), steps, report.dsc, report.hd95, report.vs, seconds};
}

}  // namespace

Dataset generate_dataset(const ExperimentConfig& config) {
    validate(config);
    auto cases = generate_phantoms(config.data.n, config.data.hw, config.seed, config.data.noise_sigma);
    DatasetManifest manifest = split_dataset(cases, config.data.fractions, config.seed);
    write_dataset(manifest, cases, config.dataset_dir);
    log::info("wrote " + std::to_string(cases.size()) + " cases to " + config.dataset_dir);
    return {std::move(manifest), std::move(cases)};
}

Dataset load_dataset(const ExperimentConfig& config) {
    if (!fs::exists(fs::path(config.dataset_dir) / "manifest.json")) {
        throw DataError("dataset not found at " + config.dataset_dir + " (run gen-data first)");
    }
    Dataset dataset = read_dataset(config.dataset_dir);
    const auto hw = static_cast<std::size_t>(config.data.hw);
    for (const auto& c : dataset.cases) {
        const Tensor& t = c.volume.tensor();
        if (t.channels() != 2 || t.height() != hw || t.width() != hw || c.mask.tensor().channels() != 1) {
            throw DataError("case " + c.id + " has image shape " + t.shape_string() + ", config expects [2," +
                            std::to_string(hw) + "," + std::to_string(hw) + "]");
        }
    }
    return dataset;
}

std::vector<LabeledCase> labeled_cases(const Dataset& dataset, Split split) {
    std::vector<LabeledCase> out;
    for (std::size_t i : split_indices(dataset, split)) {
        out.push_back({dataset.cases[i].volume, dataset.cases[i].mask});
    }
    return out;
}

PredictedMask initial_mask(const ExperimentConfig& config, const SegmentationModel* model,
                           const Dataset& dataset, std::size_t index) {
    const PhantomCase& c = dataset.cases.at(index);
    if (config.diffusion.initial_mask == InitialMaskSource::stress) {
        return stress_degrade(c.mask, derive_seed(config.seed, "stress", index));
    }
    if (!model) {
        throw ConfigError("initial_mask=model needs a segmentation model");
    }
    return predict(*model, c.volume);
}

Checkpoint run_train_seg(const ExperimentConfig& config) {
    validate(config);
    const Dataset dataset = load_dataset(config);
    const auto train = labeled_cases(dataset, Split::train);
    SegmentationModel model = build_model(config.segmentation_config(), derive_seed(config.seed, "theta"));
    nn::Adam adam(model.network().params());
    Rng rng(derive_seed(config.seed, "seg-train"));
    const TrainOptions options{config.segmentation.lr, config.segmentation.batch_size};

    Checkpoint ckpt;
    ckpt.stage = "seg";
    ckpt.config = config;
    for (int epoch = 0; epoch < config.segmentation.epochs; ++epoch) {
        HistoryRow row;
        row.stage = "seg";
        row.epoch = epoch;
        row.l_seg = train_epoch(model, train, adam, options, rng);
        log::info(epoch_message("seg", epoch, config.segmentation.epochs, "l_seg=" + fixed(row.l_seg, 5)));
        ckpt.history.push_back(row);
    }
    ckpt.segmentation = std::move(model);
    ckpt.segmentation_optimizer = std::move(adam);
    finalize(config, ckpt);
    return ckpt;
}

Checkpoint run_train_diff(const ExperimentConfig& config, const Checkpoint& seg) {
    validate(config);
    const bool needs_theta = config.diffusion.initial_mask == InitialMaskSource::model;
    if (needs_theta) {
        require_stage(seg, true, false, "train-diff");
    }
    check_compatible(config, seg);
    const Dataset dataset = load_dataset(config);
    const SegmentationModel* model = seg.segmentation ? &*seg.segmentation : nullptr;
    const auto cases = residual_cases(config, model, dataset, Split::train);

    Checkpoint ckpt;
    ckpt.stage = "diff";
    ckpt.config = config;
    ckpt.segmentation = seg.segmentation;
    ckpt.segmentation_optimizer = seg.segmentation_optimizer;
    ckpt.history = seg.history;
    nn::Adam adam;
    ckpt.predictor = train_predictor(config, config.predictor_config(), config.schedule(), cases, "main",
                                     &ckpt.history, &adam);
    ckpt.predictor_optimizer = std::move(adam);
    finalize(config, ckpt);
    return ckpt;
}

Checkpoint run_joint_finetune(const ExperimentConfig& config, const Checkpoint& seg, const Checkpoint& diff) {
    validate(config);
    require_stage(seg, true, false, "finetune");
    require_stage(diff, false, true, "finetune");
    check_compatible(config, seg);
    check_compatible(config, diff);
    const Dataset dataset = load_dataset(config);
    const auto train_indices = split_indices(dataset, Split::train);
    const NoiseSchedule schedule = config.schedule();

    SegmentationModel model = *seg.segmentation;
    nn::Adam seg_adam = seg.segmentation_optimizer ? *seg.segmentation_optimizer : nn::Adam(model.network().params());
    NetworkNoisePredictor predictor = *diff.predictor;
    nn::Adam phi_adam = diff.predictor_optimizer ? *diff.predictor_optimizer : nn::Adam(predictor.network().params());
    nn::Gradients seg_grads(model.network().params());
    nn::Gradients phi_grads(predictor.network().params());
    nn::AdamOptions seg_opts;
    seg_opts.lr = config.segmentation.lr;
    nn::AdamOptions phi_opts;
    phi_opts.lr = config.diffusion.lr;
    const double lambda = config.lambda_weight;
    const auto batch = static_cast<std::size_t>(config.segmentation.batch_size);
    Rng rng(derive_seed(config.seed, "finetune"));

    Checkpoint ckpt;
    ckpt.stage = "finetune";
    ckpt.config = config;
    ckpt.history = diff.history;
    std::vector<std::size_t> order = train_indices;
    for (int epoch = 0; epoch < config.finetune_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        double seg_sum = 0.0;
        double diff_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            const double weight = 1.0 / static_cast<double>(end - start);
            seg_grads.zero();
            phi_grads.zero();
            std::vector<PredictedMask> current;
            for (std::size_t k = start; k < end; ++k) {
                const PhantomCase& c = dataset.cases[order[k]];
                PredictedMask probs{Tensor(c.mask.tensor().shape())};
                seg_sum += accumulate_case_gradient(model, {c.volume, c.mask}, weight, seg_grads, &probs);
                current.push_back(std::move(probs));
            }
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t index = order[k];
                const PhantomCase& c = dataset.cases[index];
                PredictedMask y0 = config.diffusion.initial_mask == InitialMaskSource::model
                                       ? std::move(current[k - start])
                                       : initial_mask(config, nullptr, dataset, index);
                ResidualMap e = compute_residual(c.mask, y0);
                const ResidualCase rc{c.volume, std::move(y0), std::move(e)};
                diff_sum += accumulate_diffusion_gradient(predictor, rc, schedule, lambda * weight, phi_grads, rng);
            }
            seg_adam.step(model.network().params(), seg_grads, seg_opts);
            if (lambda > 0.0) {
                phi_adam.step(predictor.network().params(), phi_grads, phi_opts);
            }
        }
        HistoryRow row;
        row.stage = "finetune";
        row.epoch = epoch;
        row.l_seg = seg_sum / static_cast<double>(order.size());
        row.l_diff = diff_sum / static_cast<double>(order.size());
        row.l_total = total_loss(row.l_seg, row.l_diff, lambda);
        if (!std::isfinite(row.l_total)) {
            throw NumericalError("finetune: non-finite objective at epoch " + std::to_string(epoch + 1));
        }
        log::info(epoch_message("finetune", epoch, config.finetune_epochs,
                                "l_seg=" + fixed(row.l_seg, 5) + " l_diff=" + fixed(row.l_diff, 5) +
                                    " l_total=" + fixed(row.l_total, 5)));
        ckpt.history.push_back(row);
    }
    ckpt.segmentation = std::move(model);
    ckpt.segmentation_optimizer = std::move(seg_adam);
    ckpt.predictor = std::move(predictor);
    ckpt.predictor_optimizer = std::move(phi_adam);
    finalize(config, ckpt);
    return ckpt;
}

RefineEvalReport evaluate_refinement(const ExperimentConfig& config, const Dataset& dataset,
                                     const SegmentationModel* model, const NoisePredictor* predictor,
                                     const NoiseSchedule& schedule, Split split, int steps) {
    const auto indices = split_indices(dataset, split);
    std::vector<BinaryMask> truths;
    std::vector<BinaryMask> baselines;
    std::vector<BinaryMask> refined;
    std::vector<std::string> ids;
    RefineEvalReport report;
    report.split = split;
    report.steps = predictor ? steps : 0;
    const RefineOptions options = config.refine_options();
    for (std::size_t i : indices) {
        const PhantomCase& c = dataset.cases[i];
        auto start = Clock::now();
        const PredictedMask y0 = initial_mask(config, model, dataset, i);
        report.baseline_seconds += seconds_since(start);
        start = Clock::now();
        if (predictor && steps > 0) {
            Rng rng(derive_seed(config.seed, "refine", i));
            const PredictedMask y = refine(y0, c.volume, *predictor, schedule, steps, rng, options);
            refined.push_back(BinaryMask::from_probabilities(y.tensor()));
        } else {
            refined.push_back(BinaryMask::from_probabilities(y0.tensor()));
        }
        report.refine_seconds += seconds_since(start);
        baselines.push_back(BinaryMask::from_probabilities(y0.tensor()));
        truths.push_back(BinaryMask::from_probabilities(c.mask.tensor()));
        ids.push_back(c.id);
    }
    report.baseline = evaluate_cases(baselines, truths, ids);
    report.refined = evaluate_cases(refined, truths, ids);
    return report;
}

RefineEvalReport run_refine_eval(const ExperimentConfig& config, const Checkpoint& checkpoint, Split split,
                                 std::optional<int> steps) {
    validate(config);
    require_stage(checkpoint, config.diffusion.initial_mask == InitialMaskSource::model, true, "refine-eval");
    check_compatible(config, checkpoint);
    const int n_steps = steps.value_or(config.diffusion.inference_steps);
    if (n_steps < 0 || n_steps > config.diffusion.T) {
        throw ConfigError("refine-eval: steps must lie in [0, T]");
    }
    const Dataset dataset = load_dataset(config);
    const SegmentationModel* model = checkpoint.segmentation ? &*checkpoint.segmentation : nullptr;
    RefineEvalReport report = evaluate_refinement(config, dataset, model, &*checkpoint.predictor,
                                                  config.schedule(), split, n_steps);
    const RunLayout layout{config.output_dir};
    fs::create_directories(layout.root);
    write_file_bytes(layout.metrics_csv(), paired_metrics_csv(report));
    write_file_bytes(layout.refine_summary(), refine_report_json(report).dump(2) + "\n");
    log::info("refine-eval " + std::string(to_string(split)) + " steps=" + std::to_string(report.steps) +
              " baseline DSC=" + fixed(report.baseline.dsc.mean, 4) + " refined DSC=" +
              fixed(report.refined.dsc.mean, 4) + " (" + fixed(report.refine_seconds, 2) + " s)");
    return report;
}

std::string paired_metrics_csv(const RefineEvalReport& r) {
    std::ostringstream out;
    out << "case_id,baseline_dsc,baseline_hd95,baseline_vs,refined_dsc,refined_hd95,refined_vs\n";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < r.baseline.cases.size(); ++i) {
        const auto& b = r.baseline.cases[i].metrics;
        const auto& f = r.refined.cases[i].metrics;
        out << r.baseline.cases[i].case_id << ',' << format_metric(b.dsc) << ',' << format_metric(b.hd95.value_or(nan))
            << ',' << format_metric(b.vs) << ',' << format_metric(f.dsc) << ','
            << format_metric(f.hd95.value_or(nan)) << ',' << format_metric(f.vs) << '\n';
    }
    auto aggregate = [&](const char* name, auto field) {
        out << name;
        for (const MetricsReport* m : {&r.baseline, &r.refined}) {
            for (const MetricSummary* s : {&m->dsc, &m->hd95, &m->vs}) {
                out << ',' << format_metric(field(*s));
            }
        }
        out << '\n';
    };
    aggregate("mean", [](const MetricSummary& s) { return s.mean; });
    aggregate("std", [](const MetricSummary& s) { return s.stddev; });
    return out.str();
}

AblationReport run_ablation(const ExperimentConfig& config, const Checkpoint& checkpoint, Split split) {
    validate(config);
    const bool needs_theta = config.diffusion.initial_mask == InitialMaskSource::model;
    require_stage(checkpoint, needs_theta, true, "ablate");
    check_compatible(config, checkpoint);
    const Dataset dataset = load_dataset(config);
    const SegmentationModel* model = checkpoint.segmentation ? &*checkpoint.segmentation : nullptr;
    const NetworkNoisePredictor& predictor = *checkpoint.predictor;
    const NoiseSchedule schedule = config.schedule();
    const int steps = config.diffusion.inference_steps;

    std::vector<ResidualCase> train_cases;
    auto training_residuals = [&]() -> const std::vector<ResidualCase>& {
        if (train_cases.empty()) {
            train_cases = residual_cases(config, model, dataset, Split::train);
        }
        return train_cases;
    };

    AblationReport report;
    report.split = split;
    auto evaluate = [&](const std::string& arm, const NoisePredictor* p, const NoiseSchedule& s, int n) {
        const RefineEvalReport r = evaluate_refinement(config, dataset, model, p, s, split, n);
        const double seconds = r.baseline_seconds + r.refine_seconds;
        log::info("ablate " + arm + ": DSC=" + fixed(r.refined.dsc.mean, 4) + " (" + fixed(seconds, 2) + " s)");
        report.rows.push_back(ablation_row(arm, r.steps, r.refined, seconds));
    };

    for (const std::string& arm : config.ablation.arms) {
        if (arm == "full") {
            evaluate("full", &predictor, schedule, steps);
        } else if (arm == "no-diffusion") {
            evaluate("no-diffusion", nullptr, schedule, 0);
        } else if (arm == "no-residual-conditioning") {
            PredictorConfig pc = config.predictor_config();
            pc.condition_on_mask = false;
            const NetworkNoisePredictor image_only =
                train_predictor(config, pc, schedule, training_residuals(), "no-residual-conditioning", nullptr, nullptr);
            evaluate("no-residual-conditioning", &image_only, schedule, steps);
        } else if (arm == "steps") {
            for (int s : config.ablation.steps) {
                evaluate("steps-" + std::to_string(s), &predictor, schedule, s);
            }
        } else if (arm == "train-T") {
            for (int t : config.ablation.train_T) {
                const NoiseSchedule other = linear_schedule(t, config.diffusion.beta_start, config.diffusion.beta_end);
                const NetworkNoisePredictor retrained = train_predictor(
                    config, config.predictor_config(), other, training_residuals(), "train-T-" + std::to_string(t),
                    nullptr, nullptr);
                evaluate("train-T-" + std::to_string(t), &retrained, other, std::min(steps, t));
            }
        } else {
            throw ConfigError("unknown ablation arm '" + arm + "'");
        }
    }
    const RunLayout layout{config.output_dir};
    fs::create_directories(layout.root);
    write_file_bytes(layout.ablation_csv(), ablation_csv(report));
    write_file_bytes(layout.ablation_json(), ablation_report_json(report).dump(2) + "\n");
    return report;
}

std::string ablation_csv(const AblationReport& report) {
    std::ostringstream out;
    out << "arm,steps,dsc_mean,dsc_std,hd95_mean,hd95_std,vs_mean,vs_std,seconds\n";
    for (const auto& row : report.rows) {
        out << row.arm << ',' << row.steps;
        for (const MetricSummary* s : {&row.dsc, &row.hd95, &row.vs}) {
            out << ',' << format_metric(s->mean) << ',' << format_metric(s->stddev);
        }
        out << ',' << format_metric(row.seconds) << '\n';
    }
    return out.str();
}

std::string markdown_table(const std::vector<MethodRow>& rows) {
    std::ostringstream out;
    out << "| Method | DSC (%) | HD95 (mm) | VS (%) |\n";
    out << "|---|---|---|---|\n";
    for (const auto& r : rows) {
        out << "| " << r.method << " | " << fixed(100.0 * r.dsc, 1) << " | " << fixed(r.hd95, 2) << " | "
            << fixed(100.0 * r.vs, 1) << " |\n";
    }
    return out.str();
}

std::string history_csv(const std::vector<HistoryRow>& history) {
    std::ostringstream out;
    out << "stage,epoch,l_seg,l_diff,l_total\n";
    for (const auto& row : history) {
        out << row.stage << ',' << row.epoch << ',' << format_metric(row.l_seg) << ','
            << format_metric(row.l_diff) << ',' << format_metric(row.l_total) << '\n';
    }
    return out.str();
}

void emit_report(const ReportInputs& inputs, const fs::path& out_dir) {
    if (inputs.methods.empty()) {
        throw DataError("report: no metrics to report");
    }
    if (inputs.baseline_dsc.size() != inputs.refined_dsc.size()) {
        throw ConfigError("report: per-case baseline and refined scores are not paired");
    }
    std::ostringstream csv;
    csv << "method,dsc,hd95,vs\n";
    for (const auto& m : inputs.methods) {
        csv << m.method << ',' << format_metric(m.dsc) << ',' << format_metric(m.hd95) << ','
            << format_metric(m.vs) << '\n';
    }
    const std::string md = "# Results\n\n" + markdown_table(inputs.methods);

    const fs::path plots = out_dir / "plots";
    std::error_code ec;
    fs::create_directories(plots, ec);
    if (ec) {
        throw DataError("report: cannot create " + plots.string() + ": " + ec.message());
    }
    write_file_bytes(out_dir / "report.csv", csv.str());
    write_file_bytes(out_dir / "report.md", md);

    // One curve per logged loss, indexed by global epoch.
    std::vector<plot::Series> series(3);
    const plot::Rgb colors[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}};
    for (std::size_t i = 0; i < inputs.history.size(); ++i) {
        const auto& row = inputs.history[i];
        const double values[] = {row.l_seg, row.l_diff, row.l_total};
        for (std::size_t k = 0; k < 3; ++k) {
            series[k].x.push_back(static_cast<double>(i));
            series[k].y.push_back(values[k]);
            series[k].color = colors[k];
        }
    }
    plot::line_plot(plots / "loss_curve.png", series);
    plot::scatter_plot(plots / "dice_scatter.png", inputs.baseline_dsc, inputs.refined_dsc);
}

ReportInputs collect_report_inputs(const RunLayout& layout) {
    ReportInputs inputs;
    auto read_json = [](const fs::path& path) {
        try {
            return json::parse(read_file_bytes(path));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": " + e.what());
        }
    };
    if (fs::exists(layout.refine_summary())) {
        const json r = read_json(layout.refine_summary());
        try {
            for (const char* which : {"baseline", "refined"}) {
                const json& s = r.at(which);
                inputs.methods.push_back({std::string(which) == "baseline" ? "Baseline" : "NNDM",
                                          summary_from_json(s.at("dsc")).mean, summary_from_json(s.at("hd95")).mean,
                                          summary_from_json(s.at("vs")).mean});
            }
            for (const auto& c : r.at("cases")) {
                inputs.baseline_dsc.push_back(c.at("baseline_dsc").get<double>());
                inputs.refined_dsc.push_back(c.at("refined_dsc").get<double>());
            }
        } catch (const json::exception& e) {
            throw DataError(layout.refine_summary().string() + ": " + e.what());
        }
    }
    if (fs::exists(layout.ablation_json())) {
        const json a = read_json(layout.ablation_json());
        try {
            for (const auto& row : a.at("rows")) {
                const std::string arm = row.at("arm").get<std::string>();
                inputs.methods.push_back({"ablation: " + arm, summary_from_json(row.at("dsc")).mean,
                                          summary_from_json(row.at("hd95")).mean,
                                          summary_from_json(row.at("vs")).mean});
            }
        } catch (const json::exception& e) {
            throw DataError(layout.ablation_json().string() + ": " + e.what());
        }
    }
    for (const char* stage : {"finetune", "diff", "seg"}) {
        if (fs::exists(layout.checkpoint(stage))) {
            inputs.history = load_checkpoint(layout.checkpoint(stage)).history;
            break;
        }
    }
    return inputs;
}

}  // namespace nndm
