#pragma once

#include "nndm/checkpoint.hpp"
#include "nndm/config.hpp"
#include "nndm/data.hpp"
#include "nndm/metrics.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nndm {

/// Files of one experiment directory.
struct RunLayout {
    std::filesystem::path root;

    std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    std::filesystem::path checkpoint(const std::string& stage) const {
        return checkpoints() / (stage + ".ckpt");
    }
    std::filesystem::path plots() const { return root / "plots"; }
    std::filesystem::path history_csv() const { return root / "history.csv"; }
    std::filesystem::path metrics_csv() const { return root / "metrics.csv"; }
    std::filesystem::path refine_summary() const { return root / "refine_summary.json"; }
    std::filesystem::path ablation_csv() const { return root / "ablation.csv"; }
    std::filesystem::path ablation_json() const { return root / "ablation.json"; }
    std::filesystem::path report_md() const { return root / "report.md"; }
    std::filesystem::path report_csv() const { return root / "report.csv"; }
};

/// Generates the phantom suite described by config.data and writes it to config.dataset_dir.
Dataset generate_dataset(const ExperimentConfig& config);

/// Reads config.dataset_dir and checks it against config.data.hw.
Dataset load_dataset(const ExperimentConfig& config);

std::vector<LabeledCase> labeled_cases(const Dataset& dataset, Split split);

/// y_hat_0 for case `index` of the dataset, from the model or the stress protocol.
PredictedMask initial_mask(const ExperimentConfig& config, const SegmentationModel* model,
                           const Dataset& dataset, std::size_t index);

/// Stage 1: trains theta for segmentation.epochs; writes checkpoints/seg.ckpt and history.csv.
Checkpoint run_train_seg(const ExperimentConfig& config);

/// Stage 2: theta frozen, trains phi on residuals of the train split; writes checkpoints/diff.ckpt.
Checkpoint run_train_diff(const ExperimentConfig& config, const Checkpoint& seg);

/// Stage 3: per batch one Adam step on theta for L_seg and one on phi for lambda * L_diff, with
/// residuals from the current theta. Records L_total = L_seg + lambda L_diff per epoch.
/// Writes checkpoints/finetune.ckpt.
Checkpoint run_joint_finetune(const ExperimentConfig& config, const Checkpoint& seg, const Checkpoint& diff);

struct RefineEvalReport {
    Split split = Split::test;
    int steps = 0;
    MetricsReport baseline;
    MetricsReport refined;
    double baseline_seconds = 0.0;
    double refine_seconds = 0.0;
};

/// Baseline vs refined metrics on one split. `steps` defaults to diffusion.inference_steps.
/// Writes metrics.csv (paired baseline_* and refined_* columns) and refine_summary.json.
RefineEvalReport run_refine_eval(const ExperimentConfig& config, const Checkpoint& checkpoint, Split split,
                                 std::optional<int> steps = std::nullopt);

/// Same evaluation without touching the run directory.
RefineEvalReport evaluate_refinement(const ExperimentConfig& config, const Dataset& dataset,
                                     const SegmentationModel* model, const NoisePredictor* predictor,
                                     const NoiseSchedule& schedule, Split split, int steps);

std::string paired_metrics_csv(const RefineEvalReport& report);

struct AblationRow {
    std::string arm;
    int steps = 0;
    MetricSummary dsc;
    MetricSummary hd95;
    MetricSummary vs;
    double seconds = 0.0;  // inference wall time over the split
};

struct AblationReport {
    Split split = Split::test;
    std::vector<AblationRow> rows;
};

/// One row per arm: full, no-diffusion, no-residual-conditioning (predictor retrained on x only),
/// steps-N for each configured step count and train-T-N (predictor retrained with T = N).
/// Writes ablation.csv and ablation.json.
AblationReport run_ablation(const ExperimentConfig& config, const Checkpoint& checkpoint,
                            Split split = Split::test);

std::string ablation_csv(const AblationReport& report);

struct MethodRow {
    std::string method;
    double dsc = 0.0;   // fraction
    double hd95 = 0.0;  // mm
    double vs = 0.0;    // fraction
};

/// `| Method | DSC (%) | HD95 (mm) | VS (%) |` with DSC and VS to one decimal, HD95 to two.
std::string markdown_table(const std::vector<MethodRow>& rows);

struct ReportInputs {
    std::vector<MethodRow> methods;
    std::vector<HistoryRow> history;
    std::vector<double> baseline_dsc;  // per case, paired with refined_dsc
    std::vector<double> refined_dsc;
};

/// Writes report.md, report.csv, plots/loss_curve.png and plots/dice_scatter.png.
/// Nothing is written when there are no methods.
void emit_report(const ReportInputs& inputs, const std::filesystem::path& out_dir);

/// Assembles report inputs from what earlier stages left in the run directory.
ReportInputs collect_report_inputs(const RunLayout& layout);

std::string history_csv(const std::vector<HistoryRow>& history);

}  // namespace nndm
