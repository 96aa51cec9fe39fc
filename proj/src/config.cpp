#include "nndm/config.hpp"

#include "nndm/errors.hpp"
#include "nndm/nn.hpp"
#include "nndm/tensor_io.hpp"

#include "json.hpp"

#include <set>

namespace nndm {

using nlohmann::json;

namespace {

void reject_unknown(const json& object, const std::set<std::string>& known, const std::string& where) {
    if (!object.is_object()) {
        throw ConfigError(where + " must be a JSON object");
    }
    for (const auto& [key, value] : object.items()) {
        if (!known.contains(key)) {
            throw ConfigError("unknown key '" + key + "' in " + where);
        }
    }
}

template <typename T>
void read(const json& object, const char* key, T& out, const std::string& where) {
    const auto it = object.find(key);
    if (it == object.end()) {
        return;
    }
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

template <typename Enum, typename Parse>
void read_enum(const json& object, const char* key, Enum& out, const std::string& where, Parse parse) {
    std::string name;
    read(object, key, name, where);
    if (!name.empty() || object.contains(key)) {
        out = parse(name);
    }
}

}  // namespace

InitialMaskSource parse_initial_mask_source(std::string_view name) {
    if (name == "model") return InitialMaskSource::model;
    if (name == "stress") return InitialMaskSource::stress;
    throw ConfigError("unknown initial_mask source '" + std::string(name) + "' (model|stress)");
}

std::string_view to_string(InitialMaskSource source) {
    return source == InitialMaskSource::model ? "model" : "stress";
}

SegmentationConfig ExperimentConfig::segmentation_config() const {
    SegmentationConfig c;
    c.depth = segmentation.depth;
    c.base_width = segmentation.base_width;
    c.input_hw = data.hw;
    return c;
}

PredictorConfig ExperimentConfig::predictor_config() const {
    PredictorConfig c;
    c.depth = diffusion.depth;
    c.base_width = diffusion.base_width;
    c.input_hw = data.hw;
    c.time_embed_dim = diffusion.time_embed_dim;
    c.condition_on_mask = diffusion.condition_on_mask;
    return c;
}

NoiseSchedule ExperimentConfig::schedule() const {
    return linear_schedule(diffusion.T, diffusion.beta_start, diffusion.beta_end);
}

RefineOptions ExperimentConfig::refine_options() const {
    return {diffusion.reverse_mean, diffusion.stride_coefficients};
}

void validate(const ExperimentConfig& c) {
    if (c.version != kConfigVersion) {
        throw ConfigError("unsupported config version " + std::to_string(c.version));
    }
    if (c.data.n < 1) throw ConfigError("data.n must be >= 1");
    if (c.data.hw < 16) throw ConfigError("data.hw must be >= 16");
    if (!(c.data.noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma must be >= 0");
    const auto& f = c.data.fractions;
    if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
        throw ConfigError("data.fractions must be nonnegative and sum to 1");
    }
    if (c.segmentation.epochs < 0 || c.diffusion.epochs < 0 || c.finetune_epochs < 0) {
        throw ConfigError("epoch counts must be >= 0");
    }
    if (!(c.segmentation.lr >= 0.0) || !(c.diffusion.lr >= 0.0)) {
        throw ConfigError("learning rates must be >= 0");
    }
    if (c.segmentation.batch_size < 1 || c.diffusion.batch_size < 1) {
        throw ConfigError("batch sizes must be >= 1");
    }
    if (!(c.lambda_weight >= 0.0)) {
        throw ConfigError("lambda_weight must be >= 0");
    }
    c.schedule();  // validates T and the beta bounds
    if (c.diffusion.inference_steps < 1 || c.diffusion.inference_steps > c.diffusion.T) {
        throw ConfigError("diffusion.inference_steps must lie in [1, T]");
    }
    nn::UNetConfig seg;
    seg.depth = c.segmentation.depth;
    seg.base_width = c.segmentation.base_width;
    seg.input_hw = c.data.hw;
    nn::validate(seg);
    nn::UNetConfig pred;
    pred.depth = c.diffusion.depth;
    pred.base_width = c.diffusion.base_width;
    pred.input_hw = c.data.hw;
    pred.time_embed_dim = c.diffusion.time_embed_dim;
    nn::validate(pred);
    static const std::set<std::string> arms{"full", "no-diffusion", "no-residual-conditioning", "steps",
                                            "train-T"};
    for (const auto& arm : c.ablation.arms) {
        if (!arms.contains(arm)) {
            throw ConfigError("unknown ablation arm '" + arm + "'");
        }
    }
    for (int s : c.ablation.steps) {
        if (s < 1 || s > c.diffusion.T) {
            throw ConfigError("ablation step count " + std::to_string(s) + " outside [1, T]");
        }
    }
    for (int t : c.ablation.train_T) {
        if (t < 1 || t < c.diffusion.inference_steps) {
            throw ConfigError("ablation train_T " + std::to_string(t) + " is below inference_steps");
        }
    }
}

ExperimentConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(root,
                   {"version", "seed", "dataset_dir", "output_dir", "data", "segmentation", "diffusion",
                    "lambda_weight", "finetune", "ablation"},
                   "config");
    if (!root.contains("version")) {
        throw ConfigError("config has no version field");
    }
    ExperimentConfig c;
    read(root, "version", c.version, "config");
    read(root, "seed", c.seed, "config");
    read(root, "dataset_dir", c.dataset_dir, "config");
    read(root, "output_dir", c.output_dir, "config");
    read(root, "lambda_weight", c.lambda_weight, "config");
    if (root.contains("data")) {
        const json& d = root["data"];
        reject_unknown(d, {"n", "hw", "noise_sigma", "fractions"}, "data");
        read(d, "n", c.data.n, "data");
        read(d, "hw", c.data.hw, "data");
        read(d, "noise_sigma", c.data.noise_sigma, "data");
        if (d.contains("fractions")) {
            const json& f = d["fractions"];
            reject_unknown(f, {"train", "val", "test"}, "data.fractions");
            read(f, "train", c.data.fractions.train, "data.fractions");
            read(f, "val", c.data.fractions.val, "data.fractions");
            read(f, "test", c.data.fractions.test, "data.fractions");
        }
    }
    if (root.contains("segmentation")) {
        const json& s = root["segmentation"];
        reject_unknown(s, {"depth", "base_width", "epochs", "lr", "batch_size"}, "segmentation");
        read(s, "depth", c.segmentation.depth, "segmentation");
        read(s, "base_width", c.segmentation.base_width, "segmentation");
        read(s, "epochs", c.segmentation.epochs, "segmentation");
        read(s, "lr", c.segmentation.lr, "segmentation");
        read(s, "batch_size", c.segmentation.batch_size, "segmentation");
    }
    if (root.contains("diffusion")) {
        const json& s = root["diffusion"];
        reject_unknown(s,
                       {"T", "beta_start", "beta_end", "depth", "base_width", "time_embed_dim",
                        "condition_on_mask", "epochs", "lr", "batch_size", "inference_steps",
                        "reverse_mean", "stride_coefficients", "initial_mask"},
                       "diffusion");
        auto& d = c.diffusion;
        read(s, "T", d.T, "diffusion");
        read(s, "beta_start", d.beta_start, "diffusion");
        read(s, "beta_end", d.beta_end, "diffusion");
        read(s, "depth", d.depth, "diffusion");
        read(s, "base_width", d.base_width, "diffusion");
        read(s, "time_embed_dim", d.time_embed_dim, "diffusion");
        read(s, "condition_on_mask", d.condition_on_mask, "diffusion");
        read(s, "epochs", d.epochs, "diffusion");
        read(s, "lr", d.lr, "diffusion");
        read(s, "batch_size", d.batch_size, "diffusion");
        read(s, "inference_steps", d.inference_steps, "diffusion");
        read_enum(s, "reverse_mean", d.reverse_mean, "diffusion", parse_reverse_mean);
        read_enum(s, "stride_coefficients", d.stride_coefficients, "diffusion", parse_stride_coefficients);
        read_enum(s, "initial_mask", d.initial_mask, "diffusion", parse_initial_mask_source);
    }
    if (root.contains("finetune")) {
        const json& s = root["finetune"];
        reject_unknown(s, {"epochs"}, "finetune");
        read(s, "epochs", c.finetune_epochs, "finetune");
    }
    if (root.contains("ablation")) {
        const json& s = root["ablation"];
        reject_unknown(s, {"arms", "steps", "train_T"}, "ablation");
        read(s, "arms", c.ablation.arms, "ablation");
        read(s, "steps", c.ablation.steps, "ablation");
        read(s, "train_T", c.ablation.train_T, "ablation");
    }
    validate(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file_bytes(path);
    } catch (const DataError&) {
        throw ConfigError("cannot read config file " + path.string());
    }
    return parse_config(text);
}

std::string config_to_json(const ExperimentConfig& c) {
    const auto& d = c.diffusion;
    json root = {
        {"version", c.version},
        {"seed", c.seed},
        {"dataset_dir", c.dataset_dir},
        {"output_dir", c.output_dir},
        {"data",
         {{"n", c.data.n},
          {"hw", c.data.hw},
          {"noise_sigma", c.data.noise_sigma},
          {"fractions",
           {{"train", c.data.fractions.train}, {"val", c.data.fractions.val}, {"test", c.data.fractions.test}}}}},
        {"segmentation",
         {{"depth", c.segmentation.depth},
          {"base_width", c.segmentation.base_width},
          {"epochs", c.segmentation.epochs},
          {"lr", c.segmentation.lr},
          {"batch_size", c.segmentation.batch_size}}},
        {"diffusion",
         {{"T", d.T},
          {"beta_start", d.beta_start},
          {"beta_end", d.beta_end},
          {"depth", d.depth},
          {"base_width", d.base_width},
          {"time_embed_dim", d.time_embed_dim},
          {"condition_on_mask", d.condition_on_mask},
          {"epochs", d.epochs},
          {"lr", d.lr},
          {"batch_size", d.batch_size},
          {"inference_steps", d.inference_steps},
          {"reverse_mean", std::string(to_string(d.reverse_mean))},
          {"stride_coefficients", std::string(to_string(d.stride_coefficients))},
          {"initial_mask", std::string(to_string(d.initial_mask))}}},
        {"lambda_weight", c.lambda_weight},
        {"finetune", {{"epochs", c.finetune_epochs}}},
        {"ablation", {{"arms", c.ablation.arms}, {"steps", c.ablation.steps}, {"train_T", c.ablation.train_T}}},
    };
    return root.dump(2) + "\n";
}

}  // namespace nndm
