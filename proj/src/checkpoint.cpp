#include "nndm/checkpoint.hpp"

#include "nndm/errors.hpp"
#include "nndm/tensor_io.hpp"

#include "json.hpp"

#include <cmath>
#include <cstring>

namespace nndm {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'N', 'N', 'D', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
    }
}

template <typename T>
T get(std::string_view bytes, std::size_t offset) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
    }
    return static_cast<T>(v);
}

json nullable(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

double from_nullable(const json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

Tensor as_tensor(const std::vector<std::size_t>& shape, const std::vector<float>& values) {
    return Tensor(shape, values);
}

struct TensorWriter {
    json names = json::array();
    std::string payload;

    void add(const std::string& name, const Tensor& t) {
        names.push_back(name);
        payload += encode_tensor(t);
    }

    void add_network(const std::string& prefix, const nn::UNet& network, const nn::Adam* adam) {
        const auto& params = network.params();
        for (std::size_t p = 0; p < params.size(); ++p) {
            add(prefix + "/" + params[p].name, as_tensor(params[p].shape, params[p].value));
            if (adam) {
                add(prefix + ".m/" + params[p].name, as_tensor(params[p].shape, adam->first_moment[p]));
                add(prefix + ".v/" + params[p].name, as_tensor(params[p].shape, adam->second_moment[p]));
            }
        }
    }
};

using TensorTable = std::map<std::string, Tensor>;

const Tensor& lookup(const TensorTable& table, const std::string& name) {
    const auto it = table.find(name);
    if (it == table.end()) {
        throw DataError("checkpoint is missing tensor " + name);
    }
    return it->second;
}

std::vector<float> matching_values(const TensorTable& table, const std::string& name, const nn::Param& p) {
    const Tensor& t = lookup(table, name);
    if (t.shape() != p.shape) {
        throw DataError("checkpoint tensor " + name + " has shape " + t.shape_string() +
                        ", network expects " + Tensor(p.shape).shape_string());
    }
    return {t.values().begin(), t.values().end()};
}

void load_network(const TensorTable& table, const std::string& prefix, nn::UNet& network,
                  std::optional<nn::Adam>* adam, std::int64_t adam_steps) {
    auto& params = network.params();
    nn::Adam state(params);
    for (std::size_t p = 0; p < params.size(); ++p) {
        params[p].value = matching_values(table, prefix + "/" + params[p].name, params[p]);
        if (adam) {
            state.first_moment[p] = matching_values(table, prefix + ".m/" + params[p].name, params[p]);
            state.second_moment[p] = matching_values(table, prefix + ".v/" + params[p].name, params[p]);
        }
    }
    if (adam) {
        state.steps = adam_steps;
        *adam = std::move(state);
    }
}

}  // namespace

bool same_history(const std::vector<HistoryRow>& a, const std::vector<HistoryRow>& b) {
    auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].stage != b[i].stage || a[i].epoch != b[i].epoch || !eq(a[i].l_seg, b[i].l_seg) ||
            !eq(a[i].l_diff, b[i].l_diff) || !eq(a[i].l_total, b[i].l_total)) {
            return false;
        }
    }
    return true;
}

std::string encode_checkpoint(const Checkpoint& c) {
    if (c.segmentation_optimizer && !c.segmentation) {
        throw ConfigError("checkpoint has an optimizer state without its network");
    }
    if (c.predictor_optimizer && !c.predictor) {
        throw ConfigError("checkpoint has an optimizer state without its network");
    }
    TensorWriter writer;
    json header;
    header["stage"] = c.stage;
    header["config"] = json::parse(config_to_json(c.config));
    if (c.segmentation) {
        writer.add_network("theta", c.segmentation->network(),
                           c.segmentation_optimizer ? &*c.segmentation_optimizer : nullptr);
        header["theta"] = {{"adam_steps", c.segmentation_optimizer ? json(c.segmentation_optimizer->steps) : json(nullptr)}};
    }
    if (c.predictor) {
        writer.add_network("phi", c.predictor->network(),
                           c.predictor_optimizer ? &*c.predictor_optimizer : nullptr);
        header["phi"] = {{"adam_steps", c.predictor_optimizer ? json(c.predictor_optimizer->steps) : json(nullptr)},
                         {"condition_on_mask", c.predictor->config().condition_on_mask}};
    }
    json history = json::array();
    for (const auto& row : c.history) {
        history.push_back({{"stage", row.stage},
                           {"epoch", row.epoch},
                           {"l_seg", nullable(row.l_seg)},
                           {"l_diff", nullable(row.l_diff)},
                           {"l_total", nullable(row.l_total)}});
    }
    header["history"] = std::move(history);
    header["metrics"] = c.metrics;
    header["tensors"] = writer.names;

    const std::string header_text = header.dump();
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.version));
    put<std::uint64_t>(out, header_text.size());
    out += header_text;
    out += writer.payload;
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    constexpr std::size_t fixed = sizeof(kMagic) + 4 + 8;
    if (bytes.size() < fixed || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw DataError("not a checkpoint file (bad magic)");
    }
    Checkpoint c;
    c.version = static_cast<int>(get<std::uint32_t>(bytes, 8));
    if (c.version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(c.version));
    }
    const auto header_len = get<std::uint64_t>(bytes, 12);
    if (header_len > bytes.size() - fixed) {
        throw DataError("checkpoint header is truncated");
    }
    json header;
    try {
        header = json::parse(bytes.substr(fixed, header_len));
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    std::size_t offset = fixed + header_len;
    TensorTable table;
    try {
        c.stage = header.at("stage").get<std::string>();
        c.config = parse_config(header.at("config").dump());
        for (const auto& name : header.at("tensors")) {
            table.emplace(name.get<std::string>(), decode_tensor(bytes, offset));
        }
        if (offset != bytes.size()) {
            throw DataError("checkpoint has trailing bytes");
        }
        for (const auto& row : header.at("history")) {
            c.history.push_back({row.at("stage").get<std::string>(), row.at("epoch").get<int>(),
                                 from_nullable(row.at("l_seg")), from_nullable(row.at("l_diff")),
                                 from_nullable(row.at("l_total"))});
        }
        c.metrics = header.at("metrics").get<std::map<std::string, double>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed checkpoint header: ") + e.what());
    }

    if (header.contains("theta")) {
        SegmentationModel model = build_model(c.config.segmentation_config(), 0);
        const json& steps = header["theta"].at("adam_steps");
        load_network(table, "theta", model.network(), steps.is_null() ? nullptr : &c.segmentation_optimizer,
                     steps.is_null() ? 0 : steps.get<std::int64_t>());
        c.segmentation = std::move(model);
    }
    if (header.contains("phi")) {
        const json& phi = header["phi"];
        PredictorConfig pc = c.config.predictor_config();
        pc.condition_on_mask = phi.at("condition_on_mask").get<bool>();
        NetworkNoisePredictor predictor(pc, 0);
        const json& steps = phi.at("adam_steps");
        load_network(table, "phi", predictor.network(), steps.is_null() ? nullptr : &c.predictor_optimizer,
                     steps.is_null() ? 0 : steps.get<std::int64_t>());
        c.predictor = std::move(predictor);
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    write_file_bytes(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_checkpoint(read_file_bytes(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace nndm
