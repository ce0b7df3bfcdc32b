#include "pizzaquad/model.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>

namespace pizzaquad {

using nlohmann::json;
using Kind = WeightsFormatError::Kind;

namespace {

struct NamedTensor {
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
    bool is_vector;
};

std::vector<NamedTensor> tensor_layout(const ModelConfig& cfg) {
    std::vector<NamedTensor> out{{"W_E", cfg.d_model, cfg.d_vocab(), false},
                                 {"pos", cfg.d_model, ModelConfig::n_ctx, false}};
    for (int j = 0; j < cfg.n_heads; ++j) out.push_back({"W_V." + std::to_string(j), cfg.d_head, cfg.d_model, false});
    for (int j = 0; j < cfg.n_heads; ++j) out.push_back({"W_O." + std::to_string(j), cfg.d_model, cfg.d_head, false});
    out.push_back({"W_in", cfg.d_mlp, cfg.d_model, false});
    out.push_back({"b_in", cfg.d_mlp, 1, true});
    out.push_back({"W_out", cfg.d_model, cfg.d_mlp, false});
    out.push_back({"b_out", cfg.d_model, 1, true});
    out.push_back({"W_U", cfg.d_vocab(), cfg.d_model, false});
    return out;
}

// Same order as tensor_layout.
std::vector<Matrix*> matrix_refs(ModelWeights& w) {
    std::vector<Matrix*> out{&w.W_E, &w.pos};
    for (auto& m : w.W_V) out.push_back(&m);
    for (auto& m : w.W_O) out.push_back(&m);
    out.push_back(&w.W_in);
    out.push_back(nullptr);
    out.push_back(&w.W_out);
    out.push_back(nullptr);
    out.push_back(&w.W_U);
    return out;
}

json config_to_json(const ModelConfig& cfg) {
    return json{{"p", cfg.p},
                {"d_vocab", cfg.d_vocab()},
                {"n_ctx", ModelConfig::n_ctx},
                {"d_model", cfg.d_model},
                {"d_mlp", cfg.d_mlp},
                {"d_head", cfg.d_head},
                {"n_heads", cfg.n_heads},
                {"epochs", cfg.epochs},
                {"weight_decay", cfg.weight_decay},
                {"learning_rate", cfg.learning_rate},
                {"train_frac", cfg.train_frac},
                {"seed", cfg.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    try {
        cfg.p = j.at("p").get<int>();
        cfg.d_model = j.at("d_model").get<int>();
        cfg.d_mlp = j.at("d_mlp").get<int>();
        cfg.d_head = j.at("d_head").get<int>();
        cfg.n_heads = j.at("n_heads").get<int>();
        cfg.epochs = j.at("epochs").get<int>();
        cfg.weight_decay = j.at("weight_decay").get<double>();
        cfg.learning_rate = j.at("learning_rate").get<double>();
        cfg.train_frac = j.at("train_frac").get<double>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.at("d_vocab").get<int>() != cfg.d_vocab() || j.at("n_ctx").get<int>() != ModelConfig::n_ctx)
            throw WeightsFormatError(Kind::Schema, "header d_vocab/n_ctx inconsistent with p");
        cfg.validate();
    } catch (const json::exception& e) {
        throw WeightsFormatError(Kind::Schema, std::string("bad header: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw WeightsFormatError(Kind::Schema, e.what());
    }
    return cfg;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const ModelConfig& cfg, const ModelWeights& w) {
    w.check_shapes(cfg);
    if (!w.all_finite()) throw WeightsFormatError(Kind::NonFinite, "refusing to save non-finite weights");
    json doc;
    doc["format_version"] = kWeightsFormatVersion;
    doc["config"] = config_to_json(cfg);
    json tensors = json::array();
    const auto layout = tensor_layout(cfg);
    auto refs = matrix_refs(const_cast<ModelWeights&>(w));
    for (std::size_t t = 0; t < layout.size(); ++t) {
        const auto& nt = layout[t];
        std::vector<double> data;
        data.reserve(static_cast<std::size_t>(nt.rows * nt.cols));
        if (nt.is_vector) {
            const Vector& v = nt.name == "b_in" ? w.b_in : w.b_out;
            data.assign(v.data(), v.data() + v.size());
        } else {
            const Matrix& m = *refs[t];
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
        }
        json shape = nt.is_vector ? json::array({nt.rows}) : json::array({nt.rows, nt.cols});
        tensors.push_back(json{{"name", nt.name}, {"shape", shape}, {"data", std::move(data)}});
    }
    doc["tensors"] = std::move(tensors);

    std::ofstream out(path);
    if (!out) throw WeightsFormatError(Kind::Io, "cannot open " + path.string() + " for writing");
    out << doc.dump(1) << '\n';
    if (!out) throw WeightsFormatError(Kind::Io, "write failed: " + path.string());
}

std::pair<ModelConfig, ModelWeights> load_weights(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw WeightsFormatError(Kind::Io, "cannot open " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw WeightsFormatError(Kind::Schema, std::string("not a weights document: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("format_version") || !doc.contains("config") || !doc.contains("tensors"))
        throw WeightsFormatError(Kind::Schema, "missing format_version, config or tensors");
    if (doc["format_version"] != kWeightsFormatVersion)
        throw WeightsFormatError(Kind::Schema, "unsupported format_version");

    const ModelConfig cfg = config_from_json(doc["config"]);
    ModelWeights w = ModelWeights::zeros(cfg);
    const auto layout = tensor_layout(cfg);
    const json& tensors = doc["tensors"];
    if (!tensors.is_array() || tensors.size() != layout.size())
        throw WeightsFormatError(Kind::Schema, "expected " + std::to_string(layout.size()) + " tensors");

    auto refs = matrix_refs(w);
    for (std::size_t t = 0; t < layout.size(); ++t) {
        const auto& nt = layout[t];
        const json& entry = tensors[t];
        if (!entry.is_object() || entry.value("name", std::string{}) != nt.name)
            throw WeightsFormatError(Kind::Schema, "expected tensor '" + nt.name + "' at position " + std::to_string(t));
        std::vector<Eigen::Index> shape;
        std::vector<double> data;
        try {
            shape = entry.at("shape").get<std::vector<Eigen::Index>>();
            const json& arr = entry.at("data");
            if (!arr.is_array()) throw WeightsFormatError(Kind::Schema, "data of " + nt.name + " is not an array");
            data.reserve(arr.size());
            for (const auto& x : arr) {
                // JSON has no NaN/Inf literal; serializers write them as null.
                if (x.is_null()) throw WeightsFormatError(Kind::NonFinite, "non-finite value in " + nt.name);
                data.push_back(x.get<double>());
            }
        } catch (const json::exception& e) {
            throw WeightsFormatError(Kind::Schema, "tensor " + nt.name + ": " + e.what());
        }
        const std::vector<Eigen::Index> expected =
            nt.is_vector ? std::vector<Eigen::Index>{nt.rows} : std::vector<Eigen::Index>{nt.rows, nt.cols};
        if (shape != expected || static_cast<Eigen::Index>(data.size()) != nt.rows * nt.cols)
            throw WeightsFormatError(Kind::Shape, "shape mismatch for tensor " + nt.name);
        for (double x : data)
            if (!std::isfinite(x)) throw WeightsFormatError(Kind::NonFinite, "non-finite value in " + nt.name);
        if (nt.is_vector) {
            Vector& v = nt.name == "b_in" ? w.b_in : w.b_out;
            v = Eigen::Map<const Vector>(data.data(), nt.rows);
        } else {
            *refs[t] = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                data.data(), nt.rows, nt.cols);
        }
    }
    return {cfg, std::move(w)};
}

}  // namespace pizzaquad
