#include <fstream>
#include <json.hpp>

#include "latentfuse/mvae/model.hpp"

namespace latentfuse::mvae {

namespace nk = latentfuse::numkit;
using json = nlohmann::json;

namespace {

json tensor_to_json(const Tensor& t) {
    return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", t.storage()}};
}

Tensor tensor_from_json(const json& j) {
    return Tensor(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                  j.at("data").get<std::vector<double>>());
}

}  // namespace

void save_model(const std::filesystem::path& path, const MvaeModel& model, const TrainConfig& config,
                const TrainState& state) {
    json doc;
    doc["format"] = "latentfuse-mvae";
    doc["version"] = kCheckpointVersion;
    const auto& s = model.shape();
    doc["shape"] = {{"n_modalities", s.n_modalities},
                    {"signal_dim", s.signal_dim},
                    {"latent_dim", s.latent_dim},
                    {"hidden", s.hidden}};
    doc["config"] = {{"epochs", config.epochs},
                     {"batch_size", config.batch_size},
                     {"learning_rate", config.learning_rate},
                     {"kl_scale", config.kl_scale},
                     {"seed", config.seed},
                     {"posterior_mode", to_string(config.posterior_mode)},
                     {"modality_dropout_prob", config.modality_dropout_prob},
                     {"grad_clip", config.grad_clip}};
    json params = json::object();
    for (const auto& [name, t] : model.named_parameters()) params[name] = tensor_to_json(*t);
    doc["parameters"] = std::move(params);
    doc["train_state"] = {{"epochs_done", state.epochs_done},
                          {"optimizer", nk::to_string(state.optim.kind)},
                          {"learning_rate", state.optim.learning_rate},
                          {"step", state.optim.step},
                          {"first_moment", state.optim.first_moment},
                          {"second_moment", state.optim.second_moment}};

    std::ofstream out(path);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out << doc.dump(1) << '\n';
    if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint is not valid JSON: " + std::string(e.what()));
    }
    try {
        if (!doc.is_object() || doc.value("format", "") != "latentfuse-mvae") {
            throw CheckpointError("not a latentfuse model checkpoint");
        }
        if (!doc.contains("version") || doc.at("version").get<int>() != kCheckpointVersion) {
            throw CheckpointError("unsupported checkpoint version");
        }
        Checkpoint cp;
        const auto& c = doc.at("config");
        cp.config.epochs = c.at("epochs").get<int>();
        cp.config.batch_size = c.at("batch_size").get<std::size_t>();
        cp.config.learning_rate = c.at("learning_rate").get<double>();
        cp.config.kl_scale = c.at("kl_scale").get<double>();
        cp.config.seed = c.at("seed").get<std::uint64_t>();
        cp.config.posterior_mode = posterior_mode_from_string(c.at("posterior_mode").get<std::string>());
        cp.config.modality_dropout_prob = c.at("modality_dropout_prob").get<double>();
        cp.config.grad_clip = c.at("grad_clip").get<double>();

        const auto& sj = doc.at("shape");
        ModelShape shape{sj.at("n_modalities").get<std::size_t>(), sj.at("signal_dim").get<std::size_t>(),
                         sj.at("latent_dim").get<std::size_t>(), sj.at("hidden").get<std::size_t>()};
        Rng unused(0);
        cp.model = MvaeModel::create(shape, cp.config.posterior_mode, unused);
        const auto& params = doc.at("parameters");
        for (auto& [name, t] : cp.model.named_parameters()) {
            if (!params.contains(name)) throw CheckpointError("checkpoint is missing parameter " + name);
            Tensor loaded = tensor_from_json(params.at(name));
            if (loaded.shape() != t->shape()) throw CheckpointError("shape mismatch for parameter " + name);
            *t = std::move(loaded);
        }

        const auto& ts = doc.at("train_state");
        cp.state.epochs_done = ts.at("epochs_done").get<int>();
        cp.state.optim.kind = nk::optimizer_kind_from_string(ts.at("optimizer").get<std::string>());
        cp.state.optim.learning_rate = ts.at("learning_rate").get<double>();
        cp.state.optim.step = ts.at("step").get<std::uint64_t>();
        cp.state.optim.first_moment = ts.at("first_moment").get<std::vector<std::vector<double>>>();
        cp.state.optim.second_moment = ts.at("second_moment").get<std::vector<std::vector<double>>>();
        return cp;
    } catch (const json::exception& e) {
        throw CheckpointError("malformed checkpoint: " + std::string(e.what()));
    } catch (const nk::ShapeError& e) {
        throw CheckpointError("malformed checkpoint: " + std::string(e.what()));
    }
}

}  // namespace latentfuse::mvae
