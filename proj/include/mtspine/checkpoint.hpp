#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtspine/dataset_io.hpp"
#include "mtspine/net.hpp"
#include "mtspine/objectives.hpp"
#include "mtspine/training.hpp"

namespace mtspine {

// Checkpoint layout: magic "MTSC", u32 version=1, u32 config-blob length,
// config bytes (key=value text), u32 tensor count, then per tensor
// u32 name length + name bytes, u32 rank, u32 dims, f32 little-endian payload.
// Parameters, batch-norm running stats and optimizer velocity all travel as
// named tensors; prefixes route them on load.
struct Checkpoint {
    static constexpr const char* kMagic = "MTSC";
    static constexpr std::uint32_t kVersion = 1;

    ModelConfig model_config;
    TrainConfig train_config;
    int epochs_done = 0;
    double spl_pace_lambda = 0.0;
    bool spl_initialized = false;
    std::map<std::string, Tensor> tensors;

    static Checkpoint from_result(const TrainResult& r, const TrainConfig& tcfg) {
        Checkpoint ck;
        ck.model_config = r.net.config;
        ck.train_config = tcfg;
        ck.epochs_done = r.epochs_done;
        ck.spl_pace_lambda = r.spl.pace_lambda;
        ck.spl_initialized = r.spl.initialized;
        for (const auto& [name, t] : r.net.params) ck.tensors.emplace("param/" + name, t);
        for (const auto& [name, s] : r.net.bn_states) {
            ck.tensors.emplace("bnstate/" + name + ".mean",
                               Tensor({static_cast<int>(s.running_mean.size())}, s.running_mean));
            ck.tensors.emplace("bnstate/" + name + ".var",
                               Tensor({static_cast<int>(s.running_var.size())}, s.running_var));
        }
        for (const auto& [name, v] : r.velocity)
            ck.tensors.emplace("velocity/" + name, Tensor({static_cast<int>(v.size())}, v));
        return ck;
    }

    TrainResult to_result() const {
        TrainResult r;
        r.net = Network::build(model_config, train_config.seed);
        r.epochs_done = epochs_done;
        r.spl.pace_lambda = spl_pace_lambda;
        r.spl.initialized = spl_initialized;
        r.spl.mu = train_config.spl_mu;
        r.spl.start_percentile = train_config.spl_start_percentile;
        for (const auto& [name, t] : tensors) {
            if (name.rfind("param/", 0) == 0) {
                auto it = r.net.params.find(name.substr(6));
                if (it == r.net.params.end())
                    throw std::runtime_error("checkpoint parameter '" + name +
                                             "' does not exist in the configured model");
                if (it->second.shape != t.shape)
                    throw std::runtime_error("checkpoint parameter '" + name + "' shape mismatch");
                it->second.data = t.data;
            } else if (name.rfind("bnstate/", 0) == 0) {
                std::string rest = name.substr(8);
                const bool is_mean = rest.size() > 5 && rest.substr(rest.size() - 5) == ".mean";
                const std::string key = rest.substr(0, rest.rfind('.'));
                auto it = r.net.bn_states.find(key);
                if (it == r.net.bn_states.end())
                    throw std::runtime_error("checkpoint BN state '" + name + "' has no home");
                (is_mean ? it->second.running_mean : it->second.running_var) = t.data;
            } else if (name.rfind("velocity/", 0) == 0) {
                r.velocity[name.substr(9)] = t.data;
            } else {
                throw std::runtime_error("unknown checkpoint tensor prefix in '" + name + "'");
            }
        }
        return r;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
        os.write(kMagic, 4);
        io_detail::write_u32(os, kVersion);
        const std::string cfg = config_blob();
        io_detail::write_u32(os, static_cast<std::uint32_t>(cfg.size()));
        os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
        io_detail::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
        for (const auto& [name, t] : tensors) {
            io_detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            io_detail::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
            for (int d : t.shape) io_detail::write_u32(os, static_cast<std::uint32_t>(d));
            for (double v : t.data) io_detail::write_f32(os, static_cast<float>(v));
        }
    }

    static Checkpoint load(const std::filesystem::path& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
        char magic[4];
        is.read(magic, 4);
        if (!is || std::string(magic, 4) != kMagic)
            throw std::runtime_error("bad checkpoint magic in " + path.string());
        const std::uint32_t version = io_detail::read_u32(is);
        if (version != kVersion)
            throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                                     " in " + path.string());
        const std::uint32_t cfg_len = io_detail::read_u32(is);
        std::string cfg(cfg_len, '\0');
        is.read(cfg.data(), cfg_len);
        if (!is) throw std::runtime_error("truncated checkpoint config blob");
        Checkpoint ck;
        ck.parse_config_blob(cfg);
        const std::uint32_t count = io_detail::read_u32(is);
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t name_len = io_detail::read_u32(is);
            std::string name(name_len, '\0');
            is.read(name.data(), name_len);
            const std::uint32_t rank = io_detail::read_u32(is);
            std::vector<int> shape;
            for (std::uint32_t d = 0; d < rank; ++d)
                shape.push_back(static_cast<int>(io_detail::read_u32(is)));
            Tensor t(shape);
            for (double& v : t.data) v = io_detail::read_f32(is);
            ck.tensors.emplace(std::move(name), std::move(t));
        }
        return ck;
    }

  private:
    std::string config_blob() const {
        std::ostringstream os;
        os << "model.block_layers=" << model_config.block_layers[0];
        for (int i = 1; i < 4; ++i) os << ':' << model_config.block_layers[i];
        os << "\nmodel.growth_rate=" << model_config.growth_rate
           << "\nmodel.input_h=" << model_config.input_h
           << "\nmodel.input_w=" << model_config.input_w
           << "\nmodel.sharing=" << sharing_mode_name(model_config.sharing)
           << "\nmodel.mlp_hidden=" << model_config.mlp_hidden;
        char buf[64];
        auto put = [&](const char* key, double v) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            os << '\n' << key << '=' << buf;
        };
        put("train.base_lr", train_config.base_lr);
        put("train.momentum", train_config.momentum);
        os << "\ntrain.epochs=" << train_config.epochs
           << "\ntrain.batch_size=" << train_config.batch_size
           << "\ntrain.warmup_epochs=" << train_config.warmup_epochs
           << "\ntrain.seed=" << train_config.seed
           << "\nspl.enabled=" << (train_config.spl_enabled ? 1 : 0)
           << "\nspl.include_pi=" << (train_config.spl_include_pi ? 1 : 0);
        put("spl.mu", train_config.spl_mu);
        put("spl.start_percentile", train_config.spl_start_percentile);
        put("train.label_smoothing_epsilon", train_config.label_smoothing_epsilon);
        put("loss.lambda1", train_config.loss_weights.lambda1);
        put("loss.lambda2", train_config.loss_weights.lambda2);
        put("loss.lambda3", train_config.loss_weights.lambda3);
        for (int i = 0; i < 4; ++i)
            put(("loss.soft_share_lambda" + std::to_string(i + 1)).c_str(),
                train_config.soft_share.lambda[i]);
        put("data.hu_threshold", train_config.hu_threshold);
        os << "\nresume.epochs_done=" << epochs_done
           << "\nresume.spl_initialized=" << (spl_initialized ? 1 : 0);
        put("resume.spl_pace_lambda", spl_pace_lambda);
        os << '\n';
        return os.str();
    }

    void parse_config_blob(const std::string& blob) {
        std::stringstream ss(blob);
        std::string line;
        while (std::getline(ss, line)) {
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw std::runtime_error("bad checkpoint config line: " + line);
            const std::string key = line.substr(0, eq);
            const std::string val = line.substr(eq + 1);
            if (key == "model.block_layers") {
                std::stringstream bs(val);
                std::string tok;
                int i = 0;
                while (std::getline(bs, tok, ':') && i < 4) model_config.block_layers[i++] = std::stoi(tok);
            } else if (key == "model.growth_rate") model_config.growth_rate = std::stoi(val);
            else if (key == "model.input_h") model_config.input_h = std::stoi(val);
            else if (key == "model.input_w") model_config.input_w = std::stoi(val);
            else if (key == "model.sharing") model_config.sharing = sharing_mode_from_name(val);
            else if (key == "model.mlp_hidden") model_config.mlp_hidden = std::stoi(val);
            else if (key == "train.base_lr") train_config.base_lr = std::stod(val);
            else if (key == "train.momentum") train_config.momentum = std::stod(val);
            else if (key == "train.epochs") train_config.epochs = std::stoi(val);
            else if (key == "train.batch_size") train_config.batch_size = std::stoi(val);
            else if (key == "train.warmup_epochs") train_config.warmup_epochs = std::stoi(val);
            else if (key == "train.seed") train_config.seed = static_cast<unsigned>(std::stoul(val));
            else if (key == "train.label_smoothing_epsilon") train_config.label_smoothing_epsilon = std::stod(val);
            else if (key == "spl.enabled") train_config.spl_enabled = val == "1";
            else if (key == "spl.include_pi") train_config.spl_include_pi = val == "1";
            else if (key == "spl.mu") train_config.spl_mu = std::stod(val);
            else if (key == "spl.start_percentile") train_config.spl_start_percentile = std::stod(val);
            else if (key == "loss.lambda1") train_config.loss_weights.lambda1 = std::stod(val);
            else if (key == "loss.lambda2") train_config.loss_weights.lambda2 = std::stod(val);
            else if (key == "loss.lambda3") train_config.loss_weights.lambda3 = std::stod(val);
            else if (key == "loss.soft_share_lambda1") train_config.soft_share.lambda[0] = std::stod(val);
            else if (key == "loss.soft_share_lambda2") train_config.soft_share.lambda[1] = std::stod(val);
            else if (key == "loss.soft_share_lambda3") train_config.soft_share.lambda[2] = std::stod(val);
            else if (key == "loss.soft_share_lambda4") train_config.soft_share.lambda[3] = std::stod(val);
            else if (key == "data.hu_threshold") train_config.hu_threshold = std::stod(val);
            else if (key == "resume.epochs_done") epochs_done = std::stoi(val);
            else if (key == "resume.spl_initialized") spl_initialized = val == "1";
            else if (key == "resume.spl_pace_lambda") spl_pace_lambda = std::stod(val);
            else throw std::runtime_error("unknown checkpoint config key: " + key);
        }
    }
};

}  // namespace mtspine
