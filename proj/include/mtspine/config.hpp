#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mtspine/datagen.hpp"
#include "mtspine/net.hpp"
#include "mtspine/training.hpp"

namespace mtspine {

// Flat key=value experiment configuration. Every key has a default; unknown
// keys are rejected with the offending line number.
class RunConfig {
  public:
    RunConfig() { defaults_(); }

    static RunConfig from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot open config " + path);
        RunConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            cfg.apply_line(line, lineno);
        }
        return cfg;
    }

    void apply_line(std::string line, int lineno) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) return;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        auto it = values_.find(key);
        if (it == values_.end())
            throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key '" +
                                     key + "'");
        it->second = value;
    }

    void set(const std::string& key, const std::string& value) {
        auto it = values_.find(key);
        if (it == values_.end()) throw std::runtime_error("unknown config key '" + key + "'");
        it->second = value;
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw std::runtime_error("unknown config key '" + key + "'");
        return it->second;
    }
    double get_double(const std::string& key) const { return std::stod(get(key)); }
    int get_int(const std::string& key) const { return std::stoi(get(key)); }
    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw std::runtime_error("config key '" + key + "': expected boolean, got '" + v + "'");
    }

    ModelConfig model_config() const {
        ModelConfig m;
        std::stringstream ss(get("model.block_layers"));
        std::string tok;
        int i = 0;
        while (std::getline(ss, tok, ',')) {
            if (i >= 4) throw std::runtime_error("model.block_layers: exactly 4 entries required");
            m.block_layers[i++] = std::stoi(tok);
        }
        if (i != 4) throw std::runtime_error("model.block_layers: exactly 4 entries required");
        m.growth_rate = get_int("model.growth_rate");
        m.input_h = get_int("model.input_h");
        m.input_w = get_int("model.input_w");
        m.sharing = sharing_mode_from_name(get("model.sharing"));
        m.mlp_hidden = get_int("model.mlp_hidden");
        return m;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.base_lr = get_double("train.base_lr");
        t.momentum = get_double("train.momentum");
        t.epochs = get_int("train.epochs");
        t.batch_size = get_int("train.batch_size");
        t.warmup_epochs = get_int("train.warmup_epochs");
        t.label_smoothing_epsilon = get_double("train.label_smoothing_epsilon");
        t.seed = static_cast<unsigned>(get_int("train.seed"));
        t.spl_enabled = get_bool("spl.enabled");
        t.spl_mu = get_double("spl.mu");
        t.spl_start_percentile = get_double("spl.start_percentile");
        t.spl_include_pi = get_bool("spl.include_pi");
        t.loss_weights.lambda1 = get_double("loss.lambda1");
        t.loss_weights.lambda2 = get_double("loss.lambda2");
        t.loss_weights.lambda3 = get_double("loss.lambda3");
        for (int i = 0; i < 4; ++i)
            t.soft_share.lambda[i] = get_double("loss.soft_share_lambda" + std::to_string(i + 1));
        t.hu_threshold = get_double("data.hu_threshold");
        return t;
    }

    PhantomSpec phantom_spec() const {
        PhantomSpec s;
        s.seed = static_cast<unsigned>(get_int("data.seed"));
        s.height = get_int("data.image_h");
        s.width = get_int("data.image_w");
        const int per_cell = get_int("data.per_cell_count");
        for (auto& row : s.counts) row = {per_cell, per_cell, per_cell};
        s.slices_per_vertebra = get_int("data.slices_per_vertebra");
        s.noise_std = get_double("data.noise_std");
        s.label_noise_rate = get_double("data.label_noise_rate");
        return s;
    }

    int vote_threshold() const { return get_int("eval.vote_threshold"); }

    std::string to_text() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
        return out;
    }

    void apply_text(const std::string& text) {
        std::stringstream ss(text);
        std::string line;
        int lineno = 0;
        while (std::getline(ss, line)) apply_line(line, ++lineno);
    }

  private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    void defaults_() {
        values_ = {
            {"model.block_layers", "2,2,2,2"},
            {"model.growth_rate", "8"},
            {"model.input_h", "32"},
            {"model.input_w", "32"},
            {"model.sharing", "hard_all"},
            {"model.mlp_hidden", "10"},
            {"train.base_lr", "0.001"},
            {"train.momentum", "0.9"},
            {"train.epochs", "50"},
            {"train.batch_size", "32"},
            {"train.warmup_epochs", "5"},
            {"train.label_smoothing_epsilon", "0.1"},
            {"train.seed", "0"},
            {"spl.enabled", "false"},
            {"spl.mu", "1.3"},
            {"spl.start_percentile", "60"},
            {"spl.include_pi", "true"},
            {"loss.lambda1", "2"},
            {"loss.lambda2", "2"},
            {"loss.lambda3", "2"},
            {"loss.soft_share_lambda1", "1"},
            {"loss.soft_share_lambda2", "1"},
            {"loss.soft_share_lambda3", "1"},
            {"loss.soft_share_lambda4", "1"},
            {"data.seed", "0"},
            {"data.image_h", "64"},
            {"data.image_w", "64"},
            {"data.per_cell_count", "0"},
            {"data.slices_per_vertebra", "5"},
            {"data.noise_std", "20"},
            {"data.label_noise_rate", "0"},
            {"data.hu_threshold", "150"},
            {"eval.vote_threshold", "1"},
        };
    }

    std::map<std::string, std::string> values_;
};

}  // namespace mtspine
