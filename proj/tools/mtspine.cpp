#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "mtspine/commands.hpp"

namespace {

unsigned default_seed() {
    if (const char* env = std::getenv("MTSPINE_SEED"))
        return static_cast<unsigned>(std::stoul(env));
    return 0;
}

mtspine::RunConfig load_config(const std::string& path, long seed_override) {
    mtspine::RunConfig cfg;
    if (!path.empty()) cfg = mtspine::RunConfig::from_file(path);
    if (seed_override >= 0) {
        cfg.set("train.seed", std::to_string(seed_override));
        cfg.set("data.seed", std::to_string(seed_override));
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-task self-paced bone-quality classification engine"};
    app.require_subcommand(1);

    long seed = -1;
    app.add_option("--seed", seed, "override train.seed and data.seed (env MTSPINE_SEED)");
    if (const char* env = std::getenv("MTSPINE_SEED")) seed = static_cast<long>(default_seed());

    std::string config_path, data_dir, out_path, resume_path, ckpt_path, report_dir = "reports";
    int vote_threshold = -1;

    auto* synth = app.add_subcommand("synth", "generate a synthetic phantom dataset");
    synth->add_option("--config", config_path, "run config file");
    synth->add_option("--out", out_path, "output dataset directory")->required();

    auto* train = app.add_subcommand("train", "train a model on a dataset");
    train->add_option("--config", config_path, "run config file");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_path, "output checkpoint path")->required();
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--vote-threshold", vote_threshold, "vertebra voting threshold");
    eval->add_option("--report-dir", report_dir, "directory for report files");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every operator");

    // let global options like --seed appear after the subcommand too
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return mtspine::cmd_synth(load_config(config_path, seed), out_path);
        if (train->parsed())
            return mtspine::cmd_train(load_config(config_path, seed), data_dir, out_path, resume_path);
        if (eval->parsed()) {
            mtspine::RunConfig cfg;  // vote threshold default lives here
            if (vote_threshold < 0) vote_threshold = cfg.vote_threshold();
            return mtspine::cmd_eval(ckpt_path, data_dir, vote_threshold, report_dir);
        }
        if (gradcheck->parsed()) return mtspine::cmd_gradcheck(seed < 0 ? 0u : static_cast<unsigned>(seed));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
