#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "mtspine/checkpoint.hpp"
#include "mtspine/config.hpp"
#include "mtspine/dataset_io.hpp"
#include "mtspine/evalkit.hpp"
#include "mtspine/gradcheck.hpp"
#include "mtspine/training.hpp"

namespace mtspine {

// Command implementations shared by the CLI binary and the acceptance suite.

inline int cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    PhantomSet set = generate_phantoms(cfg.phantom_spec());
    save_dataset(out_dir, set.samples);
    long counts[4] = {0, 0, 0, 0};
    for (const auto& s : set.samples) ++counts[s.bq_label];
    std::printf("wrote %zu slices to %s\n", set.samples.size(), out_dir.string().c_str());
    std::printf("per-class counts: normal=%ld blastic=%ld mixed=%ld lytic=%ld\n", counts[0],
                counts[1], counts[2], counts[3]);
    return 0;
}

inline int cmd_train(const RunConfig& cfg, const std::filesystem::path& data_dir,
                     const std::filesystem::path& out_ckpt, const std::string& resume_ckpt = "") {
    const ModelConfig mcfg = cfg.model_config();
    const TrainConfig tcfg = cfg.train_config();
    auto samples = load_dataset(data_dir);

    TrainResult result;
    if (!resume_ckpt.empty()) {
        Checkpoint ck = Checkpoint::load(resume_ckpt);
        result = ck.to_result();
        std::printf("resuming from %s at epoch %d\n", resume_ckpt.c_str(), result.epochs_done);
    } else {
        result.net = Network::build(mcfg, tcfg.seed);
    }
    if (tcfg.epochs > 0 && result.epochs_done < tcfg.epochs) {
        PreparedData data = prepare(samples, tcfg.hu_threshold, mcfg.input_h, mcfg.input_w);
        train_continue(result, data, tcfg);
    }

    Checkpoint::from_result(result, tcfg).save(out_ckpt);
    const std::filesystem::path log_path = out_ckpt.string() + ".log.csv";
    std::ofstream log(log_path);
    log << result.log.to_csv();
    std::printf("trained %d epochs; checkpoint %s, log %s\n", result.epochs_done,
                out_ckpt.string().c_str(), log_path.string().c_str());
    if (!result.log.records.empty())
        std::printf("final mean selected loss %.6f (selected fraction %.3f)\n",
                    result.log.records.back().mean_selected_loss,
                    result.log.records.back().selected_fraction);
    return 0;
}

inline int cmd_eval(const std::filesystem::path& ckpt_path, const std::filesystem::path& data_dir,
                    int vote_threshold, const std::filesystem::path& report_dir) {
    Checkpoint ck = Checkpoint::load(ckpt_path);
    TrainResult r = ck.to_result();
    auto samples = load_dataset(data_dir);
    EvalResult res = evaluate(r.net, samples, ck.train_config.hu_threshold, vote_threshold);

    std::filesystem::create_directories(report_dir);
    auto write = [&](const std::string& name, const EvalReport& rep) {
        std::ofstream m(report_dir / (name + "_metrics.csv"));
        m << rep.metrics_csv();
        std::ofstream c(report_dir / (name + "_confusion.txt"));
        c << rep.matrix.to_text();
    };
    write("slice_bq", res.slice_bq);
    write("vertebra_bq", res.vertebra_bq);
    write("slice_pi", res.slice_pi);

    std::printf("slice bone-quality accuracy:    %.4f\n", res.slice_bq.matrix.accuracy());
    std::printf("vertebra bone-quality accuracy: %.4f (vote threshold %d)\n",
                res.vertebra_bq.matrix.accuracy(), vote_threshold);
    std::printf("slice PI accuracy:              %.4f\n", res.slice_pi.matrix.accuracy());
    std::printf("reports written to %s\n", report_dir.string().c_str());
    return 0;
}

inline int cmd_gradcheck(unsigned seed) {
    auto results = run_gradcheck_suite(seed);
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-24s max rel err %.3e  %s\n", r.op.c_str(), r.max_rel_err,
                    r.pass ? "ok" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

}  // namespace mtspine
