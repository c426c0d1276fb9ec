// vdsk - desk-scale latent video diffusion toolkit
//
// Subcommands: datagen | train | sample | predict | control |
//              finetune-subject | eval
// Exit codes: 0 ok, 2 config error, 3 dependency error, 4 runtime/training
// failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vdsk/common.hpp"
#include "vdsk/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDependency = 3;
constexpr int kExitRuntime = 4;

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "config file (key = value lines)");
    if (config_required) opt->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", [&args](const std::vector<std::string>& vals) {
        args.seed = std::stoull(vals.at(0));
        return true;
    }, "root seed override");
}

vdsk::Config load_config(const CommonArgs& args) {
    vdsk::Config cfg = vdsk::parse_config(args.config_path);
    if (args.seed) cfg.kv["seed"] = std::to_string(*args.seed);
    return cfg;
}

vdsk::TrainLogger progress_logger(int every) {
    return [every](int step, double loss) {
        if (step % every == 0)
            std::printf("step %d  loss %.6f\n", step, loss);
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale latent video diffusion toolkit"};
    app.require_subcommand(1);

    CommonArgs datagen_args;
    auto* cmd_datagen = app.add_subcommand("datagen", "generate the labeled sprite corpus");
    add_common(cmd_datagen, datagen_args);

    CommonArgs train_args;
    std::string train_stage;
    auto* cmd_train = app.add_subcommand("train", "run one training stage");
    add_common(cmd_train, train_args);
    cmd_train->add_option("--stage", train_stage, "ae | diffusion | adapter | subject")
        ->required();

    CommonArgs sample_args;
    std::string sample_prompt;
    int sample_length = 16;
    auto* cmd_sample = app.add_subcommand("sample", "text-to-video generation");
    add_common(cmd_sample, sample_args);
    cmd_sample->add_option("--prompt", sample_prompt, "user prompt")->required();
    cmd_sample->add_option("--length", sample_length, "frames: 1, 4, 8 or 16");

    CommonArgs predict_args;
    std::string predict_prompt;
    std::string predict_input;
    int predict_given = 4;
    bool predict_replicate = false;
    auto* cmd_predict = app.add_subcommand("predict", "continue a clip from given frames");
    add_common(cmd_predict, predict_args);
    cmd_predict->add_option("--input", predict_input, "input .vclip")->required();
    cmd_predict->add_option("--prompt", predict_prompt, "user prompt")->required();
    cmd_predict->add_option("--given", predict_given, "number of conditioning frames");
    cmd_predict->add_flag("--replicate-image", predict_replicate,
                          "replicate a single input image across the first latent group");

    CommonArgs control_args;
    std::string control_prompt;
    std::string control_source;
    int control_length = 16;
    auto* cmd_control = app.add_subcommand("control", "edge-conditioned generation");
    add_common(cmd_control, control_args);
    cmd_control->add_option("--control-clip", control_source,
                            "clip whose edge map drives generation")->required();
    cmd_control->add_option("--prompt", control_prompt, "user prompt")->required();
    cmd_control->add_option("--length", control_length, "frames: 1, 4, 8 or 16");

    CommonArgs subject_args;
    auto* cmd_subject =
        app.add_subcommand("finetune-subject", "subject-driven finetuning on images");
    add_common(cmd_subject, subject_args);

    CommonArgs eval_args;
    auto* cmd_eval = app.add_subcommand("eval", "conditional accuracy over the prompt grid");
    add_common(cmd_eval, eval_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_datagen->parsed()) {
            vdsk::stage_datagen(load_config(datagen_args), datagen_args.out_dir);
            std::printf("corpus written to %s\n", datagen_args.out_dir.c_str());
        } else if (cmd_train->parsed()) {
            vdsk::stage_train(load_config(train_args), train_stage, train_args.out_dir,
                              progress_logger(50));
            std::printf("stage %s complete\n", train_stage.c_str());
        } else if (cmd_sample->parsed()) {
            std::string caption = vdsk::stage_sample(load_config(sample_args), sample_args.out_dir,
                                                     sample_prompt, sample_length,
                                                     sample_args.seed);
            std::printf("%s\n", caption.c_str());
        } else if (cmd_predict->parsed()) {
            vdsk::stage_predict(load_config(predict_args), predict_args.out_dir, predict_input,
                                predict_given, predict_prompt, predict_args.seed,
                                predict_replicate);
            std::printf("prediction written to %s\n", predict_args.out_dir.c_str());
        } else if (cmd_control->parsed()) {
            std::string caption = vdsk::stage_control(load_config(control_args),
                                                      control_args.out_dir, control_source,
                                                      control_prompt, control_length,
                                                      control_args.seed);
            std::printf("%s\n", caption.c_str());
        } else if (cmd_subject->parsed()) {
            vdsk::stage_finetune_subject(load_config(subject_args), subject_args.out_dir,
                                         progress_logger(20));
            std::printf("subject finetuning complete\n");
        } else if (cmd_eval->parsed()) {
            vdsk::MetricBundle m =
                vdsk::stage_eval(load_config(eval_args), eval_args.out_dir, eval_args.seed);
            for (const auto& [k, v] : vdsk::metric_report_rows(m))
                std::printf("%s\t%.6f\n", k.c_str(), v);
        }
    } catch (const vdsk::DependencyError& e) {
        std::fprintf(stderr, "dependency error: %s\n", e.what());
        return kExitDependency;
    } catch (const vdsk::TrainingFailure& e) {
        std::fprintf(stderr, "training failure: %s\n", e.what());
        return kExitRuntime;
    } catch (const vdsk::UnresolvablePrompt& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
