#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>

#include "vdsk/autoencoder.hpp"
#include "vdsk/control.hpp"
#include "vdsk/diffusion.hpp"
#include "vdsk/eval.hpp"
#include "vdsk/io.hpp"
#include "vdsk/text.hpp"
#include "vdsk/uvit.hpp"

namespace vdsk {

using TrainLogger = std::function<void(int step, double loss)>;

// --------------------------------------------------------- seed streams -----

// Every random decision derives from (root seed, stream, step) so runs are
// reproducible and resume continues the exact uninterrupted sequence.
enum class SeedStream : uint64_t {
    ae_batch = 1,
    diffusion_batch = 2,
    adapter_batch = 3,
    subject_batch = 4,
    sampling = 5,
    holdout = 6,
    subject_images = 7,
    eval = 8,
};

inline uint64_t derive_seed(uint64_t root, SeedStream stream, uint64_t step) {
    return mix_seed(mix_seed(root, static_cast<uint64_t>(stream)), step);
}

// ------------------------------------------------------------ AE training ---

struct AETrainConfig {
    int steps = 1200;
    int batch = 16;
    double lr = 1e-3;
    uint64_t seed = 1;
};

// one optimization step on a deterministic batch; returns the batch loss
double autoencoder_train_step(ConvAE& ae, Adam& opt, const std::vector<CorpusItem>& corpus,
                              const AETrainConfig& cfg, int step);

// trains in place from start_step; returns the per-step loss curve
std::vector<double> train_autoencoder(ConvAE& ae, Adam& opt,
                                      const std::vector<CorpusItem>& corpus,
                                      const AETrainConfig& cfg, int start_step = 0,
                                      const TrainLogger& logger = nullptr);

// ---------------------------------------------------------- latent corpus ---

struct LatentItem {
    Tensor latent;          // unscaled encoder output
    PromptTokens prompt;
    int tl = 0;
    ClipSpec spec;
    Tensor ctrl_grid;       // [tl, 1, h, w] pooled edge grid (adapter stage)
};

struct LatentDataset {
    std::vector<LatentItem> items;
    std::map<int, std::vector<int>> by_tl;
    float scale = 1.0f;     // latents are multiplied by this for diffusion
};

LatentDataset encode_corpus(const ConvAE& ae, const std::vector<CorpusItem>& corpus,
                            const Vocab& vocab, std::optional<float> edge_threshold = {});

// ----------------------------------------------------- diffusion training ---

struct DiffTrainConfig {
    int steps = 4000;
    int batch = 16;
    double lr = 3e-4;
    int warmup_steps = 100;
    double p_drop = 0.1;
    uint64_t seed = 1;
};

// builds the batch for one step: stacked scaled latents plus prompts with the
// null condition applied at p_drop
struct DiffBatch {
    Tensor x0;
    std::vector<PromptTokens> prompts;
};

DiffBatch make_diffusion_batch(const LatentDataset& data, int batch, double p_drop, Rng& rng);

double diffusion_train_step(UViT& model, Embedding& emb, Adam& opt, const LatentDataset& data,
                            const NoiseSchedule& sched, const DiffTrainConfig& cfg, int step);

std::vector<double> train_diffusion(UViT& model, Embedding& emb, Adam& opt,
                                    const LatentDataset& data, const NoiseSchedule& sched,
                                    const DiffTrainConfig& cfg, int start_step = 0,
                                    const TrainLogger& logger = nullptr);

// ------------------------------------------------------- adapter training ---

// Base parameters stay frozen; their gradient buffers are scratch space here.
double adapter_train_step(UViT& base, Embedding& emb, Adapter& adapter, Adam& opt,
                          const LatentDataset& data, const NoiseSchedule& sched,
                          const DiffTrainConfig& cfg, int step);

std::vector<double> train_adapter(UViT& base, Embedding& emb, Adapter& adapter,
                                  Adam& opt, const LatentDataset& data,
                                  const NoiseSchedule& sched, const DiffTrainConfig& cfg,
                                  int start_step = 0, const TrainLogger& logger = nullptr);

// -------------------------------------------------------- subject driving ---

struct SubjectFinetuneConfig {
    int steps = 300;
    int batch = 8;
    double lr = 1e-4;
    double p_drop = 0.1;
    uint64_t seed = 1;
};

struct SubjectFinetuneResult {
    UViT uvit;
    Embedding emb;
    std::vector<double> loss_curve;
};

// DreamBooth-style finetune on single-frame subject images, mixed 1:1 with
// single-frame prior clips from the base corpus. Every consumed clip is
// asserted to have T = 1 and reported to stream_observer.
SubjectFinetuneResult finetune_subject(const UViT& base, const Embedding& base_emb,
                                       const ConvAE& ae, float latent_scale,
                                       const SubjectSet& subjects, const Vocab& vocab,
                                       const std::vector<CorpusItem>& prior_corpus,
                                       const NoiseSchedule& sched,
                                       const SubjectFinetuneConfig& cfg,
                                       const std::function<void(int64_t)>& stream_observer = nullptr,
                                       const TrainLogger& logger = nullptr);

// ---------------------------------------------------------------- sampling --

struct ModelBundle {
    ConvAE ae;
    UViT uvit;
    Embedding emb;
    NoiseSchedule sched;
    Vocab vocab;
    float latent_scale = 1.0f;
};

// classifier-free guided eps prediction closure over (cond, uncond) forwards
EpsFn make_guided_eps_fn(const UViT& model, const Embedding& emb, const PromptTokens& cond,
                         double guidance, const Adapter* adapter = nullptr,
                         const Tensor* pooled_ctrl = nullptr);

Tensor sample_latent(const ModelBundle& models, const PromptTokens& cond, int64_t tl,
                     const SamplerConfig& cfg, const Adapter* adapter = nullptr,
                     const Tensor* pooled_ctrl = nullptr);

VideoClip sample_clip(const ModelBundle& models, const PromptTokens& cond, int length_frames,
                      const SamplerConfig& cfg, const Adapter* adapter = nullptr,
                      const Tensor* pooled_ctrl = nullptr);

// inpainting-style video prediction conditioned on the first given_frames
// pixel frames of input (given_frames must cover whole latent groups)
VideoClip predict_clip(const ModelBundle& models, const VideoClip& input, int given_frames,
                       const PromptTokens& cond, const SamplerConfig& cfg,
                       const PredictObserver& observer = nullptr);

// --------------------------------------------------------------- eval -------

MetricBundle run_conditional_eval(const ModelBundle& models, const std::vector<PromptCase>& grid,
                                  int n_per_prompt, const SamplerConfig& cfg);

// ----------------------------------------------------------- checkpoints ----

void save_params_checkpoint(const std::filesystem::path& path, const std::string& tag,
                            const std::map<std::string, std::string>& metadata,
                            const ParamSet<float>& params);

// loads by name into an existing parameter set; throws on missing or
// mismatched tensors
void load_params_checkpoint(const std::filesystem::path& path, const std::string& expected_tag,
                            const ParamSet<float>& params,
                            std::map<std::string, std::string>* metadata_out = nullptr);

void save_train_state(const std::filesystem::path& path, const std::string& tag, int step,
                      const Adam& opt, const ParamSet<float>& params);
int load_train_state(const std::filesystem::path& path, const std::string& tag, Adam& opt,
                     const ParamSet<float>& params);

// ------------------------------------------------------------- CLI stages ---

// Shared by the CLI and the acceptance suite; each validates its config
// schema fully before doing any work. Exit-code mapping happens in the CLI.
void stage_datagen(const Config& cfg, const std::filesystem::path& out_dir);
void stage_train(const Config& cfg, const std::string& stage,
                 const std::filesystem::path& out_dir, const TrainLogger& logger = nullptr);
std::string stage_sample(const Config& cfg, const std::filesystem::path& out_dir,
                         const std::string& prompt, int length_frames,
                         std::optional<uint64_t> seed_override = {});
void stage_predict(const Config& cfg, const std::filesystem::path& out_dir,
                   const std::filesystem::path& input_clip, int given_frames,
                   const std::string& prompt, std::optional<uint64_t> seed_override = {},
                   bool replicate_image = false);
std::string stage_control(const Config& cfg, const std::filesystem::path& out_dir,
                          const std::filesystem::path& control_source_clip,
                          const std::string& prompt, int length_frames,
                          std::optional<uint64_t> seed_override = {});
void stage_finetune_subject(const Config& cfg, const std::filesystem::path& out_dir,
                            const TrainLogger& logger = nullptr);
MetricBundle stage_eval(const Config& cfg, const std::filesystem::path& out_dir,
                        std::optional<uint64_t> seed_override = {});

// model loading helpers shared by stages
ModelBundle load_bundle(const std::filesystem::path& ae_ckpt,
                        const std::filesystem::path& uvit_ckpt,
                        const std::filesystem::path& embed_ckpt);

}  // namespace vdsk
