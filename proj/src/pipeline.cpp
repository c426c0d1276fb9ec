#include "vdsk/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "vdsk/common.hpp"

namespace vdsk {

namespace fs = std::filesystem;

namespace {

std::string format_real(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_real(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::set<int> parse_lengths(const std::string& csv) {
    std::set<int> lengths;
    std::istringstream in(csv);
    std::string part;
    while (std::getline(in, part, ',')) {
        if (part.empty()) continue;
        lengths.insert(std::stoi(part));
    }
    if (lengths.empty()) throw std::invalid_argument("lengths list is empty");
    return lengths;
}

void append_line(const fs::path& path, const std::string& line) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to " + path.string());
    out << line << "\n";
}

}  // namespace

// -------------------------------------------------------------- AE stage ----

double autoencoder_train_step(ConvAE& ae, Adam& opt, const std::vector<CorpusItem>& corpus,
                              const AETrainConfig& cfg, int step) {
    if (corpus.empty()) throw std::invalid_argument("corpus is empty");
    Rng rng(derive_seed(cfg.seed, SeedStream::ae_batch, static_cast<uint64_t>(step)));

    // same-length bucket per step
    std::map<int, std::vector<int>> by_len;
    for (int i = 0; i < static_cast<int>(corpus.size()); ++i)
        by_len[corpus[static_cast<size_t>(i)].spec.length_frames].push_back(i);
    std::vector<int> lengths;
    for (const auto& [len, idxs] : by_len) lengths.push_back(len);
    int len = lengths[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(lengths.size()) - 1))];
    const std::vector<int>& bucket = by_len[len];

    ParamSet<float> params = ae.params();
    zero_grads(params);
    double loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
        const CorpusItem& item =
            corpus[static_cast<size_t>(bucket[static_cast<size_t>(rng.uniform_int(
                0, static_cast<int64_t>(bucket.size()) - 1))])];
        AECtx<float> ctx;
        ae.encode_raw(item.clip.data, &ctx);
        Tensor recon = ae.decode_raw(ctx.z, item.clip.data.shape[0], &ctx);
        double item_loss = 0.0;
        Tensor g(recon.shape);
        float scale = static_cast<float>(2.0 / (static_cast<double>(recon.size()) * cfg.batch));
        for (int64_t i = 0; i < recon.size(); ++i) {
            double d = static_cast<double>(recon[i]) - static_cast<double>(item.clip.data[i]);
            item_loss += d * d;
            g[i] = scale * static_cast<float>(d);
        }
        loss += item_loss / static_cast<double>(recon.size());
        ae.backward(ctx, g);
    }
    loss /= static_cast<double>(cfg.batch);
    if (!std::isfinite(loss))
        throw TrainingFailure("autoencoder loss diverged at step " + std::to_string(step), step);
    opt.step(params, cfg.lr);
    return loss;
}

std::vector<double> train_autoencoder(ConvAE& ae, Adam& opt,
                                      const std::vector<CorpusItem>& corpus,
                                      const AETrainConfig& cfg, int start_step,
                                      const TrainLogger& logger) {
    std::vector<double> curve;
    for (int step = start_step; step < cfg.steps; ++step) {
        double loss = autoencoder_train_step(ae, opt, corpus, cfg, step);
        curve.push_back(loss);
        if (logger) logger(step, loss);
    }
    return curve;
}

// ---------------------------------------------------------- latent corpus ---

LatentDataset encode_corpus(const ConvAE& ae, const std::vector<CorpusItem>& corpus,
                            const Vocab& vocab, std::optional<float> edge_threshold) {
    LatentDataset data;
    double sq_sum = 0.0;
    int64_t count = 0;
    for (const CorpusItem& item : corpus) {
        LatentItem li;
        li.latent = ae.encode_raw(item.clip.data);
        li.prompt = tokenize(vocab, item.caption);
        li.tl = static_cast<int>(li.latent.shape[0]);
        li.spec = item.spec;
        if (edge_threshold) {
            ControlSignal ctrl = edge_map(item.clip, *edge_threshold);
            li.ctrl_grid = pool_control_grid(ctrl, li.latent.shape[2], li.latent.shape[3]);
        }
        for (int64_t i = 0; i < li.latent.size(); ++i) {
            sq_sum += static_cast<double>(li.latent[i]) * static_cast<double>(li.latent[i]);
            ++count;
        }
        data.by_tl[li.tl].push_back(static_cast<int>(data.items.size()));
        data.items.push_back(std::move(li));
    }
    double std_dev = std::sqrt(sq_sum / static_cast<double>(std::max<int64_t>(count, 1)));
    data.scale = std_dev > 1e-8 ? static_cast<float>(1.0 / std_dev) : 1.0f;
    return data;
}

// ----------------------------------------------------- diffusion training ---

DiffBatch make_diffusion_batch(const LatentDataset& data, int batch, double p_drop, Rng& rng) {
    if (data.items.empty()) throw std::invalid_argument("latent dataset is empty");
    std::vector<int> tls;
    for (const auto& [tl, idxs] : data.by_tl) tls.push_back(tl);
    int tl = tls[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(tls.size()) - 1))];
    const std::vector<int>& bucket = data.by_tl.at(tl);

    const Tensor& first = data.items[static_cast<size_t>(bucket[0])].latent;
    DiffBatch out;
    out.x0 = Tensor({batch, first.shape[0], first.shape[1], first.shape[2], first.shape[3]});
    int64_t item_size = first.size();
    for (int b = 0; b < batch; ++b) {
        const LatentItem& li = data.items[static_cast<size_t>(
            bucket[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(bucket.size()) - 1))])];
        for (int64_t i = 0; i < item_size; ++i)
            out.x0[b * item_size + i] = li.latent[i] * data.scale;
        PromptTokens prompt = li.prompt;
        if (rng.uniform() < p_drop) prompt = null_prompt();
        out.prompts.push_back(prompt);
    }
    return out;
}

namespace {

// shared eps-objective step: corrupt, forward, loss, backward
double diffusion_loss_and_grads(UViT& model, Embedding& emb, const DiffBatch& batch,
                                const NoiseSchedule& sched, Rng& rng, int step,
                                const UViTHooks<float>* hooks = nullptr) {
    CorruptedBatch<float> cb = corrupt_batch(batch.x0, sched, rng);
    UViTCtx<float> ctx;
    Tensor eps_hat = uvit_forward(model, emb, cb.x_t, cb.ts, batch.prompts, &ctx, hooks);
    double loss = 0.0;
    Tensor g(eps_hat.shape);
    float scale = static_cast<float>(2.0 / static_cast<double>(eps_hat.size()));
    for (int64_t i = 0; i < eps_hat.size(); ++i) {
        double d = static_cast<double>(eps_hat[i]) - static_cast<double>(cb.eps[i]);
        loss += d * d;
        g[i] = scale * static_cast<float>(d);
    }
    loss /= static_cast<double>(eps_hat.size());
    if (!std::isfinite(loss))
        throw TrainingFailure("diffusion loss diverged at step " + std::to_string(step), step);
    uvit_backward(model, emb, ctx, g, hooks);
    return loss;
}

double warmup_lr(double lr, int step, int warmup_steps) {
    if (warmup_steps <= 0) return lr;
    return lr * std::min(1.0, static_cast<double>(step + 1) / warmup_steps);
}

}  // namespace

double diffusion_train_step(UViT& model, Embedding& emb, Adam& opt, const LatentDataset& data,
                            const NoiseSchedule& sched, const DiffTrainConfig& cfg, int step) {
    Rng rng(derive_seed(cfg.seed, SeedStream::diffusion_batch, static_cast<uint64_t>(step)));
    DiffBatch batch = make_diffusion_batch(data, cfg.batch, cfg.p_drop, rng);
    ParamSet<float> params = model.params();
    params.push_back({"emb", &emb.table, &emb.grad});
    zero_grads(params);
    double loss = diffusion_loss_and_grads(model, emb, batch, sched, rng, step);
    opt.step(params, warmup_lr(cfg.lr, step, cfg.warmup_steps));
    return loss;
}

std::vector<double> train_diffusion(UViT& model, Embedding& emb, Adam& opt,
                                    const LatentDataset& data, const NoiseSchedule& sched,
                                    const DiffTrainConfig& cfg, int start_step,
                                    const TrainLogger& logger) {
    std::vector<double> curve;
    for (int step = start_step; step < cfg.steps; ++step) {
        double loss = diffusion_train_step(model, emb, opt, data, sched, cfg, step);
        curve.push_back(loss);
        if (logger) logger(step, loss);
    }
    return curve;
}

// ------------------------------------------------------- adapter training ---

double adapter_train_step(UViT& base, Embedding& emb, Adapter& adapter, Adam& opt,
                          const LatentDataset& data, const NoiseSchedule& sched,
                          const DiffTrainConfig& cfg, int step) {
    Rng rng(derive_seed(cfg.seed, SeedStream::adapter_batch, static_cast<uint64_t>(step)));
    if (data.items.empty() || data.items[0].ctrl_grid.size() == 0)
        throw std::invalid_argument("adapter training needs control grids in the dataset");

    // same-bucket batch with control grids stacked alongside
    std::vector<int> tls;
    for (const auto& [tl, idxs] : data.by_tl) tls.push_back(tl);
    int tl = tls[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(tls.size()) - 1))];
    const std::vector<int>& bucket = data.by_tl.at(tl);
    const Tensor& first = data.items[static_cast<size_t>(bucket[0])].latent;

    DiffBatch batch;
    batch.x0 = Tensor({cfg.batch, first.shape[0], first.shape[1], first.shape[2], first.shape[3]});
    Tensor ctrl({cfg.batch, first.shape[0], 1, first.shape[2], first.shape[3]});
    int64_t item_size = first.size();
    int64_t grid_size = ctrl.size() / cfg.batch;
    for (int b = 0; b < cfg.batch; ++b) {
        const LatentItem& li = data.items[static_cast<size_t>(
            bucket[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(bucket.size()) - 1))])];
        for (int64_t i = 0; i < item_size; ++i)
            batch.x0[b * item_size + i] = li.latent[i] * data.scale;
        std::copy(li.ctrl_grid.data(), li.ctrl_grid.data() + grid_size,
                  ctrl.data() + b * grid_size);
        PromptTokens prompt = li.prompt;
        if (rng.uniform() < cfg.p_drop) prompt = null_prompt();
        batch.prompts.push_back(prompt);
    }

    ParamSet<float> adapter_params = adapter.params();
    ParamSet<float> base_params = base.params();
    base_params.push_back({"emb", &emb.table, &emb.grad});
    zero_grads(adapter_params);
    zero_grads(base_params);

    CorruptedBatch<float> cb = corrupt_batch(batch.x0, sched, rng);
    UViTCtx<float> ctx;
    AdapterCtx<float> actx;
    AdapterStream<float> stream;
    Tensor eps_hat = uvit_forward_controlled(base, emb, adapter, cb.x_t, cb.ts, batch.prompts,
                                             ctrl, &ctx, &actx, &stream);
    double loss = 0.0;
    Tensor g(eps_hat.shape);
    float gscale = static_cast<float>(2.0 / static_cast<double>(eps_hat.size()));
    for (int64_t i = 0; i < eps_hat.size(); ++i) {
        double d = static_cast<double>(eps_hat[i]) - static_cast<double>(cb.eps[i]);
        loss += d * d;
        g[i] = gscale * static_cast<float>(d);
    }
    loss /= static_cast<double>(eps_hat.size());
    if (!std::isfinite(loss))
        throw TrainingFailure("adapter loss diverged at step " + std::to_string(step), step);

    UViTHooks<float> hooks = stream.hooks();
    uvit_backward(base, emb, ctx, g, &hooks);
    adapter_backward(adapter, stream, actx);
    opt.step(adapter_params, warmup_lr(cfg.lr, step, cfg.warmup_steps));
    return loss;
}

std::vector<double> train_adapter(UViT& base, Embedding& emb, Adapter& adapter, Adam& opt,
                                  const LatentDataset& data, const NoiseSchedule& sched,
                                  const DiffTrainConfig& cfg, int start_step,
                                  const TrainLogger& logger) {
    std::vector<double> curve;
    for (int step = start_step; step < cfg.steps; ++step) {
        double loss = adapter_train_step(base, emb, adapter, opt, data, sched, cfg, step);
        curve.push_back(loss);
        if (logger) logger(step, loss);
    }
    return curve;
}

// -------------------------------------------------------- subject driving ---

double subject_train_step(UViT& model, Embedding& emb, Adam& opt,
                          const std::vector<LatentItem>& subject_items,
                          const std::vector<LatentItem>& prior_items, float scale,
                          const NoiseSchedule& sched, const SubjectFinetuneConfig& cfg, int step,
                          const std::function<void(int64_t)>& stream_observer) {
    Rng rng(derive_seed(cfg.seed, SeedStream::subject_batch, static_cast<uint64_t>(step)));
    const Tensor& first = subject_items[0].latent;
    int64_t item_size = first.size();
    DiffBatch batch;
    batch.x0 = Tensor({cfg.batch, first.shape[0], first.shape[1], first.shape[2], first.shape[3]});
    for (int b = 0; b < cfg.batch; ++b) {
        // strict 1:1 mix of subject and prior-preservation samples
        const std::vector<LatentItem>& pool = (b % 2 == 0) ? subject_items : prior_items;
        const LatentItem& li =
            pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
        if (li.tl != 1)
            throw std::logic_error("subject finetuning consumed a clip with more than one frame");
        if (stream_observer) stream_observer(1);
        for (int64_t i = 0; i < item_size; ++i) batch.x0[b * item_size + i] = li.latent[i] * scale;
        PromptTokens prompt = li.prompt;
        if (rng.uniform() < cfg.p_drop) prompt = null_prompt();
        batch.prompts.push_back(prompt);
    }

    ParamSet<float> params = model.params();
    params.push_back({"emb", &emb.table, &emb.grad});
    zero_grads(params);
    double loss = diffusion_loss_and_grads(model, emb, batch, sched, rng, step);
    opt.step(params, cfg.lr);
    return loss;
}

SubjectFinetuneResult finetune_subject(const UViT& base, const Embedding& base_emb,
                                       const ConvAE& ae, float latent_scale,
                                       const SubjectSet& subjects, const Vocab& vocab,
                                       const std::vector<CorpusItem>& prior_corpus,
                                       const NoiseSchedule& sched,
                                       const SubjectFinetuneConfig& cfg,
                                       const std::function<void(int64_t)>& stream_observer,
                                       const TrainLogger& logger) {
    if (subjects.images.empty()) throw std::invalid_argument("subject set is empty");
    if (!vocab.subject_active)
        throw std::logic_error("the subject token must be activated before finetuning");

    SubjectFinetuneResult result{base, base_emb, {}};

    std::vector<LatentItem> subject_items;
    const std::string subject_caption = std::string("a ") + kSubjectWord + " sprite";
    for (const VideoClip& image : subjects.images) {
        if (image.frames() != 1)
            throw std::invalid_argument("subject images must be single-frame clips");
        LatentItem li;
        li.latent = ae.encode_raw(image.data);
        li.prompt = tokenize(vocab, subject_caption);
        li.tl = 1;
        subject_items.push_back(std::move(li));
    }

    // prior preservation draws only the single-frame part of the base corpus
    std::vector<LatentItem> prior_items;
    for (const CorpusItem& item : prior_corpus) {
        if (item.spec.length_frames != 1) continue;
        LatentItem li;
        li.latent = ae.encode_raw(item.clip.data);
        li.prompt = tokenize(vocab, item.caption);
        li.tl = 1;
        prior_items.push_back(std::move(li));
    }
    if (prior_items.empty())
        throw std::invalid_argument("prior corpus has no single-frame clips");

    Adam opt;
    for (int step = 0; step < cfg.steps; ++step) {
        double loss = subject_train_step(result.uvit, result.emb, opt, subject_items, prior_items,
                                         latent_scale, sched, cfg, step, stream_observer);
        result.loss_curve.push_back(loss);
        if (logger) logger(step, loss);
    }
    return result;
}

// ---------------------------------------------------------------- sampling --

EpsFn make_guided_eps_fn(const UViT& model, const Embedding& emb, const PromptTokens& cond,
                         double guidance, const Adapter* adapter, const Tensor* pooled_ctrl) {
    PromptTokens uncond = null_prompt();
    return [&model, &emb, cond, uncond, guidance, adapter, pooled_ctrl](const Tensor& x_t,
                                                                        int t) -> Tensor {
        auto forward_one = [&](const PromptTokens& prompt) -> Tensor {
            Tensor batch({1, x_t.shape[0], x_t.shape[1], x_t.shape[2], x_t.shape[3]});
            std::copy(x_t.data(), x_t.data() + x_t.size(), batch.data());
            Tensor eps;
            if (adapter && pooled_ctrl) {
                Tensor ctrl_batch({1, pooled_ctrl->shape[0], pooled_ctrl->shape[1],
                                   pooled_ctrl->shape[2], pooled_ctrl->shape[3]});
                std::copy(pooled_ctrl->data(), pooled_ctrl->data() + pooled_ctrl->size(),
                          ctrl_batch.data());
                eps = uvit_forward_controlled(model, emb, *adapter, batch, {t}, {prompt},
                                              ctrl_batch);
            } else {
                eps = uvit_forward(model, emb, batch, {t}, {prompt});
            }
            Tensor out(x_t.shape);
            std::copy(eps.data(), eps.data() + out.size(), out.data());
            return out;
        };
        Tensor eps_c = forward_one(cond);
        if (guidance == 1.0) return eps_c;
        Tensor eps_u = forward_one(uncond);
        return cfg_combine(eps_c, eps_u, guidance);
    };
}

Tensor sample_latent(const ModelBundle& models, const PromptTokens& cond, int64_t tl,
                     const SamplerConfig& cfg, const Adapter* adapter,
                     const Tensor* pooled_ctrl) {
    EpsFn eps_fn = make_guided_eps_fn(models.uvit, models.emb, cond, cfg.guidance, adapter,
                                      pooled_ctrl);
    std::vector<int64_t> shape = {tl, models.uvit.cfg.latent_c, models.uvit.cfg.latent_h,
                                  models.uvit.cfg.latent_w};
    return ddim_sample(eps_fn, models.sched, shape, cfg);
}

VideoClip sample_clip(const ModelBundle& models, const PromptTokens& cond, int length_frames,
                      const SamplerConfig& cfg, const Adapter* adapter,
                      const Tensor* pooled_ctrl) {
    int64_t tl = latent_frames_for(length_frames);
    Tensor z = sample_latent(models, cond, tl, cfg, adapter, pooled_ctrl);
    float inv = 1.0f / models.latent_scale;
    for (int64_t i = 0; i < z.size(); ++i) z[i] *= inv;
    return decode(models.ae, LatentVideo{std::move(z)}, length_frames);
}

VideoClip predict_clip(const ModelBundle& models, const VideoClip& input, int given_frames,
                       const PromptTokens& cond, const SamplerConfig& cfg,
                       const PredictObserver& observer) {
    int64_t length = input.frames();
    if (given_frames < 1 || given_frames >= length)
        throw std::invalid_argument("given frame count must be in [1, length)");
    if (given_frames % kTemporalFactor != 0)
        throw std::invalid_argument(
            "given frame count must be a multiple of 4 so it covers whole latent frames "
            "(or pass a single image with replication to condition on the first group)");

    Tensor known = models.ae.encode_raw(input.data);
    for (int64_t i = 0; i < known.size(); ++i) known[i] *= models.latent_scale;
    FrameMask mask;
    mask.given.assign(static_cast<size_t>(known.shape[0]), 0);
    for (int f = 0; f < given_frames / kTemporalFactor; ++f)
        mask.given[static_cast<size_t>(f)] = 1;

    EpsFn eps_fn = make_guided_eps_fn(models.uvit, models.emb, cond, cfg.guidance);
    Tensor z = predict_frames(eps_fn, models.sched, known, mask, cfg, observer);
    float inv = 1.0f / models.latent_scale;
    for (int64_t i = 0; i < z.size(); ++i) z[i] *= inv;
    return decode(models.ae, LatentVideo{std::move(z)}, length);
}

// --------------------------------------------------------------- eval -------

MetricBundle run_conditional_eval(const ModelBundle& models, const std::vector<PromptCase>& grid,
                                  int n_per_prompt, const SamplerConfig& cfg) {
    SamplerFn sampler = [&](const PromptCase& prompt, int sample_index) -> VideoClip {
        int prompt_index = 0;
        for (size_t i = 0; i < grid.size(); ++i)
            if (&grid[i] == &prompt) prompt_index = static_cast<int>(i);
        SamplerConfig one = cfg;
        one.seed = derive_seed(cfg.seed, SeedStream::eval,
                               static_cast<uint64_t>(prompt_index) * 1000003ull +
                                   static_cast<uint64_t>(sample_index));
        PromptTokens tokens = tokenize(models.vocab, prompt.caption);
        return sample_clip(models, tokens, prompt.length_frames, one);
    };
    return conditional_accuracy(sampler, grid, n_per_prompt);
}

// ----------------------------------------------------------- checkpoints ----

void save_params_checkpoint(const fs::path& path, const std::string& tag,
                            const std::map<std::string, std::string>& metadata,
                            const ParamSet<float>& params) {
    std::vector<NamedTensorRef> refs;
    refs.reserve(params.size());
    for (const auto& p : params) refs.push_back({p.name, p.value});
    save_checkpoint(path, tag, metadata, refs);
}

void load_params_checkpoint(const fs::path& path, const std::string& expected_tag,
                            const ParamSet<float>& params,
                            std::map<std::string, std::string>* metadata_out) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.tag != expected_tag)
        throw std::runtime_error("checkpoint " + path.string() + " has section tag '" + ck.tag +
                                 "', expected '" + expected_tag + "'");
    if (ck.tensors.size() != params.size())
        throw std::runtime_error("checkpoint " + path.string() + " holds " +
                                 std::to_string(ck.tensors.size()) + " tensors, expected " +
                                 std::to_string(params.size()));
    for (const auto& p : params) {
        const Tensor* t = ck.find(p.name);
        if (!t) throw std::runtime_error("checkpoint is missing tensor '" + p.name + "'");
        if (t->shape != p.value->shape)
            throw std::runtime_error("checkpoint tensor '" + p.name + "' has a mismatched shape");
        *p.value = *t;
    }
    if (metadata_out) *metadata_out = ck.metadata;
}

void save_train_state(const fs::path& path, const std::string& tag, int step, const Adam& opt,
                      const ParamSet<float>& params) {
    std::map<std::string, std::string> meta;
    meta["kind"] = "train_state";
    meta["step"] = std::to_string(step);
    meta["adam_step"] = std::to_string(opt.step_count);
    std::vector<NamedTensorRef> refs;
    for (size_t i = 0; i < params.size(); ++i) {
        refs.push_back({"m." + params[i].name, &opt.m[i]});
        refs.push_back({"v." + params[i].name, &opt.v[i]});
    }
    save_checkpoint(path, tag, meta, refs);
}

int load_train_state(const fs::path& path, const std::string& tag, Adam& opt,
                     const ParamSet<float>& params) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.tag != tag)
        throw std::runtime_error("train state has tag '" + ck.tag + "', expected '" + tag + "'");
    opt.ensure_state(params);
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor* m = ck.find("m." + params[i].name);
        const Tensor* v = ck.find("v." + params[i].name);
        if (!m || !v)
            throw std::runtime_error("train state is missing moments for '" + params[i].name + "'");
        opt.m[i] = *m;
        opt.v[i] = *v;
    }
    opt.step_count = std::stoll(ck.metadata.at("adam_step"));
    return std::stoi(ck.metadata.at("step"));
}

// ------------------------------------------------------------- CLI stages ---

namespace {

constexpr uint64_t kInitStreamUVit = 0x1417;
constexpr uint64_t kInitStreamAE = 0x1a0e;
constexpr uint64_t kInitStreamAdapter = 0x1ad2;
constexpr uint64_t kInitStreamEmb = 0x13b;

void require_file(const fs::path& path, const std::string& stage_name) {
    if (!fs::exists(path))
        throw DependencyError("missing checkpoint '" + path.string() +
                              "'; run the '" + stage_name + "' stage first");
}

std::map<std::string, std::string> ae_metadata(const ConvAE& ae) {
    return {{"hidden1", std::to_string(ae.widths.hidden1)},
            {"hidden2", std::to_string(ae.widths.hidden2)},
            {"latent", std::to_string(ae.widths.latent)}};
}

ConvAE load_ae(const fs::path& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.tag != "AENC")
        throw std::runtime_error("expected an AENC checkpoint at " + path.string());
    AEWidths w;
    w.hidden1 = std::stoll(ck.metadata.at("hidden1"));
    w.hidden2 = std::stoll(ck.metadata.at("hidden2"));
    w.latent = std::stoll(ck.metadata.at("latent"));
    Rng rng(0);
    ConvAE ae;
    ae.init(rng, w);
    load_params_checkpoint(path, "AENC", ae.params());
    return ae;
}

UViTConfig uvit_config_from_metadata(const std::map<std::string, std::string>& meta) {
    UViTConfig cfg;
    cfg.d_model = std::stoll(meta.at("d_model"));
    cfg.depth = std::stoi(meta.at("depth"));
    cfg.heads = std::stoi(meta.at("heads"));
    cfg.mlp_ratio = std::stoll(meta.at("mlp_ratio"));
    cfg.latent_c = std::stoll(meta.at("latent_c"));
    cfg.latent_h = std::stoll(meta.at("latent_h"));
    cfg.latent_w = std::stoll(meta.at("latent_w"));
    cfg.max_tl = std::stoll(meta.at("max_tl"));
    return cfg;
}

std::map<std::string, std::string> uvit_metadata(const UViTConfig& cfg,
                                                 const NoiseSchedule& sched, float latent_scale,
                                                 bool subject) {
    std::map<std::string, std::string> meta;
    meta["d_model"] = std::to_string(cfg.d_model);
    meta["depth"] = std::to_string(cfg.depth);
    meta["heads"] = std::to_string(cfg.heads);
    meta["mlp_ratio"] = std::to_string(cfg.mlp_ratio);
    meta["latent_c"] = std::to_string(cfg.latent_c);
    meta["latent_h"] = std::to_string(cfg.latent_h);
    meta["latent_w"] = std::to_string(cfg.latent_w);
    meta["max_tl"] = std::to_string(cfg.max_tl);
    meta["t_diff"] = std::to_string(sched.t_diff);
    meta["beta_1"] = format_real(sched.beta.front());
    meta["beta_t"] = format_real(sched.beta.back());
    meta["latent_scale"] = format_real(latent_scale);
    meta["subject"] = subject ? "1" : "0";
    return meta;
}

void copy_config_into_run_dir(const Config& cfg, const fs::path& run_dir,
                              const std::string& command, uint64_t root_seed) {
    std::string echo = "command\t" + command + "\nroot_seed\t" + std::to_string(root_seed) + "\n";
    for (const auto& [k, v] : cfg.kv) echo += k + "\t" + v + "\n";
    write_file_atomic(run_dir / "run.tsv", echo);
}

}  // namespace

ModelBundle load_bundle(const fs::path& ae_ckpt, const fs::path& uvit_ckpt,
                        const fs::path& embed_ckpt) {
    ModelBundle models;
    models.ae = load_ae(ae_ckpt);

    LoadedCheckpoint uck = load_checkpoint(uvit_ckpt);
    if (uck.tag != "UVIT")
        throw std::runtime_error("expected a UVIT checkpoint at " + uvit_ckpt.string());
    UViTConfig ucfg = uvit_config_from_metadata(uck.metadata);
    Rng rng(0);
    models.uvit.init(rng, ucfg);
    load_params_checkpoint(uvit_ckpt, "UVIT", models.uvit.params());
    models.latent_scale = std::stof(uck.metadata.at("latent_scale"));
    models.sched = make_schedule(std::stoi(uck.metadata.at("t_diff")),
                                 std::stod(uck.metadata.at("beta_1")),
                                 std::stod(uck.metadata.at("beta_t")));

    models.vocab = default_vocab();
    if (uck.metadata.count("subject") && uck.metadata.at("subject") == "1")
        models.vocab = extend_vocab_subject(models.vocab);

    LoadedCheckpoint eck = load_checkpoint(embed_ckpt);
    if (eck.tag != "EMBD")
        throw std::runtime_error("expected an EMBD checkpoint at " + embed_ckpt.string());
    const Tensor* table = eck.find("table");
    if (!table) throw std::runtime_error("embedding checkpoint is missing its table");
    models.emb.table = *table;
    models.emb.grad = Tensor::zeros(table->shape);
    return models;
}

void stage_datagen(const Config& cfg, const fs::path& out_dir) {
    cfg.restrict_keys({"n", "seed", "lengths"});
    int n = static_cast<int>(cfg.require_int("n"));
    if (n <= 0) throw std::invalid_argument("datagen needs n > 0");
    uint64_t seed = cfg.get_u64("seed", 1);
    std::set<int> lengths = parse_lengths(cfg.get_str("lengths", "1,4,8,16"));

    std::vector<CorpusItem> corpus = build_corpus(n, seed, lengths);
    fs::create_directories(out_dir);
    write_corpus_dir(out_dir / "corpus", corpus);
    save_vocab(out_dir / "vocab.tsv", default_vocab());
    save_synonyms(out_dir / "synonyms.tsv", default_synonyms());

    fs::path run_dir = next_run_dir(out_dir, "datagen");
    copy_config_into_run_dir(cfg, run_dir, "datagen", seed);
}

namespace {

struct TrainArtifacts {
    fs::path model_ckpt;
    fs::path state_ckpt;
    fs::path loss_log;
};

// ckpt_params go into <stage>.ckpt; opt_params (a superset when an embedding
// trains alongside) drive the optimizer and the resume state file.
void run_train_loop(const fs::path& out_dir, const std::string& stage, int total_steps,
                    int ckpt_every, const ParamSet<float>& ckpt_params,
                    const ParamSet<float>& opt_params, Adam& opt, const std::string& tag,
                    const std::map<std::string, std::string>& metadata,
                    const std::function<double(int)>& step_fn,
                    const std::function<void(const fs::path&)>& extra_save,
                    const std::function<void(const fs::path&)>& extra_load,
                    const TrainLogger& logger) {
    TrainArtifacts art{out_dir / (stage + ".ckpt"), out_dir / (stage + "_state.ckpt"),
                       out_dir / ("loss_" + stage + ".log")};
    int start_step = 0;
    if (fs::exists(art.state_ckpt) && fs::exists(art.model_ckpt)) {
        load_params_checkpoint(art.model_ckpt, tag, ckpt_params);
        if (extra_load) extra_load(out_dir);
        start_step = load_train_state(art.state_ckpt, tag, opt, opt_params);
    }
    opt.ensure_state(opt_params);

    auto save_all = [&](int completed) {
        save_params_checkpoint(art.model_ckpt, tag, metadata, ckpt_params);
        save_train_state(art.state_ckpt, tag, completed, opt, opt_params);
        if (extra_save) extra_save(out_dir);
    };

    for (int step = start_step; step < total_steps; ++step) {
        double loss = step_fn(step);
        append_line(art.loss_log, std::to_string(step) + "\t" + format_real(loss));
        if (logger) logger(step, loss);
        if (ckpt_every > 0 && (step + 1) % ckpt_every == 0 && step + 1 < total_steps)
            save_all(step + 1);
    }
    save_all(total_steps);
}

}  // namespace

void stage_train(const Config& cfg, const std::string& stage, const fs::path& out_dir,
                 const TrainLogger& logger) {
    fs::create_directories(out_dir);

    if (stage == "ae") {
        cfg.restrict_keys({"corpus_dir", "steps", "batch", "lr", "seed", "ckpt_every",
                           "holdout_n", "holdout_seed"});
        AETrainConfig tc;
        tc.steps = static_cast<int>(cfg.require_int("steps"));
        tc.batch = static_cast<int>(cfg.get_int("batch", 16));
        tc.lr = cfg.get_real("lr", 1e-3);
        tc.seed = cfg.get_u64("seed", 1);
        if (tc.steps <= 0 || tc.batch <= 0 || tc.lr <= 0.0)
            throw std::invalid_argument("ae training needs positive steps, batch and lr");
        int ckpt_every = static_cast<int>(cfg.get_int("ckpt_every", 200));
        std::vector<CorpusItem> corpus = load_corpus_dir(cfg.require_str("corpus_dir"));
        if (corpus.empty()) throw std::invalid_argument("corpus is empty");

        Rng init_rng(mix_seed(tc.seed, kInitStreamAE));
        ConvAE ae;
        ae.init(init_rng);
        Adam opt;
        ParamSet<float> params = ae.params();
        run_train_loop(out_dir, "ae", tc.steps, ckpt_every, params, params, opt, "AENC",
                       ae_metadata(ae),
                       [&](int step) { return autoencoder_train_step(ae, opt, corpus, tc, step); },
                       nullptr, nullptr, logger);

        // final metrics line: held-out reconstruction quality
        int holdout_n = static_cast<int>(cfg.get_int("holdout_n", 64));
        uint64_t holdout_seed = cfg.get_u64("holdout_seed", tc.seed + 101);
        std::vector<CorpusItem> holdout = build_corpus(holdout_n, holdout_seed, {1, 4, 8, 16});
        double psnr_sum = 0.0;
        for (const CorpusItem& item : holdout) {
            LatentVideo z = encode(ae, item.clip);
            VideoClip recon = decode(ae, z, item.clip.frames());
            psnr_sum += psnr(item.clip, recon);
        }
        append_line(out_dir / "loss_ae.log",
                    "final\tholdout_psnr=" + format_real(psnr_sum / holdout.size()));

        fs::path run_dir = next_run_dir(out_dir, "train-ae");
        copy_config_into_run_dir(cfg, run_dir, "train-ae", tc.seed);
        return;
    }

    if (stage == "diffusion") {
        cfg.restrict_keys({"corpus_dir", "ae_ckpt", "steps", "batch", "lr", "warmup_steps",
                           "p_drop", "t_diff", "beta_1", "beta_t", "seed", "ckpt_every"});
        DiffTrainConfig tc;
        tc.steps = static_cast<int>(cfg.require_int("steps"));
        tc.batch = static_cast<int>(cfg.get_int("batch", 16));
        tc.lr = cfg.get_real("lr", 3e-4);
        tc.warmup_steps = static_cast<int>(cfg.get_int("warmup_steps", 100));
        tc.p_drop = cfg.get_real("p_drop", 0.1);
        tc.seed = cfg.get_u64("seed", 1);
        if (tc.steps <= 0 || tc.batch <= 0 || tc.lr <= 0.0 || tc.p_drop < 0.0 || tc.p_drop > 1.0)
            throw std::invalid_argument("diffusion training config is out of bounds");
        int ckpt_every = static_cast<int>(cfg.get_int("ckpt_every", 500));
        int t_diff = static_cast<int>(cfg.get_int("t_diff", 1000));
        double beta_1 = cfg.get_real("beta_1", 1e-4);
        double beta_t = cfg.get_real("beta_t", 0.02);

        fs::path ae_path = cfg.require_str("ae_ckpt");
        require_file(ae_path, "ae");
        ConvAE ae = load_ae(ae_path);
        std::vector<CorpusItem> corpus = load_corpus_dir(cfg.require_str("corpus_dir"));
        Vocab vocab = default_vocab();
        LatentDataset data = encode_corpus(ae, corpus, vocab);
        NoiseSchedule sched = make_schedule(t_diff, beta_1, beta_t);

        Rng init_rng(mix_seed(tc.seed, kInitStreamUVit));
        UViT model;
        model.init(init_rng, UViTConfig{});
        Embedding emb;
        Rng emb_rng(mix_seed(tc.seed, kInitStreamEmb));
        emb.init(emb_rng, vocab.size(), static_cast<int>(model.cfg.d_model), 0.02f);

        ParamSet<float> model_params = model.params();
        ParamSet<float> opt_params = model_params;
        opt_params.push_back({"emb", &emb.table, &emb.grad});
        ParamSet<float> emb_params = {{"table", &emb.table, &emb.grad}};
        Adam opt;
        std::map<std::string, std::string> meta =
            uvit_metadata(model.cfg, sched, data.scale, false);
        run_train_loop(
            out_dir, "uvit", tc.steps, ckpt_every, model_params, opt_params, opt, "UVIT", meta,
            [&](int step) { return diffusion_train_step(model, emb, opt, data, sched, tc, step); },
            [&](const fs::path& dir) {
                save_params_checkpoint(dir / "embed.ckpt", "EMBD", {}, emb_params);
            },
            [&](const fs::path& dir) {
                load_params_checkpoint(dir / "embed.ckpt", "EMBD", emb_params);
            },
            logger);
        append_line(out_dir / "loss_uvit.log", "final\tlatent_scale=" + format_real(data.scale));

        fs::path run_dir = next_run_dir(out_dir, "train-diffusion");
        copy_config_into_run_dir(cfg, run_dir, "train-diffusion", tc.seed);
        return;
    }

    if (stage == "adapter") {
        cfg.restrict_keys({"corpus_dir", "ae_ckpt", "uvit_ckpt", "embed_ckpt", "steps", "batch",
                           "lr", "warmup_steps", "p_drop", "edge_threshold", "seed",
                           "ckpt_every"});
        DiffTrainConfig tc;
        tc.steps = static_cast<int>(cfg.require_int("steps"));
        tc.batch = static_cast<int>(cfg.get_int("batch", 16));
        tc.lr = cfg.get_real("lr", 3e-4);
        tc.warmup_steps = static_cast<int>(cfg.get_int("warmup_steps", 50));
        tc.p_drop = cfg.get_real("p_drop", 0.1);
        tc.seed = cfg.get_u64("seed", 1);
        float edge_threshold = static_cast<float>(cfg.get_real("edge_threshold", 0.25));
        if (tc.steps <= 0 || edge_threshold <= 0.0f)
            throw std::invalid_argument("adapter training config is out of bounds");
        int ckpt_every = static_cast<int>(cfg.get_int("ckpt_every", 200));

        fs::path ae_path = cfg.require_str("ae_ckpt");
        fs::path uvit_path = cfg.require_str("uvit_ckpt");
        fs::path embed_path = cfg.require_str("embed_ckpt");
        require_file(ae_path, "ae");
        require_file(uvit_path, "diffusion");
        require_file(embed_path, "diffusion");
        ModelBundle models = load_bundle(ae_path, uvit_path, embed_path);

        std::vector<CorpusItem> corpus = load_corpus_dir(cfg.require_str("corpus_dir"));
        LatentDataset data = encode_corpus(models.ae, corpus, models.vocab, edge_threshold);
        data.scale = models.latent_scale;  // stay in the diffusion model's latent space

        Rng adapter_rng(mix_seed(tc.seed, kInitStreamAdapter));
        Adapter adapter = init_adapter(models.uvit, adapter_rng);
        Adam opt;
        ParamSet<float> params = adapter.params();
        std::map<std::string, std::string> meta;
        meta["edge_threshold"] = format_real(edge_threshold);
        run_train_loop(out_dir, "adapter", tc.steps, ckpt_every, params, params, opt, "ADPT",
                       meta,
                       [&](int step) {
                           return adapter_train_step(models.uvit, models.emb, adapter, opt, data,
                                                     models.sched, tc, step);
                       },
                       nullptr, nullptr, logger);

        fs::path run_dir = next_run_dir(out_dir, "train-adapter");
        copy_config_into_run_dir(cfg, run_dir, "train-adapter", tc.seed);
        return;
    }

    if (stage == "subject") {
        cfg.restrict_keys({"corpus_dir", "ae_ckpt", "uvit_ckpt", "embed_ckpt", "steps", "batch",
                           "lr", "p_drop", "seed", "subject_count", "subject_seed",
                           "ckpt_every"});
        SubjectFinetuneConfig tc;
        tc.steps = static_cast<int>(cfg.require_int("steps"));
        tc.batch = static_cast<int>(cfg.get_int("batch", 8));
        tc.lr = cfg.get_real("lr", 1e-4);
        tc.p_drop = cfg.get_real("p_drop", 0.1);
        tc.seed = cfg.get_u64("seed", 1);
        int subject_count = static_cast<int>(cfg.get_int("subject_count", 16));
        uint64_t subject_seed = cfg.get_u64("subject_seed", 7);
        if (tc.steps <= 0 || subject_count <= 0)
            throw std::invalid_argument("subject training config is out of bounds");
        int ckpt_every = static_cast<int>(cfg.get_int("ckpt_every", 100));

        fs::path ae_path = cfg.require_str("ae_ckpt");
        fs::path uvit_path = cfg.require_str("uvit_ckpt");
        fs::path embed_path = cfg.require_str("embed_ckpt");
        require_file(ae_path, "ae");
        require_file(uvit_path, "diffusion");
        require_file(embed_path, "diffusion");
        ModelBundle models = load_bundle(ae_path, uvit_path, embed_path);
        Vocab vocab = models.vocab.subject_active ? models.vocab
                                                  : extend_vocab_subject(models.vocab);

        // deterministic subject image set
        SubjectSet subjects;
        subjects.subject_token_id = vocab.subject_id();
        Rng srng(mix_seed(subject_seed, static_cast<uint64_t>(SeedStream::subject_images)));
        for (int i = 0; i < subject_count; ++i) {
            int x = static_cast<int>(srng.uniform_int(0, kFrameW - kSpriteBox));
            int y = static_cast<int>(srng.uniform_int(0, kFrameH - kSpriteBox));
            subjects.images.push_back(render_subject_image(x, y));
        }

        std::vector<CorpusItem> corpus = load_corpus_dir(cfg.require_str("corpus_dir"));

        // subject finetuning runs over copies of the diffusion parameters
        UViT model = models.uvit;
        Embedding emb = models.emb;
        std::vector<LatentItem> subject_items, prior_items;
        const std::string subject_caption = std::string("a ") + kSubjectWord + " sprite";
        for (const VideoClip& image : subjects.images) {
            LatentItem li;
            li.latent = models.ae.encode_raw(image.data);
            li.prompt = tokenize(vocab, subject_caption);
            li.tl = 1;
            subject_items.push_back(std::move(li));
        }
        for (const CorpusItem& item : corpus) {
            if (item.spec.length_frames != 1) continue;
            LatentItem li;
            li.latent = models.ae.encode_raw(item.clip.data);
            li.prompt = tokenize(vocab, item.caption);
            li.tl = 1;
            prior_items.push_back(std::move(li));
        }
        if (subject_items.empty() || prior_items.empty())
            throw std::invalid_argument("subject finetuning needs subject and prior images");

        ParamSet<float> model_params = model.params();
        ParamSet<float> opt_params = model_params;
        opt_params.push_back({"emb", &emb.table, &emb.grad});
        ParamSet<float> emb_params = {{"table", &emb.table, &emb.grad}};
        Adam opt;
        std::map<std::string, std::string> meta =
            uvit_metadata(model.cfg, models.sched, models.latent_scale, true);
        run_train_loop(out_dir, "subject_uvit", tc.steps, ckpt_every, model_params, opt_params,
                       opt, "UVIT", meta,
                       [&](int step) {
                           return subject_train_step(model, emb, opt, subject_items, prior_items,
                                                     models.latent_scale, models.sched, tc, step,
                                                     nullptr);
                       },
                       [&](const fs::path& dir) {
                           save_params_checkpoint(dir / "subject_embed.ckpt", "EMBD",
                                                  {{"subject", "1"}}, emb_params);
                       },
                       [&](const fs::path& dir) {
                           load_params_checkpoint(dir / "subject_embed.ckpt", "EMBD", emb_params);
                       },
                       logger);

        fs::path run_dir = next_run_dir(out_dir, "train-subject");
        copy_config_into_run_dir(cfg, run_dir, "train-subject", tc.seed);
        return;
    }

    throw std::invalid_argument("unknown training stage '" + stage +
                                "' (expected ae, diffusion, adapter or subject)");
}

namespace {

const std::vector<std::string> kSampleKeys = {"ae_ckpt",    "uvit_ckpt", "embed_ckpt",
                                              "adapter_ckpt", "ddim_steps", "guidance",
                                              "eta",        "seed",      "synonyms",
                                              "write_ppm",  "target_length"};

SamplerConfig sampler_config_from(const Config& cfg, std::optional<uint64_t> seed_override) {
    SamplerConfig sc;
    sc.steps = static_cast<int>(cfg.get_int("ddim_steps", 50));
    sc.guidance = cfg.get_real("guidance", 3.0);
    sc.eta = cfg.get_real("eta", 0.0);
    sc.seed = seed_override ? *seed_override : cfg.get_u64("seed", 1);
    if (sc.steps < 1) throw std::invalid_argument("ddim_steps must be >= 1");
    if (sc.guidance < 0.0) throw std::invalid_argument("guidance must be >= 0");
    if (sc.eta < 0.0) throw std::invalid_argument("eta must be >= 0");
    return sc;
}

void check_length(int length_frames) {
    for (int a : kAllowedLengths)
        if (a == length_frames) return;
    throw std::invalid_argument("length " + std::to_string(length_frames) +
                                " is not supported; allowed values are 1, 4, 8, 16");
}

SynonymTable synonyms_from(const Config& cfg) {
    std::string path = cfg.get_str("synonyms", "");
    return path.empty() ? default_synonyms() : load_synonyms(path);
}

ModelBundle bundle_from(const Config& cfg) {
    fs::path ae_path = cfg.require_str("ae_ckpt");
    fs::path uvit_path = cfg.require_str("uvit_ckpt");
    fs::path embed_path = cfg.require_str("embed_ckpt");
    require_file(ae_path, "ae");
    require_file(uvit_path, "diffusion");
    require_file(embed_path, "diffusion");
    return load_bundle(ae_path, uvit_path, embed_path);
}

// captions for single-frame clips carry no motion clause
std::string drop_motion_clause(const std::string& caption) {
    size_t pos = caption.find(" moves ");
    return pos == std::string::npos ? caption : caption.substr(0, pos);
}

}  // namespace

std::string stage_sample(const Config& cfg, const fs::path& out_dir, const std::string& prompt,
                         int length_frames, std::optional<uint64_t> seed_override) {
    cfg.restrict_keys(kSampleKeys);
    check_length(length_frames);
    SamplerConfig sc = sampler_config_from(cfg, seed_override);
    ModelBundle models = bundle_from(cfg);

    std::string canonical = recaption(prompt, synonyms_from(cfg), models.vocab.subject_active);
    if (length_frames == 1) canonical = drop_motion_clause(canonical);
    PromptTokens tokens = tokenize(models.vocab, canonical);

    VideoClip clip = sample_clip(models, tokens, length_frames, sc);
    fs::create_directories(out_dir);
    write_vclip(out_dir / "sample.vclip", clip);
    if (cfg.get_int("write_ppm", 0) != 0) write_ppm_frames(out_dir / "frames", clip);

    fs::path run_dir = next_run_dir(out_dir, "sample");
    copy_config_into_run_dir(cfg, run_dir, "sample", sc.seed);
    append_line(run_dir / "run.tsv", "caption\t" + canonical);
    return canonical;
}

void stage_predict(const Config& cfg, const fs::path& out_dir, const fs::path& input_clip,
                   int given_frames, const std::string& prompt,
                   std::optional<uint64_t> seed_override, bool replicate_image) {
    cfg.restrict_keys(kSampleKeys);
    SamplerConfig sc = sampler_config_from(cfg, seed_override);
    ModelBundle models = bundle_from(cfg);

    VideoClip input = read_vclip(input_clip);
    int target_length = static_cast<int>(input.frames());
    if (replicate_image) {
        // a single conditioning image fills the whole first latent group
        target_length = static_cast<int>(cfg.get_int("target_length", 16));
        check_length(target_length);
        if (target_length < 2 * kTemporalFactor)
            throw std::invalid_argument("replication needs a target of at least 8 frames");
        VideoClip expanded{Tensor({target_length, 3, input.height(), input.width()})};
        for (int t = 0; t < target_length; ++t)
            std::copy(input.data.data(), input.data.data() + input.data.size() / input.frames(),
                      expanded.data.data() + t * input.data.size() / input.frames());
        input = std::move(expanded);
        given_frames = kTemporalFactor;
    } else {
        check_length(target_length);
        if (given_frames < 1 || given_frames >= target_length)
            throw std::invalid_argument("given frame count must be in [1, length)");
        if (given_frames % kTemporalFactor != 0)
            throw std::invalid_argument(
                "given frame count must be a multiple of 4 so conditioning covers whole latent "
                "frames; a single image can instead be replicated across the first group with "
                "--replicate-image");
    }

    std::string canonical = recaption(prompt, synonyms_from(cfg), models.vocab.subject_active);
    PromptTokens tokens = tokenize(models.vocab, canonical);
    VideoClip out = predict_clip(models, input, given_frames, tokens, sc);

    fs::create_directories(out_dir);
    write_vclip(out_dir / "predicted.vclip", out);
    if (cfg.get_int("write_ppm", 0) != 0) write_ppm_frames(out_dir / "frames", out);
    fs::path run_dir = next_run_dir(out_dir, "predict");
    copy_config_into_run_dir(cfg, run_dir, "predict", sc.seed);
}

std::string stage_control(const Config& cfg, const fs::path& out_dir,
                          const fs::path& control_source_clip, const std::string& prompt,
                          int length_frames, std::optional<uint64_t> seed_override) {
    cfg.restrict_keys(kSampleKeys);
    check_length(length_frames);
    SamplerConfig sc = sampler_config_from(cfg, seed_override);
    ModelBundle models = bundle_from(cfg);

    fs::path adapter_path = cfg.require_str("adapter_ckpt");
    require_file(adapter_path, "adapter");
    Rng dummy(0);
    Adapter adapter = init_adapter(models.uvit, dummy);
    std::map<std::string, std::string> ameta;
    load_params_checkpoint(adapter_path, "ADPT", adapter.params(), &ameta);
    float threshold = ameta.count("edge_threshold") ? std::stof(ameta.at("edge_threshold")) : 0.25f;

    VideoClip source = read_vclip(control_source_clip);
    if (source.frames() != length_frames)
        throw std::invalid_argument("control source clip length must match the requested length");
    ControlSignal ctrl = edge_map(source, threshold);
    Tensor pooled = pool_control_grid(ctrl, models.uvit.cfg.latent_h, models.uvit.cfg.latent_w);

    std::string canonical = recaption(prompt, synonyms_from(cfg), models.vocab.subject_active);
    if (length_frames == 1) canonical = drop_motion_clause(canonical);
    PromptTokens tokens = tokenize(models.vocab, canonical);
    VideoClip clip = sample_clip(models, tokens, length_frames, sc, &adapter, &pooled);

    fs::create_directories(out_dir);
    write_vclip(out_dir / "control_sample.vclip", clip);
    if (cfg.get_int("write_ppm", 0) != 0) write_ppm_frames(out_dir / "frames", clip);
    fs::path run_dir = next_run_dir(out_dir, "control");
    copy_config_into_run_dir(cfg, run_dir, "control", sc.seed);
    append_line(run_dir / "run.tsv", "caption\t" + canonical);
    return canonical;
}

void stage_finetune_subject(const Config& cfg, const fs::path& out_dir,
                            const TrainLogger& logger) {
    stage_train(cfg, "subject", out_dir, logger);
}

MetricBundle stage_eval(const Config& cfg, const fs::path& out_dir,
                        std::optional<uint64_t> seed_override) {
    cfg.restrict_keys({"ae_ckpt", "uvit_ckpt", "embed_ckpt", "ddim_steps", "guidance", "eta",
                       "seed", "n_prompts", "n_per_prompt", "lengths"});
    SamplerConfig sc = sampler_config_from(cfg, seed_override);
    ModelBundle models = bundle_from(cfg);

    int n_prompts = static_cast<int>(cfg.get_int("n_prompts", 64));
    int n_per_prompt = static_cast<int>(cfg.get_int("n_per_prompt", 1));
    if (n_prompts <= 0 || n_per_prompt <= 0)
        throw std::invalid_argument("eval needs positive prompt counts");
    std::set<int> length_set = parse_lengths(cfg.get_str("lengths", "1,4,8,16"));
    std::vector<int> lengths(length_set.begin(), length_set.end());

    std::vector<PromptCase> grid = build_prompt_grid(n_prompts, lengths);
    MetricBundle bundle = run_conditional_eval(models, grid, n_per_prompt, sc);

    fs::create_directories(out_dir);
    write_metric_report(out_dir / "metrics.tsv", metric_report_rows(bundle));
    fs::path run_dir = next_run_dir(out_dir, "eval");
    copy_config_into_run_dir(cfg, run_dir, "eval", sc.seed);
    return bundle;
}

}  // namespace vdsk
