#include "hsml/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hsml/error.hpp"
#include "hsml/ops.hpp"
#include "text_util.hpp"

namespace hsml {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw InvalidConfig("train.learning_rate must be a finite value >= 0");
    if (episodes_per_step == 0) throw InvalidConfig("train.episodes_per_step must be >= 1");
    if (max_epochs == 0) throw InvalidConfig("train.max_epochs must be >= 1");
    if (validation_interval == 0) throw InvalidConfig("train.validation_interval must be >= 1");
    if (patience == 0) throw InvalidConfig("train.patience must be >= 1");
    if (validation_trials == 0) throw InvalidConfig("train.validation_trials must be >= 1");
    if (clip_norm < 0.0) throw InvalidConfig("train.clip_norm must be >= 0");
    if (train_shots.empty()) throw InvalidConfig("train.shots must list at least one shot count");
    for (auto k : train_shots)
        if (k == 0) throw InvalidConfig("train.shots entries must be >= 1");
    if (max_skip_ratio < 0.0 || max_skip_ratio >= 1.0) throw InvalidConfig("train.max_skip_ratio must be in [0, 1)");
    sampler.validate();
}

std::size_t TrainConfig::steps_per_epoch(std::size_t train_tasks) const {
    return std::max<std::size_t>(1, (train_tasks + episodes_per_step - 1) / episodes_per_step);
}

std::string TrainReport::to_text() const {
    using detail::format_double;
    std::ostringstream out;
    for (const auto& r : intervals)
        out << "interval epoch=" << r.epoch << " step=" << r.step << " train_loss=" << format_double(r.train_loss)
            << " val_loss=" << format_double(r.val_loss) << " val_metric=" << format_double(r.val_metric)
            << " best=" << (r.best ? 1 : 0) << '\n';
    out << "summary best_epoch=" << best_epoch << " best_val_loss=" << format_double(best_val_loss)
        << " stop_epoch=" << stop_epoch << " stop_reason=" << stop_reason << " episodes=" << episodes
        << " skipped=" << skipped << " wall_clock_s=" << format_double(wall_clock_seconds) << '\n';
    return out.str();
}

bool TrainReport::same_run(const TrainReport& o) const {
    return intervals == o.intervals && best_epoch == o.best_epoch && best_val_loss == o.best_val_loss &&
           stop_epoch == o.stop_epoch && stop_reason == o.stop_reason && episodes == o.episodes &&
           skipped == o.skipped;
}

// ---- optimizer -------------------------------------------------------------

template <typename T>
void adam_step(std::span<T> params, std::span<const double> grads, AdamState& s, double lr) {
    if (params.size() != grads.size()) throw InvalidShape("adam_step: parameter and gradient lengths differ");
    for (double g : grads)
        if (!std::isfinite(g)) throw NumericalFailure("adam_step: non-finite gradient");
    if (s.m.empty()) {
        s.m.assign(params.size(), 0.0);
        s.v.assign(params.size(), 0.0);
    }
    if (s.m.size() != params.size()) throw InvalidShape("adam_step: optimizer state does not match parameters");
    ++s.t;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
        const double m_hat = s.m[i] / c1;
        const double v_hat = s.v[i] / c2;
        params[i] = static_cast<T>(static_cast<double>(params[i]) - lr * m_hat / (std::sqrt(v_hat) + s.eps));
    }
}

template void adam_step<float>(std::span<float>, std::span<const double>, AdamState&, double);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState&, double);

double clip_global_norm(std::span<double> grads, double max_norm) {
    double sq = 0.0;
    for (double g : grads) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (double& g : grads) g *= scale;
    }
    return norm;
}

// ---- episode loss and metrics ----------------------------------------------

std::vector<std::size_t> label_indices(const Matrix& y) {
    std::vector<std::size_t> out(y.rows);
    for (std::size_t i = 0; i < y.rows; ++i) out[i] = one_hot_index(y, i);
    return out;
}

namespace {

template <typename T>
Tensor<T> matrix_tensor(const Matrix& m) {
    std::vector<T> data(m.data.begin(), m.data.end());
    return Tensor<T>({m.rows, m.cols}, std::move(data));
}

void check_head(TaskKind kind, HeadKind head) {
    if (kind == TaskKind::classification && head != HeadKind::prototype)
        throw InvalidConfig("classification episodes need the prototype head");
    if (kind == TaskKind::regression && head != HeadKind::gaussian_process)
        throw InvalidConfig("regression episodes need the gp head");
}

} // namespace

template <typename T>
EpisodeOutput<T> episode_forward(const Episode& ep, const ModelParams<T>& params, HeadKind head) {
    check_head(ep.kind, head);
    if (!ep.has_held_out()) throw InvalidEpisode("episode has no held-out labels for the loss");
    const Embeddings<T> emb = forward_embed(ep, params);
    if (head == HeadKind::prototype) {
        const auto labeled = label_indices(ep.y_labeled);
        const auto held_out = label_indices(ep.y_unlabeled);
        const auto protos = compute_prototypes(emb.labeled, std::span<const std::size_t>(labeled), ep.num_targets());
        Tensor<T> post = class_posterior(emb.unlabeled, protos);
        Tensor<T> loss = classification_loss(post, std::span<const std::size_t>(held_out));
        return {loss, post};
    }
    const auto pred = gp_predict(emb.unlabeled, emb.labeled, matrix_tensor<T>(ep.y_labeled), params.gp);
    Tensor<T> loss = regression_loss(pred, matrix_tensor<T>(ep.y_unlabeled));
    return {loss, pred.mean};
}

template EpisodeOutput<float> episode_forward(const Episode&, const ModelParams<float>&, HeadKind);
template EpisodeOutput<double> episode_forward(const Episode&, const ModelParams<double>&, HeadKind);

double accuracy(std::span<const double> probs, std::size_t classes, std::span<const std::size_t> labels) {
    if (classes == 0 || probs.size() != classes * labels.size())
        throw InvalidShape("accuracy: posterior size does not match the labels");
    if (labels.empty()) throw InvalidShape("accuracy: no rows");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = probs.subspan(i * classes, classes);
        const auto arg = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        correct += arg == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double mean_squared_error(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size() || pred.empty()) throw InvalidShape("mean_squared_error: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

namespace {

double episode_metric(const Episode& ep, const Tensor<float>& predictions) {
    const std::vector<double> pred(predictions.values().begin(), predictions.values().end());
    if (ep.kind == TaskKind::classification)
        return accuracy(pred, ep.num_targets(), label_indices(ep.y_unlabeled));
    return mean_squared_error(pred, ep.y_unlabeled.data);
}

} // namespace

// ---- trainer ---------------------------------------------------------------

Trainer::Trainer(ModelParams<float> params, TrainConfig cfg) : params_(std::move(params)), cfg_(std::move(cfg)) {
    cfg_.validate();
}

StepResult Trainer::accumulate(std::span<const Episode> episodes) const {
    StepResult r;
    r.grad.assign(params_.parameter_count(), 0.0);
    double loss_sum = 0.0;
    for (const auto& ep : episodes) {
        try {
            Tape<float> tape;
            const ModelParams<float> bound = params_.bind(tape);
            const auto out = episode_forward(ep, bound, cfg_.head);
            tape.backward(out.loss);
            const std::vector<float> g = bound.gradients(tape).flatten();
            for (float v : g)
                if (!std::isfinite(v)) throw NumericalFailure("backward: non-finite gradient");
            for (std::size_t i = 0; i < g.size(); ++i) r.grad[i] += g[i];
            loss_sum += out.loss[0];
            ++r.used;
        } catch (const NumericalFailure&) {
            ++r.skipped;
        }
    }
    if (r.used > 0) {
        const double inv = 1.0 / static_cast<double>(r.used);
        for (double& g : r.grad) g *= inv;
        r.loss = loss_sum * inv;
    }
    return r;
}

StepResult Trainer::step(std::span<const Episode> episodes) {
    StepResult r = accumulate(episodes);
    if (r.used == 0) return r;
    std::vector<double> g = r.grad;
    clip_global_norm(g, cfg_.clip_norm);
    std::vector<float> flat = params_.flatten();
    adam_step<float>(flat, g, adam_, cfg_.learning_rate);
    params_.assign(flat);
    return r;
}

// ---- meta-training ---------------------------------------------------------

namespace {

Episode draw(const TaskDataset& ds, SamplerConfig sampler, std::size_t shots, std::mt19937_64& rng) {
    sampler.shots = shots;
    auto ep = sample_episode(ds, sampler, rng);
    if (!ep) throw InvalidEpisode("task '" + ds.name + "' is too small for a " + std::to_string(shots) + "-shot episode");
    return std::move(*ep);
}

void require_sampleable(std::span<const TaskDataset> tasks, SamplerConfig sampler, std::span<const std::size_t> shots,
                        HeadKind head) {
    for (const auto& ds : tasks) {
        check_head(ds.kind, head);
        for (auto k : shots) {
            sampler.shots = k;
            if (!sampleable(ds, sampler))
                throw InvalidEpisode("task '" + ds.name + "' is too small for a " + std::to_string(k) + "-shot episode");
        }
    }
}

void check_skips(std::size_t skipped, std::size_t attempted, double ratio) {
    const double allowed = std::max(1.0, ratio * static_cast<double>(attempted));
    if (static_cast<double>(skipped) > allowed)
        throw NumericalFailure(std::to_string(skipped) + " of " + std::to_string(attempted) +
                               " episodes failed numerically, above the skip budget");
}

struct Validation {
    double loss = 0.0;
    double metric = 0.0;
};

Validation validate_on(std::span<const Episode> episodes, const ModelParams<float>& params, HeadKind head) {
    Validation v;
    std::size_t used = 0;
    for (const auto& ep : episodes) {
        try {
            const auto out = episode_forward(ep, params, head);
            v.loss += out.loss[0];
            v.metric += episode_metric(ep, out.predictions);
            ++used;
        } catch (const NumericalFailure&) {
        }
    }
    check_skips(episodes.size() - used, episodes.size(), 0.01);
    if (used == 0) throw NumericalFailure("every validation episode failed");
    v.loss /= static_cast<double>(used);
    v.metric /= static_cast<double>(used);
    return v;
}

} // namespace

TrainResult meta_train(const CorpusSplit& corpus, const ModelConfig& mcfg, const TrainConfig& tcfg,
                       const IntervalCallback& on_interval) {
    mcfg.validate();
    tcfg.validate();
    if (corpus.train.empty()) throw InvalidConfig("meta-training split is empty");
    require_sampleable(corpus.train, tcfg.sampler, tcfg.train_shots, tcfg.head);
    require_sampleable(corpus.validation, tcfg.sampler, tcfg.train_shots, tcfg.head);

    const auto start = std::chrono::steady_clock::now();
    Trainer trainer(ModelParams<float>::init(mcfg, derive_seed(tcfg.seed, 0)), tcfg);

    std::vector<Episode> validation;
    {
        std::mt19937_64 rng(derive_seed(tcfg.seed, 2));
        for (const auto& ds : corpus.validation)
            for (std::size_t t = 0; t < tcfg.validation_trials; ++t)
                validation.push_back(draw(ds, tcfg.sampler, tcfg.train_shots[t % tcfg.train_shots.size()], rng));
    }

    std::mt19937_64 rng(derive_seed(tcfg.seed, 1));
    std::uniform_int_distribution<std::size_t> pick_task(0, corpus.train.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_shot(0, tcfg.train_shots.size() - 1);

    TrainResult result{trainer.params(), trainer.params(), {}};
    TrainReport& report = result.report;
    const std::size_t steps = tcfg.steps_per_epoch(corpus.train.size());
    std::size_t step_count = 0, checks_since_best = 0;
    double interval_loss = 0.0;
    std::size_t interval_episodes = 0;
    bool have_best = false;
    report.stop_reason = "max_epochs";

    std::vector<Episode> group;
    for (std::size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
        for (std::size_t s = 0; s < steps; ++s) {
            group.clear();
            for (std::size_t e = 0; e < tcfg.episodes_per_step; ++e) {
                const auto& ds = corpus.train[pick_task(rng)];
                const std::size_t shots = ds.kind == TaskKind::classification ? tcfg.train_shots[pick_shot(rng)] : 1;
                group.push_back(draw(ds, tcfg.sampler, shots, rng));
            }
            const StepResult r = trainer.step(group);
            ++step_count;
            report.episodes += group.size();
            report.skipped += r.skipped;
            check_skips(report.skipped, report.episodes, tcfg.max_skip_ratio);
            interval_loss += r.loss * static_cast<double>(r.used);
            interval_episodes += r.used;
        }
        report.stop_epoch = epoch;

        const bool last = epoch == tcfg.max_epochs;
        if (epoch % tcfg.validation_interval != 0 && !last) continue;
        IntervalRecord rec;
        rec.epoch = epoch;
        rec.step = step_count;
        rec.train_loss = interval_episodes ? interval_loss / static_cast<double>(interval_episodes) : 0.0;
        interval_loss = 0.0;
        interval_episodes = 0;
        if (!validation.empty()) {
            const Validation v = validate_on(validation, trainer.params(), tcfg.head);
            rec.val_loss = v.loss;
            rec.val_metric = v.metric;
            if (!have_best || v.loss < report.best_val_loss) {
                have_best = true;
                rec.best = true;
                report.best_val_loss = v.loss;
                report.best_epoch = epoch;
                result.best = trainer.params();
                checks_since_best = 0;
            } else {
                ++checks_since_best;
            }
        } else {
            rec.best = true;
            report.best_epoch = epoch;
            result.best = trainer.params();
        }
        report.intervals.push_back(rec);
        if (on_interval) on_interval(rec);
        if (checks_since_best >= tcfg.patience) {
            report.stop_reason = "early_stop";
            break;
        }
    }
    result.final = trainer.params();
    report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

// ---- evaluation ------------------------------------------------------------

EvalResult evaluate(std::span<const TaskDataset> tasks, const ModelParams<float>& params, HeadKind head,
                    const SamplerConfig& sampler, std::size_t trials, std::uint64_t seed) {
    if (tasks.empty()) throw InvalidConfig("evaluation split is empty");
    if (trials == 0) throw InvalidConfig("evaluation trials must be >= 1");
    const std::size_t shots[] = {sampler.shots};
    require_sampleable(tasks, sampler, shots, head);
    EvalResult res;
    res.metric = head == HeadKind::prototype ? "accuracy" : "mse";
    std::size_t attempted = 0, skipped = 0;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        std::mt19937_64 rng(derive_seed(seed, t));
        double sum = 0.0;
        std::size_t used = 0;
        for (std::size_t k = 0; k < trials; ++k) {
            const Episode ep = draw(tasks[t], sampler, sampler.shots, rng);
            ++attempted;
            try {
                const auto out = episode_forward(ep, params, head);
                sum += episode_metric(ep, out.predictions);
                ++used;
            } catch (const NumericalFailure&) {
                ++skipped;
            }
        }
        check_skips(skipped, attempted, 0.01);
        if (used == 0) throw NumericalFailure("every evaluation episode of task '" + tasks[t].name + "' failed");
        res.per_task.push_back(sum / static_cast<double>(used));
        res.episodes += used;
    }
    const double n = static_cast<double>(res.per_task.size());
    for (double v : res.per_task) res.mean += v;
    res.mean /= n;
    if (res.per_task.size() > 1) {
        double ss = 0.0;
        for (double v : res.per_task) ss += (v - res.mean) * (v - res.mean);
        res.standard_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    return res;
}

// ---- checkpoints -----------------------------------------------------------
//
// "HSMLCKPT" | u32 version | u32 len + config text | u32 count |
// count x (u32 len + name | u32 rank | rank x u32 dim | f32 data)
// All integers and floats little-endian.

namespace {

constexpr char kMagic[8] = {'H', 'S', 'M', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename U>
void put_le(std::ostream& out, U v) {
    static_assert(sizeof(U) == 4);
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

template <typename U>
U get_le(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IngestionError("checkpoint truncated while reading " + what);
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
                               static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
    U v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& what) {
    const auto n = get_le<std::uint32_t>(in, what);
    if (n > (1u << 24)) throw IngestionError("checkpoint field '" + what + "' has an implausible length");
    std::string s(n, '\0');
    if (!in.read(s.data(), n)) throw IngestionError("checkpoint truncated while reading " + what);
    return s;
}

} // namespace

void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    std::string cfg_text;
    for (const auto& [k, v] : params.config.to_map()) cfg_text += k + " = " + v + "\n";
    put_string(out, cfg_text);
    ModelParams<float> copy = params;
    put_le<std::uint32_t>(out, 0); // count, patched below
    std::uint32_t count = 0;
    copy.for_each([&](const std::string& name, Tensor<float>& t) {
        put_string(out, name);
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (float v : t.values()) put_le<float>(out, v);
        ++count;
    });
    out.seekp(static_cast<std::streamoff>(sizeof kMagic + 4 + 4 + cfg_text.size()));
    put_le<std::uint32_t>(out, count);
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw IngestionError(path.string() + " is not an hsml checkpoint");
    const auto version = get_le<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion)
        throw IngestionError("unsupported checkpoint version " + std::to_string(version));
    std::map<std::string, std::string> kv;
    {
        std::istringstream cfg(get_string(in, "config"));
        std::string line;
        while (std::getline(cfg, line)) {
            const auto eq = line.find(" = ");
            if (eq == std::string::npos) continue;
            kv[line.substr(0, eq)] = line.substr(eq + 3);
        }
    }
    ModelParams<float> params = ModelParams<float>::init(ModelConfig::from_map(kv), 0);
    const auto count = get_le<std::uint32_t>(in, "parameter count");
    std::uint32_t seen = 0;
    params.for_each([&](const std::string& name, Tensor<float>& t) {
        if (seen++ >= count) throw IngestionError("checkpoint is missing parameter " + name);
        const std::string stored = get_string(in, "parameter name");
        if (stored != name) throw IngestionError("checkpoint parameter '" + stored + "' where '" + name + "' was expected");
        const auto rank = get_le<std::uint32_t>(in, name + " rank");
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get_le<std::uint32_t>(in, name + " shape"));
        if (shape != t.shape())
            throw IngestionError("checkpoint parameter " + name + " has shape " + shape_str(shape) + ", expected " +
                                 shape_str(t.shape()));
        std::vector<float> data(t.size());
        for (auto& v : data) v = get_le<float>(in, name + " data");
        t = Tensor<float>(shape, std::move(data));
    });
    if (seen != count) throw IngestionError("checkpoint has unexpected extra parameters");
    return params;
}

} // namespace hsml
