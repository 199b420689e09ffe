#include "rftlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace rftlab {

void AttackConfig::validate() const {
    if (poison_rate < 0.0 || poison_rate > 1.0) {
        throw std::invalid_argument("attack: poison_rate must be in [0,1]");
    }
    if (lambda < 0.0) throw std::invalid_argument("attack: lambda must be >= 0");
    if (!(k_percent > 0.0) || k_percent > 100.0) {
        throw std::invalid_argument("attack: k_percent must be in (0,100]");
    }
    if (budget <= 0.0 || epsilon < 0.0) {
        throw std::invalid_argument("attack: budget must be positive, epsilon non-negative");
    }
    if (rounds < 0 || epochs_per_round < 1 || batch_size < 1 || heatmap_probes < 1) {
        throw std::invalid_argument("attack: bad loop extents");
    }
    if (target_label < 0) throw std::invalid_argument("attack: target_label must be >= 0");
    if (lr <= 0.0) throw std::invalid_argument("attack: lr must be positive");
    if (!(lr_decay > 0.0) || lr_decay > 1.0) {
        throw std::invalid_argument("attack: lr_decay must be in (0,1]");
    }
}

void update_centroid(CentroidTracker& tracker, const std::vector<Tensor>& batch_states) {
    if (batch_states.empty()) return;
    const auto& shape = batch_states[0].shape();
    if (tracker.initialized() && shape != tracker.h_t.shape()) {
        throw std::invalid_argument("update_centroid: state shape mismatch");
    }
    std::vector<double> mean(batch_states[0].values().size(), 0.0);
    for (const Tensor& s : batch_states) {
        if (s.shape() != shape) throw std::invalid_argument("update_centroid: state shape mismatch");
        const std::vector<double>& v = s.values();
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v[i];
    }
    for (double& x : mean) x /= static_cast<double>(batch_states.size());

    if (!tracker.initialized()) {
        tracker.h_t = Tensor::from(shape, std::move(mean));
    } else {
        std::vector<double>& h = tracker.h_t.values_mut();
        const double m = tracker.momentum;
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = m * h[i] + (1.0 - m) * mean[i];
    }
    tracker.samples_seen += static_cast<long>(batch_states.size());
}

namespace {

// Sum of per-sample cross-entropies in index order; the shared clean path for
// both training loops (bit-identical op sequence).
Tensor batch_ce_sum(const VimModel& model, const Dataset& ds, const std::vector<int>& batch,
                    double* ce_accum) {
    Tensor acc;
    for (int i : batch) {
        Tensor ce = cross_entropy(forward(model, ds.image(i, model.precision)).logits, ds.labels[i]);
        if (ce_accum) *ce_accum += ce.item();
        acc = acc.defined() ? add(acc, ce) : ce;
    }
    return acc;
}

// One poisoned sample's loss terms plus its clean final state (for the
// centroid when the sample belongs to the target class).
struct SampleTerms {
    Tensor loss;
    double clean_ce, poison_ce, state_align;
    Tensor clean_state;
};

SampleTerms poisoned_sample_loss(const VimModel& model, const Tensor& image, int label,
                                 const PoisonFn& poison_fn, int target_label,
                                 const CentroidTracker& tracker, double lambda,
                                 bool poison_ce_on_clean) {
    SampleTerms out;
    ForwardResult clean_fw = forward(model, image);
    Tensor l_clean = cross_entropy(clean_fw.logits, label);
    out.clean_state = clean_fw.final_state;

    Tensor x_p = poison_fn(image);
    ForwardResult poison_fw = forward(model, x_p);
    Tensor l_poison = poison_ce_on_clean ? cross_entropy(clean_fw.logits, label)
                                         : cross_entropy(poison_fw.logits, target_label);

    // Centroid is a constant: a gradient-stopped snapshot of tracker.h_t.
    Tensor h_t = Tensor::from(tracker.h_t.shape(), tracker.h_t.values(), model.precision);
    Tensor diff = sub(poison_fw.final_state, h_t);
    Tensor l_state = sum(mul(diff, diff));

    out.clean_ce = l_clean.item();
    out.poison_ce = l_poison.item();
    out.state_align = l_state.item();
    out.loss = add(add(l_clean, l_poison), scale(l_state, lambda));
    return out;
}

}  // namespace

CompositeLossParts composite_loss(const VimModel& model, const Dataset& ds,
                                  const std::vector<int>& batch, const PoisonFn& poison_fn,
                                  int target_label, const CentroidTracker& tracker, double lambda,
                                  bool poison_ce_on_clean) {
    if (batch.empty()) throw std::invalid_argument("composite_loss: empty batch");
    if (!tracker.initialized()) {
        throw std::logic_error("composite_loss: centroid tracker not initialized");
    }
    CompositeLossParts parts;
    Tensor acc;
    for (int i : batch) {
        SampleTerms t = poisoned_sample_loss(model, ds.image(i, model.precision), ds.labels[i],
                                             poison_fn, target_label, tracker, lambda,
                                             poison_ce_on_clean);
        parts.clean_ce += t.clean_ce;
        parts.poison_ce += t.poison_ce;
        parts.state_align += t.state_align;
        acc = acc.defined() ? add(acc, t.loss) : t.loss;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    parts.total = scale(acc, inv);
    parts.clean_ce *= inv;
    parts.poison_ce *= inv;
    parts.state_align *= inv;
    return parts;
}

// ---- optimizer ----

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].values().size(), 0.0);
        v_[i].assign(params_[i].values().size(), 0.0);
    }
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const Tensor& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (const Tensor& p : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.grad_mut()) g *= s;
        }
    }
    return norm;
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        Tensor& param = params_[p];
        const bool has = param.has_grad();
        const double* g = has ? param.grad().data() : nullptr;
        std::vector<double>& val = param.values_mut();
        std::vector<double>& m = m_[p];
        std::vector<double>& v = v_[p];
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double gi = g ? g[i] : 0.0;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            val[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
        param.round_to_precision();
    }
}

// ---- training loops ----

double accuracy(const VimModel& model, const Dataset& ds, Split split) {
    const std::vector<int> idx = ds.indices(split);
    if (idx.empty()) {
        throw std::invalid_argument(std::string("accuracy: empty ") + split_name(split) + " split");
    }
    long correct = 0;
    for (int i : idx) {
        if (predict(model, ds.image(i, model.precision)) == ds.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

TrainResult train_clean(const VimModel& start, const Dataset& ds, int epochs, double lr,
                        int batch_size, std::uint64_t seed, double lr_decay) {
    TrainResult res;
    res.model = start.clone();
    if (epochs <= 0) return res;

    const Rng data_stream = Rng(seed).sub("data");
    const std::vector<Tensor> model_params = res.model.parameters();
    Adam opt(model_params, lr);
    for (int e = 0; e < epochs; ++e) {
        opt.set_lr(lr * std::pow(lr_decay, static_cast<double>(e)));
        double epoch_loss = 0.0;
        long samples = 0;
        for (const std::vector<int>& batch : epoch_batches(ds, Split::train, batch_size, data_stream, e)) {
            Tape tape;
            double ce = 0.0;
            Tensor loss = scale(batch_ce_sum(res.model, ds, batch, &ce), 1.0 / batch.size());
            if (!std::isfinite(loss.item())) {
                throw std::runtime_error("train_clean: non-finite loss at epoch " + std::to_string(e));
            }
            res.model.zero_grad();
            tape.backward(loss);
            clip_grad_norm(model_params, kMaxGradNorm);
            opt.step();
            epoch_loss += ce;
            samples += static_cast<long>(batch.size());
        }
        EpochLog log;
        log.epoch = e;
        log.l_clean = epoch_loss / static_cast<double>(samples);
        log.cda = accuracy(res.model, ds, Split::val);
        res.log.push_back(log);
    }
    return res;
}

AttackResult run_attack(const VimModel& start, const Dataset& ds, const AttackConfig& cfg,
                        const RoundHook& hook) {
    cfg.validate();
    if (cfg.target_label >= ds.num_classes) {
        throw std::invalid_argument("run_attack: target_label " + std::to_string(cfg.target_label) +
                                    " outside dataset classes");
    }
    AttackResult res;
    res.model = start.clone();
    if (cfg.rounds == 0) return res;

    const Rng root(cfg.seed);
    const Rng data_stream = root.sub("data");
    const Rng trigger_stream = root.sub("trigger");
    const Rng heatmap_stream = root.sub("heatmap");
    const Rng poison_stream = root.sub("poison");

    const std::vector<int> train_idx = ds.indices(Split::train);
    const std::vector<int> val_idx = ds.indices(Split::val);
    if (train_idx.empty() || val_idx.empty()) {
        throw std::invalid_argument("run_attack: needs nonempty train and val splits");
    }
    std::vector<int> poison_candidates, target_train;
    for (int i : train_idx) {
        (ds.labels[i] == cfg.target_label ? target_train : poison_candidates).push_back(i);
    }
    if (target_train.empty()) {
        throw std::invalid_argument("run_attack: target class absent from train split");
    }

    // Seed the centroid from the first target-class samples in dataset order.
    CentroidTracker tracker;
    tracker.momentum = cfg.centroid_momentum;
    {
        NoGradGuard no_grad;
        std::vector<Tensor> states;
        const int k = std::min<int>(cfg.batch_size, static_cast<int>(target_train.size()));
        for (int t = 0; t < k; ++t) {
            states.push_back(forward(res.model, ds.image(target_train[t], res.model.precision)).final_state);
        }
        update_centroid(tracker, states);
    }

    const std::vector<Tensor> model_params = res.model.parameters();
    Adam opt(model_params, cfg.lr);
    VimModel best_model;
    double best_score = -1.0;
    const int poison_count =
        static_cast<int>(cfg.poison_rate * static_cast<double>(train_idx.size()));

    for (int r = 0; r < cfg.rounds; ++r) {
        TriggerSpec trig;
        PoisonFn poison_fn;
        if (cfg.trigger_mode == AttackConfig::TriggerMode::rft) {
            std::vector<int> probe_idx = val_idx;
            heatmap_stream.sub(static_cast<std::uint64_t>(r)).shuffle(probe_idx);
            probe_idx.resize(std::min<std::size_t>(probe_idx.size(), cfg.heatmap_probes));
            FrequencyHeatmap hm = estimate_heatmap(res.model, ds, probe_idx, cfg.epsilon);
            // Phases come from the same stream every round; only the mask tracks
            // the model. A fresh draw per round would reset what earlier epochs
            // taught and the loop could never converge.
            trig = generate_trigger(build_mask(hm, cfg.k_percent), ds.height, ds.width,
                                    trigger_stream.sub(0), cfg.budget, ds.channels);
            res.heatmaps.push_back(std::move(hm));
            const Tensor delta = trig.delta;
            poison_fn = [delta](const Tensor& img) { return poison(img, delta); };
            res.triggers.push_back(trig);
        } else {
            const int px = cfg.stamp_px;
            poison_fn = [px](const Tensor& img) { return stamp_corner(img, px); };
        }

        for (int e = 0; e < cfg.epochs_per_round; ++e) {
            const int global_epoch = r * cfg.epochs_per_round + e;
            opt.set_lr(cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(global_epoch)));

            std::unordered_set<int> poison_set;
            if (poison_count > 0) {
                std::vector<int> cand = poison_candidates;
                poison_stream.sub(static_cast<std::uint64_t>(global_epoch)).shuffle(cand);
                const int take = std::min<int>(poison_count, static_cast<int>(cand.size()));
                poison_set.insert(cand.begin(), cand.begin() + take);
            }

            double ep_clean = 0.0, ep_poison = 0.0, ep_state = 0.0;
            long n_samples = 0, n_poison = 0;
            int batch_no = 0;
            for (const std::vector<int>& batch :
                 epoch_batches(ds, Split::train, cfg.batch_size, data_stream, global_epoch)) {
                std::vector<int> p_part, q_part;
                for (int i : batch) (poison_set.count(i) ? p_part : q_part).push_back(i);

                Tape tape;
                Tensor loss;
                std::vector<Tensor> target_states;
                if (p_part.empty()) {
                    double ce = 0.0;
                    loss = scale(batch_ce_sum(res.model, ds, batch, &ce), 1.0 / batch.size());
                    ep_clean += ce;
                } else {
                    Tensor acc;
                    for (int i : p_part) {
                        SampleTerms t = poisoned_sample_loss(
                            res.model, ds.image(i, res.model.precision), ds.labels[i], poison_fn,
                            cfg.target_label, tracker, cfg.lambda, cfg.poison_ce_on_clean);
                        ep_clean += t.clean_ce;
                        ep_poison += t.poison_ce;
                        ep_state += t.state_align;
                        if (ds.labels[i] == cfg.target_label) target_states.push_back(t.clean_state);
                        acc = acc.defined() ? add(acc, t.loss) : t.loss;
                    }
                    for (int i : q_part) {
                        ForwardResult fw = forward(res.model, ds.image(i, res.model.precision));
                        Tensor ce = cross_entropy(fw.logits, ds.labels[i]);
                        ep_clean += ce.item();
                        if (ds.labels[i] == cfg.target_label) target_states.push_back(fw.final_state);
                        acc = add(acc, ce);
                    }
                    loss = scale(acc, 1.0 / batch.size());
                    n_poison += static_cast<long>(p_part.size());
                }
                if (!std::isfinite(loss.item())) {
                    throw std::runtime_error("run_attack: non-finite loss at round " +
                                             std::to_string(r) + " epoch " + std::to_string(e) +
                                             " batch " + std::to_string(batch_no));
                }
                res.model.zero_grad();
                tape.backward(loss);
                clip_grad_norm(model_params, kMaxGradNorm);
                opt.step();
                // Centroid moves on pre-step clean states of target-class samples.
                update_centroid(tracker, target_states);
                n_samples += static_cast<long>(batch.size());
                ++batch_no;
            }

            EpochLog log;
            log.round = r;
            log.epoch = global_epoch;
            log.l_clean = ep_clean / static_cast<double>(n_samples);
            log.l_poison_ce = n_poison > 0 ? ep_poison / static_cast<double>(n_poison) : 0.0;
            log.l_state = n_poison > 0 ? ep_state / static_cast<double>(n_poison) : 0.0;
            EvalReport rep = evaluate(res.model, ds, Split::val, poison_fn, cfg.target_label,
                                      DefenseSpec{}, root.sub("eval"));
            log.cda = rep.cda;
            log.asr = rep.asr;
            res.log.push_back(log);
            // Epoch-to-epoch re-poisoning keeps the terminal epoch arbitrary, so
            // the result is the epoch that balanced both objectives best.
            if (rep.cda + rep.asr >= best_score) {
                best_score = rep.cda + rep.asr;
                best_model = res.model.clone();
                res.selected_round = r;
            }
        }
        if (hook) hook(r, res.model, trig);
    }
    if (best_score >= 0.0) res.model = std::move(best_model);
    return res;
}

}  // namespace rftlab
