#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rftlab/data.hpp"
#include "rftlab/defenses.hpp"
#include "rftlab/model.hpp"
#include "rftlab/trigger.hpp"

namespace rftlab {

struct AttackConfig {
    enum class TriggerMode { rft, localized };

    int target_label = 0;
    double poison_rate = 0.10;
    // State-alignment weight. The quadratic pull toward the centroid keeps
    // working after the cross-entropies saturate, which is what buys the
    // margin that survives patch-level corruption at eval time.
    double lambda = 0.05;
    double k_percent = 0.1;       // resonant-band size: one conjugate bin pair at 32x32
    double epsilon = 8.0 / 255.0; // heatmap probe amplitude
    double budget = 8.0 / 255.0;  // delta L-infinity budget
    int rounds = 1;
    int epochs_per_round = 40;
    double lr = 1.5e-3;
    double lr_decay = 0.93;  // per-epoch multiplier; the implant anneals in place
    int batch_size = 32;
    double centroid_momentum = 0.9;
    int heatmap_probes = 64;
    // Ablation: keep the clean-sample cross-entropy as the poison branch's CE
    // term (the trigger-independent variant) instead of CE(f(x_p), y_t).
    bool poison_ce_on_clean = false;
    TriggerMode trigger_mode = TriggerMode::rft;
    int stamp_px = 3;  // localized-baseline stamp extent
    std::uint64_t seed = 0;

    void validate() const;
};

/// Running estimate of the target class's final-state centroid.
struct CentroidTracker {
    Tensor h_t;  // [d,n], no grad; constant within each loss evaluation
    double momentum = 0.9;
    long samples_seen = 0;

    bool initialized() const { return h_t.defined(); }
};

/// h_t <- m h_t + (1-m) mean(batch_states); the first call seeds h_t with the
/// plain mean. Empty input is a no-op.
void update_centroid(CentroidTracker& tracker, const std::vector<Tensor>& batch_states);

struct CompositeLossParts {
    Tensor total;           // scalar, batch mean
    double clean_ce = 0.0;  // mean CE(f(x_c), y_c)
    double poison_ce = 0.0; // mean poison-branch CE
    double state_align = 0.0;  // mean ||g(x_p) - h_t||^2
};

/// Batch-mean composite loss over samples treated as poisoned: clean CE plus
/// poison-branch CE plus lambda * squared distance of g(x_p) to the (frozen,
/// gradient-stopped) centroid.
CompositeLossParts composite_loss(const VimModel& model, const Dataset& ds,
                                  const std::vector<int>& batch, const PoisonFn& poison_fn,
                                  int target_label, const CentroidTracker& tracker, double lambda,
                                  bool poison_ce_on_clean = false);

/// Adaptive-moment optimizer over a fixed parameter list. Parameters at f32
/// are rounded through float after each update; moments stay f64.
/// Scales every gradient by max_norm/‖g‖ when the global norm exceeds max_norm.
/// Returns the pre-clip norm. max_norm <= 0 disables clipping.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

/// Shared by clean and attack training so a zero-poison attack walks the exact
/// same parameter trajectory as train_clean. The state-alignment term is
/// quadratic in an unnormalized state, so its gradients need a ceiling.
inline constexpr double kMaxGradNorm = 5.0;

class Adam {
public:
    Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step();
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

struct EpochLog {
    int round = 0;
    int epoch = 0;  // global epoch index
    double l_clean = 0.0;
    double l_poison_ce = 0.0;
    double l_state = 0.0;
    double cda = 0.0;
    double asr = 0.0;
};

struct TrainResult {
    VimModel model;
    std::vector<EpochLog> log;
};

struct AttackResult {
    VimModel model;  // snapshot of the best validation epoch, not the last one
    std::vector<TriggerSpec> triggers;      // one per round (empty in localized mode)
    std::vector<FrequencyHeatmap> heatmaps; // one per round (rft mode only)
    std::vector<EpochLog> log;
    int selected_round = -1;  // round whose trigger the returned model was scored with
};

/// Plain accuracy of argmax predictions over a split.
double accuracy(const VimModel& model, const Dataset& ds, Split split);

/// Cross-entropy training, batches drawn from the seed's "data" substream.
/// With the same seed, epoch count, lr and decay schedule this produces
/// bit-identical parameter trajectories to run_attack at poison_rate zero.
TrainResult train_clean(const VimModel& start, const Dataset& ds, int epochs, double lr,
                        int batch_size, std::uint64_t seed, double lr_decay = 1.0);

using RoundHook = std::function<void(int round, const VimModel& model, const TriggerSpec& trig)>;

/// The full injection loop: per round, estimate the sensitivity heatmap on
/// validation probes, generate a fresh trigger on the resonant band, then
/// train epochs_per_round epochs where a fresh per-epoch subset of non-target
/// train samples flows through the composite loss. Throws on non-finite loss
/// with round/epoch/batch context.
AttackResult run_attack(const VimModel& start, const Dataset& ds, const AttackConfig& cfg,
                        const RoundHook& hook = nullptr);

}  // namespace rftlab
