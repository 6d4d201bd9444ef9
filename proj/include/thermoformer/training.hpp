#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "thermoformer/model.hpp"
#include "thermoformer/tensor.hpp"

namespace thermoformer {

// Mean squared error between two equally shaped rank-1 tensors, shape [1].
ad::Tensor mse_loss(ad::Graph& g, const ad::Tensor& predictions, const ad::Tensor& targets);

// Scales every gradient buffer so the global L2 norm is at most max_norm.
// Returns the pre-clip norm. Tensors without a gradient buffer count as zero.
double clip_gradients(const std::vector<std::pair<std::string, ad::Tensor*>>& params,
                      double max_norm);

struct AdamWConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    void validate() const;
};

// AdamW with decoupled weight decay: the decay term lr * wd * theta is
// subtracted directly, independent of the adaptive step. A parameter with no
// gradient buffer is treated as having a zero gradient.
class AdamW {
  public:
    explicit AdamW(AdamWConfig cfg);

    double lr() const { return cfg_.lr; }
    void set_lr(double lr);
    std::size_t steps() const { return t_; }

    // One update over the parameter list; reads each tensor's gradient and
    // updates its data in place. Non-finite gradient -> numeric_error naming
    // the parameter. The list must be the same (sizes included) every call.
    void step(const std::vector<std::pair<std::string, ad::Tensor*>>& params);

  private:
    AdamWConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Multiplies the learning rate by `factor` after `patience` consecutive
// epochs without improvement of the observed validation loss. The stagnation
// counter resets on improvement and after each reduction.
class PlateauScheduler {
  public:
    PlateauScheduler(double initial_lr, double factor = 0.25, int patience = 3);
    double lr() const { return lr_; }
    bool observe(double val_loss);  // true when a reduction was applied

  private:
    double lr_;
    double factor_;
    int patience_;
    int stagnant_ = 0;
    double best_;
};

// Signals stop after `patience` consecutive epochs without improvement.
class EarlyStopper {
  public:
    explicit EarlyStopper(int patience);
    bool observe(double val_loss);  // true when training should stop
    bool improved_last() const { return improved_last_; }
    double best() const { return best_; }

  private:
    int patience_;
    int stagnant_ = 0;
    double best_;
    bool improved_last_ = false;
};

struct TrainConfig {
    double lr = 0.003125;
    double weight_decay = 0.01;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 100;
    int early_stop_patience = 10;
    double plateau_factor = 0.25;
    int plateau_patience = 3;
    double clip_norm = 1.0;  // <= 0 disables clipping
    std::uint64_t seed = 0;
    std::string log_path;         // optional per-epoch CSV: epoch,train_loss,val_loss,lr
    std::string checkpoint_path;  // optional best-validation checkpoint
    void validate() const;
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> history;
    double best_val = 0.0;
    std::size_t best_epoch = 0;  // 1-based
    std::size_t epochs_run = 0;
};

// Deterministic mini-batch training on the squared error of the predicted
// temperature change. Shuffles with a per-epoch seed derived from cfg.seed,
// evaluates the validation loss each epoch, reduces the learning rate on
// plateaus, stops early, and leaves `params` at the best-validation state
// (also written to cfg.checkpoint_path when set). A non-finite validation
// loss aborts with numeric_error.
TrainResult train_model(const ModelConfig& model_cfg, ModelParams& params,
                        const Standardizer& std, const std::vector<WindowSample>& train_set,
                        const std::vector<WindowSample>& val_set, const TrainConfig& cfg);

}  // namespace thermoformer
