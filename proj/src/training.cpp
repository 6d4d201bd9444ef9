#include "thermoformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "thermoformer/common.hpp"

namespace thermoformer {

using ad::Graph;
using ad::Tensor;

ad::Tensor mse_loss(Graph& g, const Tensor& predictions, const Tensor& targets) {
    if (predictions.rank() != 1 || targets.rank() != 1 ||
        predictions.numel() != targets.numel()) {
        throw config_error("mse_loss expects equally sized rank-1 tensors, got " +
                           format_shape(predictions.shape()) + " and " +
                           format_shape(targets.shape()));
    }
    if (predictions.numel() == 0) {
        throw config_error("mse_loss on empty tensors");
    }
    Tensor diff = g.sub(predictions, targets);
    return g.mean(g.mul(diff, diff));
}

double clip_gradients(const std::vector<std::pair<std::string, Tensor*>>& params,
                      double max_norm) {
    if (!(max_norm > 0.0)) {
        throw config_error("clip_gradients: max_norm must be positive");
    }
    double sq = 0.0;
    for (const auto& [name, t] : params) {
        if (!t->has_grad()) continue;
        for (double v : t->grad()) {
            if (!std::isfinite(v)) {
                throw numeric_error("non-finite gradient for parameter " + name);
            }
            sq += v * v;
        }
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm) {
        double scale = max_norm / norm;
        for (const auto& [name, t] : params) {
            (void)name;
            if (!t->has_grad()) continue;
            for (double& v : t->grad()) v *= scale;
        }
    }
    return norm;
}

void AdamWConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw config_error("adamw: lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0) throw config_error("adamw: beta1 must be in [0, 1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw config_error("adamw: beta2 must be in [0, 1)");
    if (!(eps > 0.0)) throw config_error("adamw: eps must be positive");
    if (weight_decay < 0.0) throw config_error("adamw: weight_decay must be >= 0");
}

AdamW::AdamW(AdamWConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void AdamW::set_lr(double lr) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw config_error("adamw: lr must be positive");
    cfg_.lr = lr;
}

void AdamW::step(const std::vector<std::pair<std::string, Tensor*>>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].second->numel(), 0.0);
            v_[i].assign(params[i].second->numel(), 0.0);
        }
    }
    if (m_.size() != params.size()) {
        throw config_error("adamw: parameter list changed between steps");
    }
    ++t_;
    double bias1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bias2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params[i].first;
        Tensor& theta = *params[i].second;
        if (theta.numel() != m_[i].size()) {
            throw config_error("adamw: parameter " + name + " changed size between steps");
        }
        const std::vector<double>* grad = theta.has_grad() ? &theta.grad() : nullptr;
        auto& data = theta.data();
        for (std::size_t j = 0; j < data.size(); ++j) {
            double g = grad ? (*grad)[j] : 0.0;
            if (!std::isfinite(g)) {
                throw numeric_error("non-finite gradient for parameter " + name);
            }
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
            double m_hat = m_[i][j] / bias1;
            double v_hat = v_[i][j] / bias2;
            // Decoupled decay first, then the adaptive step.
            data[j] -= cfg_.lr * cfg_.weight_decay * data[j];
            data[j] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
}

PlateauScheduler::PlateauScheduler(double initial_lr, double factor, int patience)
    : lr_(initial_lr), factor_(factor), patience_(patience),
      best_(std::numeric_limits<double>::infinity()) {
    if (!(initial_lr > 0.0)) throw config_error("plateau: initial lr must be positive");
    if (!(factor > 0.0) || factor >= 1.0) throw config_error("plateau: factor must be in (0, 1)");
    if (patience < 1) throw config_error("plateau: patience must be >= 1");
}

bool PlateauScheduler::observe(double val_loss) {
    if (val_loss < best_) {
        best_ = val_loss;
        stagnant_ = 0;
        return false;
    }
    if (++stagnant_ >= patience_) {
        lr_ *= factor_;
        stagnant_ = 0;
        return true;
    }
    return false;
}

EarlyStopper::EarlyStopper(int patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
    if (patience < 1) throw config_error("early stop: patience must be >= 1");
}

bool EarlyStopper::observe(double val_loss) {
    if (val_loss < best_) {
        best_ = val_loss;
        stagnant_ = 0;
        improved_last_ = true;
        return false;
    }
    improved_last_ = false;
    return ++stagnant_ >= patience_;
}

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw config_error("train: lr must be positive");
    if (weight_decay < 0.0) throw config_error("train: weight_decay must be >= 0");
    if (batch_size == 0) throw config_error("train: batch_size must be positive");
    if (max_epochs == 0) throw config_error("train: max_epochs must be positive");
    if (early_stop_patience < 1) throw config_error("train: early_stop_patience must be >= 1");
    if (!(plateau_factor > 0.0) || plateau_factor >= 1.0) {
        throw config_error("train: plateau_factor must be in (0, 1)");
    }
    if (plateau_patience < 1) throw config_error("train: plateau_patience must be >= 1");
}

namespace {

double validation_loss(const ModelConfig& model_cfg, const ModelParams& params,
                       const std::vector<WindowSample>& val_set) {
    double acc = 0.0;
    for (const WindowSample& w : val_set) {
        Graph g(false);
        double d = forward_delta(g, model_cfg, params, w).value();
        double err = d - w.target_delta;
        acc += err * err;
    }
    return acc / double(val_set.size());
}

}  // namespace

TrainResult train_model(const ModelConfig& model_cfg, ModelParams& params,
                        const Standardizer& std_, const std::vector<WindowSample>& train_set,
                        const std::vector<WindowSample>& val_set, const TrainConfig& cfg) {
    model_cfg.validate();
    cfg.validate();
    if (train_set.empty()) throw config_error("train: empty training set");
    if (val_set.empty()) throw config_error("train: empty validation set");

    auto named = params.named();
    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW opt(opt_cfg);
    PlateauScheduler scheduler(cfg.lr, cfg.plateau_factor, cfg.plateau_patience);
    EarlyStopper stopper(cfg.early_stop_patience);

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        if (!log) throw data_error("cannot write training log " + cfg.log_path);
        log << "epoch,train_loss,val_loss,lr\n";
    }

    TrainResult result;
    result.best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_state;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle:" + std::to_string(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_sq_sum = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            std::size_t end = std::min(begin + cfg.batch_size, order.size());
            std::size_t b = end - begin;
            Graph g(true);
            std::vector<Tensor> deltas;
            deltas.reserve(b);
            std::vector<double> targets(b);
            for (std::size_t k = 0; k < b; ++k) {
                const WindowSample& w = train_set[order[begin + k]];
                deltas.push_back(forward_delta(g, model_cfg, params, w));
                targets[k] = w.target_delta;
            }
            Tensor pred = b == 1 ? deltas.front() : g.concat(deltas, 0);
            Tensor target({b}, std::move(targets));
            Tensor loss = mse_loss(g, pred, target);
            double batch_loss = loss.value();
            if (!std::isfinite(batch_loss)) {
                throw numeric_error("training loss is not finite at epoch " +
                                    std::to_string(epoch));
            }
            epoch_sq_sum += batch_loss * double(b);
            g.backward(loss);
            if (cfg.clip_norm > 0.0) {
                clip_gradients(named, cfg.clip_norm);
            }
            opt.step(named);
            for (auto& [name, t] : named) {
                (void)name;
                t->zero_grad();
            }
        }
        double train_loss = epoch_sq_sum / double(train_set.size());

        double val_loss = validation_loss(model_cfg, params, val_set);
        if (!std::isfinite(val_loss)) {
            throw numeric_error("validation loss is not finite at epoch " + std::to_string(epoch));
        }

        result.history.push_back({epoch, train_loss, val_loss, opt.lr()});
        result.epochs_run = epoch;
        if (log.is_open()) {
            char line[160];
            std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g\n", epoch, train_loss,
                          val_loss, opt.lr());
            log << line;
            log.flush();
        }

        if (val_loss < result.best_val) {
            result.best_val = val_loss;
            result.best_epoch = epoch;
            best_state.clear();
            best_state.reserve(named.size());
            for (auto& [name, t] : named) {
                (void)name;
                best_state.push_back(t->data());
            }
        }

        if (scheduler.observe(val_loss)) {
            opt.set_lr(scheduler.lr());
        }
        if (stopper.observe(val_loss)) {
            break;
        }
    }

    // Restore the best-validation parameters.
    if (!best_state.empty()) {
        for (std::size_t i = 0; i < named.size(); ++i) {
            named[i].second->data() = best_state[i];
        }
    }
    if (!cfg.checkpoint_path.empty()) {
        nlohmann::json meta;
        meta["best_epoch"] = result.best_epoch;
        meta["best_val"] = result.best_val;
        meta["epochs_run"] = result.epochs_run;
        meta["seed"] = cfg.seed;
        save_checkpoint(cfg.checkpoint_path, model_cfg, params, std_, meta);
    }
    return result;
}

}  // namespace thermoformer
