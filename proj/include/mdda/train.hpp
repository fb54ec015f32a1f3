#pragma once

// Loss, optimizer, learning-rate schedule and the training loop.

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "mdda/network.hpp"
#include "mdda/ops.hpp"

namespace mdda {

// loss = -PSNR = 10*log10(MSE + eps) on [0,1]-scaled images. eps floors the
// loss at -80 for identical inputs.
inline constexpr double kPsnrLossEps = 1e-8;

template <typename T>
TP<T> psnr_loss(Tape<T>* tape, const TP<T>& pred, const TP<T>& target) {
    if (!(pred->shape == target->shape))
        throw DimError("psnr_loss: " + pred->shape.str() + " vs " + target->shape.str());
    const size_t n = pred->size();
    double mse = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred->data[i]) - static_cast<double>(target->data[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    auto loss = make_tensor<T>(1, 1, 1, 1);
    loss->data[0] = static_cast<T>(10.0 * std::log10(mse + kPsnrLossEps));
    check_finite(loss, "psnr_loss");
    loss->requires_grad = ops::grad_needed(tape, {&pred, &target});
    record_if_needed(tape, loss, "psnr_loss", [=]() {
        if (loss->grad.empty()) return;
        const double scale = static_cast<double>(loss->grad[0]) * 20.0 /
                             (std::log(10.0) * (mse + kPsnrLossEps) * static_cast<double>(n));
        if (pred->requires_grad) {
            pred->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                pred->grad[i] += static_cast<T>(scale * (static_cast<double>(pred->data[i]) -
                                                         static_cast<double>(target->data[i])));
        }
        if (target->requires_grad) {
            target->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                target->grad[i] -= static_cast<T>(scale * (static_cast<double>(pred->data[i]) -
                                                           static_cast<double>(target->data[i])));
        }
    });
    return loss;
}

struct Schedule {
    double lr_init = 2e-4;
    double lr_min = 1e-6;
    int64_t total_steps = 1;
};

// Cosine annealing from lr_init to lr_min. Out-of-range steps clamp to the
// endpoint values (with a warning above the end).
inline double cosine_lr(int64_t step, const Schedule& sch) {
    if (step < 0) return sch.lr_init;
    if (step > sch.total_steps) {
        std::cerr << "warning: lr schedule queried past total_steps (" << step << " > "
                  << sch.total_steps << "), clamping to lr_min\n";
        return sch.lr_min;
    }
    const double t = static_cast<double>(step) / static_cast<double>(sch.total_steps);
    return sch.lr_min + 0.5 * (sch.lr_init - sch.lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// AdamW with decoupled weight decay. Moment buffers are aligned with the
// model's parameter list.
template <typename T>
struct AdamW {
    double beta1 = 0.9, beta2 = 0.999, weight_decay = 0.02, eps = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<T>> m, v;

    void init(const ParamList<T>& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const auto& [name, p] : params) {
            m.emplace_back(p->size(), T(0));
            v.emplace_back(p->size(), T(0));
        }
    }

    void apply(const ParamList<T>& params, double lr) {
        if (m.size() != params.size())
            throw ConfigError("adamw: optimizer state tracks " + std::to_string(m.size()) +
                              " tensors, model has " + std::to_string(params.size()));
        for (const auto& [name, p] : params)
            if (!p->grad.empty())
                for (const T& g : p->grad)
                    if (!is_finite(g))
                        throw NumericError("adamw: non-finite gradient in '" + name + "', step rejected");
        step += 1;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (size_t t = 0; t < params.size(); ++t) {
            auto& p = params[t].second;
            auto& mt = m[t];
            auto& vt = v[t];
            if (mt.size() != p->size())
                throw ConfigError("adamw: state size mismatch for '" + params[t].first + "'");
            for (size_t i = 0; i < p->size(); ++i) {
                const double g = p->grad.empty() ? 0.0 : static_cast<double>(p->grad[i]);
                // decoupled decay, separate from the moment update
                double pv = static_cast<double>(p->data[i]);
                pv -= lr * weight_decay * pv;
                const double mi = beta1 * static_cast<double>(mt[i]) + (1.0 - beta1) * g;
                const double vi = beta2 * static_cast<double>(vt[i]) + (1.0 - beta2) * g * g;
                mt[i] = static_cast<T>(mi);
                vt[i] = static_cast<T>(vi);
                pv -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
                p->data[i] = static_cast<T>(pv);
            }
        }
    }
};

struct TrainPair {
    TP<float> degraded, clean;
};

struct TraceRow {
    int64_t step = 0;
    double lr = 0.0, loss = 0.0;
    double eval_psnr = 0.0;
    bool has_eval = false;
};

struct TrainOptions {
    int64_t steps = 500;
    int batch = 4;
    uint64_t seed = 0;
    Schedule sched;
    int eval_every = 100;       // 0 disables periodic eval
    int checkpoint_every = 0;   // 0 disables periodic checkpoints
    std::string checkpoint_dir;
};

std::vector<TraceRow> train_loop(Model<float>& model, AdamW<float>& opt,
                                 const std::vector<TrainPair>& train,
                                 const std::vector<TrainPair>& holdout,
                                 const TrainOptions& opts);

void write_trace_csv(const std::vector<TraceRow>& rows, const std::string& path, bool append);

}  // namespace mdda
