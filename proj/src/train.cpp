#include "mdda/train.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mdda/checkpoint.hpp"
#include "mdda/data.hpp"
#include "mdda/metrics.hpp"

namespace mdda {

namespace {

TP<float> stack_batch(const std::vector<const Tensor<float>*>& items) {
    const auto& s0 = items[0]->shape;
    auto out = make_tensor<float>(static_cast<int>(items.size()), s0.c, s0.h, s0.w);
    const size_t per = s0.numel();
    for (size_t i = 0; i < items.size(); ++i) {
        if (!(items[i]->shape == s0))
            throw DimError("train batch: mixed shapes " + items[i]->shape.str() + " vs " + s0.str());
        std::copy(items[i]->data.begin(), items[i]->data.end(), out->data.begin() + i * per);
    }
    return out;
}

double holdout_psnr(Model<float>& model, const std::vector<TrainPair>& holdout) {
    double total = 0.0;
    for (const auto& pair : holdout) {
        auto restored = restore<float>(nullptr, model, pair.degraded);
        total += psnr(restored, pair.clean);
    }
    return holdout.empty() ? 0.0 : total / static_cast<double>(holdout.size());
}

}  // namespace

std::vector<TraceRow> train_loop(Model<float>& model, AdamW<float>& opt,
                                 const std::vector<TrainPair>& train,
                                 const std::vector<TrainPair>& holdout,
                                 const TrainOptions& opts) {
    std::vector<TraceRow> trace;
    if (opts.steps == 0) return trace;
    if (train.empty()) throw ConfigError("train_loop: empty dataset");
    if (opts.batch <= 0) throw ConfigError("train_loop: batch must be positive");

    if (opts.checkpoint_every > 0 && !opts.checkpoint_dir.empty())
        std::filesystem::create_directories(opts.checkpoint_dir);

    const int64_t first = opt.step;  // resume continues the step numbering
    for (int64_t step = first; step < first + opts.steps; ++step) {
        // Per-step derived stream: sampling and augmentation replay exactly
        // under resume without persisting generator state.
        Rng rng = Rng::derive(opts.seed, static_cast<uint64_t>(step));
        std::vector<TP<float>> deg, cln;
        for (int b = 0; b < opts.batch; ++b) {
            const auto& pair = train[rng.below(train.size())];
            auto [d, c] = flip_augment(pair.degraded, pair.clean, rng.next_u64());
            deg.push_back(std::move(d));
            cln.push_back(std::move(c));
        }
        std::vector<const Tensor<float>*> dptr, cptr;
        for (const auto& t : deg) dptr.push_back(t.get());
        for (const auto& t : cln) cptr.push_back(t.get());
        auto x = stack_batch(dptr);
        auto target = stack_batch(cptr);

        const double lr = cosine_lr(step, opts.sched);
        TraceRow row;
        row.step = step;
        row.lr = lr;
        try {
            for (auto& [name, p] : model.params) p->zero_grad();
            Tape<float> tape;
            auto pred = restore(&tape, model, x);
            auto loss = psnr_loss(&tape, pred, target);
            row.loss = loss->data[0];
            tape.backward(loss);
            opt.apply(model.params, lr);
        } catch (const NumericError& e) {
            // Abort the run; the last periodic checkpoint stays on disk.
            throw NumericError("training aborted at step " + std::to_string(step) + ": " + e.what());
        }

        if (opts.eval_every > 0 && !holdout.empty() && (step + 1) % opts.eval_every == 0) {
            row.eval_psnr = holdout_psnr(model, holdout);
            row.has_eval = true;
        }
        trace.push_back(row);

        if (opts.checkpoint_every > 0 && !opts.checkpoint_dir.empty() &&
            (step + 1) % opts.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof name, "step_%06lld.ckpt", static_cast<long long>(step + 1));
            save_checkpoint(model, opt, opts.checkpoint_dir + "/" + name);
        }
    }
    return trace;
}

void write_trace_csv(const std::vector<TraceRow>& rows, const std::string& path, bool append) {
    std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path + "'");
    if (!append) f << "step,lr,loss,eval_psnr\n";
    for (const auto& r : rows) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%lld,%.8g,%.8g,", static_cast<long long>(r.step), r.lr, r.loss);
        f << buf;
        if (r.has_eval) {
            std::snprintf(buf, sizeof buf, "%.6f", r.eval_psnr);
            f << buf;
        }
        f << "\n";
    }
}

}  // namespace mdda
