#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <type_traits>
#include <string>
#include <vector>

#include "rockseg/model/model.hpp"
#include "rockseg/nn/optimizer.hpp"
#include "rockseg/train/checkpoint.hpp"
#include "rockseg/train/records.hpp"

namespace rockseg {

struct TrainConfig {
    double learning_rate = 1e-5;
    int batch_size = 8;
    int max_epochs = 20;
    double split_ratio = 0.8;
    std::uint64_t seed = 0;
    double scheduler_factor = 0.5;
    int scheduler_patience = 3;
    int early_stop_patience = 10;
    double min_lr = 1e-7;
    int box_jitter = 0;
    double min_foreground_fraction = 0.01;
    bool per_object = false;

    void validate() const {
        require(split_ratio > 0.0 && split_ratio < 1.0, ErrorKind::validation,
                "train: split_ratio must be in (0,1)");
        require(scheduler_factor > 0.0 && scheduler_factor < 1.0, ErrorKind::validation,
                "train: scheduler_factor must be in (0,1)");
        require(scheduler_patience >= 1 && early_stop_patience >= 1, ErrorKind::validation,
                "train: patiences must be >= 1");
        require(learning_rate > 0.0 && min_lr > 0.0, ErrorKind::validation,
                "train: learning rates must be > 0");
        require(batch_size >= 1 && max_epochs >= 1, ErrorKind::validation,
                "train: batch_size and max_epochs must be >= 1");
        require(box_jitter >= 0, ErrorKind::validation, "train: box_jitter must be >= 0");
    }
};

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

// Scheduler / early-stop / checkpoint bookkeeping across a run.
struct TrainingState {
    double current_lr = 0.0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;
    int epochs_since_lr_drop = 0;
    int best_epoch = 0; // 1-based; 0 = none yet
    std::vector<EpochStats> history;
    std::string best_checkpoint_path;
};

// Val-loss improvements below this are treated as float noise.
inline constexpr double improvement_tolerance = 1e-9;

// Plateau bookkeeping for one validation result. Both counters reset on
// improvement; otherwise they advance, and once the lr counter reaches the
// scheduler patience the learning rate decays (clamped at min_lr) and that
// counter alone resets. Returns whether this epoch improved the best loss.
inline bool plateau_step(TrainingState& state, double val_loss, const TrainConfig& config) {
    const bool improved = val_loss < state.best_val_loss - improvement_tolerance;
    if (improved) {
        state.best_val_loss = val_loss;
        state.epochs_since_improvement = 0;
        state.epochs_since_lr_drop = 0;
        return true;
    }
    ++state.epochs_since_improvement;
    ++state.epochs_since_lr_drop;
    if (state.epochs_since_lr_drop >= config.scheduler_patience) {
        state.current_lr = std::max(state.current_lr * config.scheduler_factor, config.min_lr);
        state.epochs_since_lr_drop = 0;
    }
    return false;
}

inline bool early_stop(const TrainingState& state, int patience) {
    return state.epochs_since_improvement >= patience;
}

// Sample with its frozen-encoder outputs cached; the encoders never change
// during fine-tuning, so embeddings are computed once per record.
template <typename T = float>
struct EmbeddedSample {
    nn::Tensor<T> image_emb;
    nn::Tensor<T> prompt_emb;
    BinaryMask mask;
    SourceTag tag = SourceTag::CT;
};

template <typename T>
std::vector<EmbeddedSample<T>> embed_records(const Model<T>& model,
                                             const std::vector<SampleRecord>& records) {
    std::vector<EmbeddedSample<T>> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        EmbeddedSample<T> s;
        s.image_emb = model.encode_image(rec.image);
        s.prompt_emb = model.encode_prompt(rec.box);
        s.mask = rec.mask;
        s.tag = rec.tag;
        out.push_back(std::move(s));
    }
    return out;
}

enum class EpochMode { train, validate };

// Builds the decoder loss graph for one batch; returns the scalar loss node.
template <typename T>
nn::TapeId batch_loss_graph(nn::Tape<T>& tape, Model<T>& model,
                            const std::vector<EmbeddedSample<T>>& samples,
                            const std::vector<std::size_t>& batch, double inv_batch) {
    std::vector<nn::TapeId> losses;
    losses.reserve(batch.size());
    for (auto idx : batch) {
        const auto& s = samples[idx];
        nn::TapeId emb = tape.constant(s.image_emb);
        nn::TapeId prompt = tape.constant(s.prompt_emb);
        nn::TapeId logits = model.decoder_graph(tape, emb, prompt);
        losses.push_back(nn::dice_ce(
            tape, logits, std::vector<std::uint8_t>(s.mask.data(), s.mask.data() + s.mask.size())));
    }
    return nn::sum_scaled(tape, losses, static_cast<T>(inv_batch));
}

// One pass over the batches. Train mode runs forward/loss/backward and an
// optimizer step per batch; validate mode is forward-only and mutates
// nothing. Returns the mean loss over batches.
template <typename T>
double run_epoch(Model<T>& model, const std::vector<EmbeddedSample<T>>& samples,
                 const std::vector<std::vector<std::size_t>>& batches, EpochMode mode,
                 std::type_identity_t<nn::AdamOptimizer<T>>* optimizer, double lr) {
    require(!batches.empty(), ErrorKind::validation, "run_epoch: empty batch list");
    require(mode == EpochMode::validate || optimizer != nullptr, ErrorKind::validation,
            "run_epoch: training requires an optimizer");
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
        require(!batch.empty(), ErrorKind::validation, "run_epoch: empty batch");
        nn::Tape<T> tape;
        const nn::TapeId total =
            batch_loss_graph(tape, model, samples, batch, 1.0 / static_cast<double>(batch.size()));
        const double loss = static_cast<double>(tape.value(total).v[0]);
        require(std::isfinite(loss), ErrorKind::divergence,
                "non-finite loss encountered (lr=" + std::to_string(lr) +
                    "); aborting the run");
        if (mode == EpochMode::train) {
            optimizer->zero_grad();
            tape.backward(total);
            optimizer->step(lr);
        }
        loss_sum += loss;
    }
    return loss_sum / static_cast<double>(batches.size());
}

// Deterministic epoch batching: seeded shuffle, then fixed-size slices (the
// final batch may be short).
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size,
                                                          std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size)
        batches.emplace_back(order.begin() + i,
                             order.begin() + std::min(n, i + static_cast<std::size_t>(batch_size)));
    return batches;
}

inline std::vector<std::vector<std::size_t>> sequential_batches(std::size_t n, int batch_size) {
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        std::vector<std::size_t> b;
        for (std::size_t j = i; j < std::min(n, i + static_cast<std::size_t>(batch_size)); ++j)
            b.push_back(j);
        batches.push_back(std::move(b));
    }
    return batches;
}

inline void write_history_csv(const std::vector<EpochStats>& history,
                              const std::filesystem::path& path) {
    std::ofstream os(path);
    require(os.good(), ErrorKind::io, "cannot write history: " + path.string());
    os << "epoch,train_loss,val_loss,lr\n";
    char buf[128];
    for (std::size_t i = 0; i < history.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g\n", i + 1, history[i].train_loss,
                      history[i].val_loss, history[i].lr);
        os << buf;
    }
}

} // namespace rockseg
