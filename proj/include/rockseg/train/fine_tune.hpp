#pragma once

#include <filesystem>
#include <optional>

#include "rockseg/model/pretrained.hpp"
#include "rockseg/train/parallel.hpp"

namespace rockseg {

struct FineTuneResult {
    Model<float> model; // weights of the best epoch
    TrainingState state;
};

// Whole fine-tuning pipeline: load + patchify + select + prompt + split,
// then epochs of decoder-only optimization with plateau scheduling, early
// stopping, and best-checkpoint retention.
inline FineTuneResult fine_tune(const std::filesystem::path& dataset_dir,
                                const ModelConfig& model_config, const TrainConfig& train_config,
                                const std::filesystem::path& out_dir, int workers = 1) {
    train_config.validate();
    std::filesystem::create_directories(out_dir);

    DatasetOptions opt;
    opt.patch_size = model_config.patch_input_size;
    opt.min_foreground_fraction = train_config.min_foreground_fraction;
    opt.box_jitter = train_config.box_jitter;
    opt.seed = train_config.seed;
    opt.per_object = train_config.per_object;
    const auto records = load_training_records(dataset_dir, opt);
    auto [train_records, val_records] =
        split_dataset(records, train_config.split_ratio, train_config.seed);

    Model<float> model = build_model(model_config, train_config.seed);
    model.freeze_encoders();

    const auto train_samples = embed_records(model, train_records);
    const auto val_samples = embed_records(model, val_records);
    const auto val_batches = sequential_batches(val_samples.size(), train_config.batch_size);

    TrainingState state;
    state.current_lr = train_config.learning_rate;
    const std::filesystem::path best_path = out_dir / "best.ckpt";

    nn::AdamOptimizer<float> optimizer(model.params);
    const bool parallel = workers > 1;
    std::optional<WorkerPool<float>> pool;
    if (parallel) pool.emplace(model, workers);

    for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        const auto batches = make_batches(train_samples.size(), train_config.batch_size,
                                          Rng::derive(train_config.seed, 1000 + epoch));
        const double lr = state.current_lr;
        double train_loss;
        if (parallel) {
            train_loss = pool->run_train_epoch(train_samples, batches, lr);
            // replicas are identical; adopt replica 0 as the canonical weights
            model.params = pool->replica(0).params.clone();
        } else {
            train_loss = run_epoch(model, train_samples, batches, EpochMode::train, &optimizer, lr);
        }
        const double val_loss =
            run_epoch(model, val_samples, val_batches, EpochMode::validate, nullptr, lr);
        state.history.push_back({train_loss, val_loss, lr});

        const bool improved = plateau_step(state, val_loss, train_config);
        if (improved) {
            state.best_epoch = epoch;
            CheckpointInfo info;
            info.config_hash = config_hash(model_config);
            info.epoch = epoch;
            info.val_loss = val_loss;
            info.trainable_count = model.count_trainable();
            save_checkpoint(model, info, best_path);
            state.best_checkpoint_path = best_path.string();
        }
        if (early_stop(state, train_config.early_stop_patience)) break;
    }
    if (pool) pool->teardown();

    require(!state.best_checkpoint_path.empty(), ErrorKind::validation,
            "training never improved on the initial validation loss");
    FineTuneResult result{std::move(model), std::move(state)};
    load_checkpoint(result.model, best_path); // hand back the best weights
    return result;
}

} // namespace rockseg
