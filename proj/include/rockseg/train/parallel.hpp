#pragma once

#include <thread>
#include <vector>

#include "rockseg/train/loop.hpp"

namespace rockseg {

// Data-parallel training pool. Every worker holds a full weight replica and
// processes a disjoint shard of each batch; per-shard gradient sums meet at
// the join barrier where they are averaged over the batch, and every replica
// then applies the same averaged gradient with its own (identical) optimizer
// state, so replicas stay bit-identical after every step.
//
// setup is the constructor; teardown() is explicit and idempotent and is the
// point where replicas and optimizer state are released.
template <typename T = float>
class WorkerPool {
public:
    WorkerPool(const Model<T>& prototype, int workers) {
        require(workers >= 1, ErrorKind::validation, "worker count must be >= 1");
        replicas_.reserve(workers);
        for (int w = 0; w < workers; ++w) replicas_.push_back(prototype.clone());
        // replicas_ must not grow past this point: optimizers keep pointers
        // into the replica parameter stores
        optimizers_.reserve(workers);
        for (int w = 0; w < workers; ++w) optimizers_.emplace_back(replicas_[w].params);
    }

    ~WorkerPool() { teardown(); }

    bool active() const { return !replicas_.empty(); }
    int workers() const { return static_cast<int>(replicas_.size()); }
    Model<T>& replica(int i) { return replicas_.at(i); }

    void teardown() {
        optimizers_.clear();
        replicas_.clear();
    }

    // One synchronized optimizer step over the batch; returns the batch loss.
    double train_batch(const std::vector<EmbeddedSample<T>>& samples,
                       const std::vector<std::size_t>& batch, double lr) {
        require(active(), ErrorKind::validation, "worker pool already torn down");
        require(!batch.empty(), ErrorKind::validation, "empty batch");
        const int n = workers();
        std::vector<std::vector<std::size_t>> shards(n);
        for (std::size_t i = 0; i < batch.size(); ++i) shards[i % n].push_back(batch[i]);

        std::vector<double> shard_loss_sums(n, 0.0);
        auto worker_fn = [&](int w) {
            auto& model = replicas_[w];
            model.params.zero_grads();
            if (shards[w].empty()) return;
            nn::Tape<T> tape;
            std::vector<nn::TapeId> losses;
            for (auto idx : shards[w]) {
                const auto& s = samples[idx];
                nn::TapeId logits = model.decoder_graph(tape, tape.constant(s.image_emb),
                                                        tape.constant(s.prompt_emb));
                losses.push_back(nn::dice_ce(
                    tape, logits,
                    std::vector<std::uint8_t>(s.mask.data(), s.mask.data() + s.mask.size())));
            }
            const nn::TapeId total = nn::sum_scaled(tape, losses, T(1));
            shard_loss_sums[w] = static_cast<double>(tape.value(total).v[0]);
            tape.backward(total);
        };

        std::vector<std::thread> threads;
        threads.reserve(n);
        for (int w = 0; w < n; ++w) threads.emplace_back(worker_fn, w);
        for (auto& t : threads) t.join(); // synchronization barrier

        // average the per-shard gradient sums over the whole batch
        const T inv_batch = T(1) / static_cast<T>(batch.size());
        auto& master = replicas_[0].params;
        for (std::size_t p = 0; p < master.size(); ++p) {
            if (!master[p].trainable) continue;
            auto& g0 = master[p].grad;
            for (int w = 1; w < n; ++w) {
                const auto& gw = replicas_[w].params[p].grad;
                for (std::size_t j = 0; j < g0.v.size(); ++j) g0.v[j] += gw.v[j];
            }
            for (auto& g : g0.v) g *= inv_batch;
            for (int w = 1; w < n; ++w) replicas_[w].params[p].grad = g0;
        }
        double loss = 0.0;
        for (double s : shard_loss_sums) loss += s;
        loss /= static_cast<double>(batch.size());
        require(std::isfinite(loss), ErrorKind::divergence, "non-finite loss; aborting the run");

        for (int w = 0; w < n; ++w) optimizers_[w].step(lr);
        return loss;
    }

    double run_train_epoch(const std::vector<EmbeddedSample<T>>& samples,
                           const std::vector<std::vector<std::size_t>>& batches, double lr) {
        require(!batches.empty(), ErrorKind::validation, "run_train_epoch: empty batch list");
        double sum = 0.0;
        for (const auto& batch : batches) sum += train_batch(samples, batch, lr);
        return sum / static_cast<double>(batches.size());
    }

private:
    std::vector<Model<T>> replicas_;
    std::vector<nn::AdamOptimizer<T>> optimizers_;
};

} // namespace rockseg
