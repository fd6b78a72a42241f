#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "scanrl/rng.hpp"
#include "scanrl/scan_env.hpp"

namespace scanrl {

struct Episode {
    ScanHistory history;
    int image_index = 0;
};

// Fixed-capacity FIFO of complete episodes. Stores the source image index,
// not the image: scans are re-rasterized (with augmentation) at sample time.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity, int expected_steps)
        : capacity_(capacity), expected_steps_(expected_steps) {
        if (capacity_ == 0) throw ConfigError("replay: capacity must be positive");
    }

    void push(Episode episode) {
        if (episode.history.steps() != expected_steps_) {
            throw ContractError("replay: episode has " + std::to_string(episode.history.steps()) +
                                " steps, need " + std::to_string(expected_steps_));
        }
        episodes_.push_back(std::move(episode));
        if (episodes_.size() > capacity_) episodes_.pop_front();
    }

    std::size_t size() const { return episodes_.size(); }
    bool ready(std::size_t n) const { return episodes_.size() >= n; }

    // Uniform sample of n distinct episodes (indices into the buffer are
    // drawn without replacement via a partial Fisher-Yates shuffle).
    std::vector<const Episode*> sample(std::size_t n, Rng& rng) const {
        if (episodes_.size() < n) {
            throw UsageError("replay: " + std::to_string(episodes_.size()) + " episodes buffered, " +
                             std::to_string(n) + " requested");
        }
        std::vector<std::size_t> idx(episodes_.size());
        for (std::size_t i = 0; i < idx.size(); i++) idx[i] = i;
        std::vector<const Episode*> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; i++) {
            const std::size_t j = i + rng.below(idx.size() - i);
            std::swap(idx[i], idx[j]);
            out.push_back(&episodes_[idx[i]]);
        }
        return out;
    }

    const Episode& at(std::size_t i) const { return episodes_.at(i); }
    void clear() { episodes_.clear(); }
    std::size_t capacity() const { return capacity_; }
    int expected_steps() const { return expected_steps_; }

private:
    std::size_t capacity_;
    int expected_steps_;
    std::deque<Episode> episodes_;
};

}  // namespace scanrl
