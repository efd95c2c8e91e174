#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rudra/errors.hpp"

namespace rudra {

/// Scalar logical clock on the server's weights. Starts at 0 and advances by
/// exactly 1 per weight update. Gradients inherit the timestamp of the
/// weights they were computed from.
using Timestamp = std::uint64_t;

using LearnerId = std::uint32_t;

/// Staleness of one gradient: server timestamp at application minus the
/// gradient's own timestamp.
inline std::uint64_t staleness(Timestamp gradient_ts, Timestamp server_ts) {
    if (gradient_ts > server_ts)
        throw ClockViolation("gradient timestamp " + std::to_string(gradient_ts) +
                             " is ahead of server timestamp " + std::to_string(server_ts));
    return server_ts - gradient_ts;
}

/// The vector clock behind one weight update: update index i (the timestamp
/// the update produced), the contributing gradients' timestamps, and the
/// learners that sent them.
struct VectorClockRecord {
    Timestamp update_index = 0;
    std::vector<Timestamp> contributors;
    std::vector<LearnerId> learner_ids;

    void validate() const {
        if (contributors.empty())
            throw PreconditionError("VectorClockRecord: contributors must be nonempty");
        for (Timestamp ts : contributors)
            if (ts >= update_index)
                throw ClockViolation("contributor timestamp " + std::to_string(ts) +
                                     " not older than update index " +
                                     std::to_string(update_index));
    }
};

/// Average staleness of one update: (i-1) - mean(contributor timestamps).
/// May be fractional.
inline double average_staleness(const VectorClockRecord& rec) {
    rec.validate();
    double sum = 0.0;
    for (Timestamp ts : rec.contributors) sum += static_cast<double>(ts);
    const double mean = sum / static_cast<double>(rec.contributors.size());
    return static_cast<double>(rec.update_index - 1) - mean;
}

/// Running staleness accounting over a run: the per-update mean series,
/// the global per-gradient histogram, and the run-level gradient mean.
class StalenessStats {
public:
    void record(const VectorClockRecord& rec) {
        rec.validate();
        const Timestamp applied_at = rec.update_index - 1;
        std::uint64_t max_sigma = 0;
        for (Timestamp ts : rec.contributors) {
            const std::uint64_t sigma = staleness(ts, applied_at);
            histogram_[sigma] += 1;
            sigma_sum_ += static_cast<double>(sigma);
            gradient_count_ += 1;
            max_sigma = std::max(max_sigma, sigma);
        }
        per_update_mean_.push_back(average_staleness(rec));
        per_update_max_.push_back(max_sigma);
        records_.push_back(rec);
    }

    std::size_t update_count() const { return per_update_mean_.size(); }
    std::uint64_t gradient_count() const { return gradient_count_; }

    /// Per-update mean staleness series, in update order.
    const std::vector<double>& per_update_mean() const { return per_update_mean_; }
    const std::vector<std::uint64_t>& per_update_max() const { return per_update_max_; }
    const std::vector<VectorClockRecord>& records() const { return records_; }

    /// Run-level mean of per-gradient staleness.
    double run_mean() const {
        return gradient_count_ == 0 ? 0.0 : sigma_sum_ / static_cast<double>(gradient_count_);
    }

    /// Per-gradient staleness histogram; keys sorted ascending.
    const std::map<std::uint64_t, std::uint64_t>& histogram() const { return histogram_; }

    /// Fraction of gradients with staleness strictly greater than t.
    double tail_fraction(std::uint64_t t) const {
        if (gradient_count_ == 0) return 0.0;
        std::uint64_t beyond = 0;
        for (auto it = histogram_.upper_bound(t); it != histogram_.end(); ++it)
            beyond += it->second;
        return static_cast<double>(beyond) / static_cast<double>(gradient_count_);
    }

    std::uint64_t max_sigma() const {
        return histogram_.empty() ? 0 : histogram_.rbegin()->first;
    }

private:
    std::vector<double> per_update_mean_;
    std::vector<std::uint64_t> per_update_max_;
    std::vector<VectorClockRecord> records_;
    std::map<std::uint64_t, std::uint64_t> histogram_;
    double sigma_sum_ = 0.0;
    std::uint64_t gradient_count_ = 0;
};

}  // namespace rudra
