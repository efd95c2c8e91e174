#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rudra/clock.hpp"
#include "rudra/errors.hpp"
#include "rudra/model.hpp"

namespace rudra {

/// Shortest decimal string that round-trips the exact double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw PreconditionError("format_double: conversion failed");
    return std::string(buf, ptr);
}

/// FNV-1a over the little-endian byte image of a double vector. Stable
/// fingerprint for reproducibility checks.
inline std::uint64_t checksum_values(const Vector& values) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xFFu;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

struct EpochRow {
    std::uint32_t epoch = 0;   // 1-based
    double train_error = 0.0;  // misclassification fraction
    double test_error = 0.0;
    std::uint64_t samples_seen = 0;
    double time = 0.0;  // virtual time or wall seconds at the boundary
};

struct TimingSample {
    LearnerId learner_id = 0;
    std::uint64_t batch_index = 0;
    double compute_t = 0.0;
    double pull_wait_t = 0.0;
    double push_wait_t = 0.0;
};

/// Everything one run reports: staleness accounting, epoch curve, per-batch
/// timing, aggregate counters, and the final-weights fingerprint.
struct RunLog {
    StalenessStats staleness;
    std::vector<EpochRow> epochs;
    std::vector<TimingSample> timing;

    std::uint64_t gradients_computed = 0;
    std::uint64_t gradients_received = 0;
    std::uint64_t gradients_consumed = 0;
    std::uint64_t updates_applied = 0;
    std::uint64_t samples_consumed = 0;
    std::uint64_t pulls_served = 0;
    std::uint64_t pulls_skipped = 0;

    std::uint64_t final_checksum = 0;
    double final_train_error = 0.0;
    double final_test_error = 0.0;
    double total_time = 0.0;
    bool diverged = false;

    /// 100 * compute / (compute + blocked), blocked = pull waits + push
    /// waits summed over every learner batch.
    double communication_overlap() const {
        double compute = 0.0, blocked = 0.0;
        for (const auto& t : timing) {
            compute += t.compute_t;
            blocked += t.pull_wait_t + t.push_wait_t;
        }
        const double denom = compute + blocked;
        if (denom <= 0.0) throw PreconditionError("communication_overlap: no timing samples");
        return 100.0 * compute / denom;
    }

    void write_staleness_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ParseError(path + ": cannot write");
        out << "update_index,server_ts,num_contributors,mean_staleness,max_staleness\n";
        for (const auto& rec : staleness.records()) {
            const Timestamp server_ts = rec.update_index;
            double max_sigma = 0.0;
            for (Timestamp ts : rec.contributors) {
                const double s = static_cast<double>(rec.update_index - 1 - ts);
                if (s > max_sigma) max_sigma = s;
            }
            out << rec.update_index << ',' << server_ts << ',' << rec.contributors.size()
                << ',' << format_double(average_staleness(rec)) << ','
                << format_double(max_sigma) << '\n';
        }
    }

    void write_epochs_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ParseError(path + ": cannot write");
        out << "epoch,train_error,test_error,samples_seen,wall_or_virtual_time\n";
        for (const auto& e : epochs)
            out << e.epoch << ',' << format_double(e.train_error) << ','
                << format_double(e.test_error) << ',' << e.samples_seen << ','
                << format_double(e.time) << '\n';
    }

    void write_timing_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ParseError(path + ": cannot write");
        out << "learner_id,batch_index,compute_t,pull_wait_t,push_wait_t\n";
        for (const auto& t : timing)
            out << t.learner_id << ',' << t.batch_index << ','
                << format_double(t.compute_t) << ',' << format_double(t.pull_wait_t) << ','
                << format_double(t.push_wait_t) << '\n';
    }
};

}  // namespace rudra
