#pragma once

#include <cstdint>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rudra/clock.hpp"
#include "rudra/errors.hpp"
#include "rudra/model.hpp"
#include "rudra/rng.hpp"
#include "rudra/tensor.hpp"

namespace rudra {

struct Dataset {
    Matrix inputs;            // one example per row
    std::vector<int> labels;  // in [0, num_classes)
    std::uint32_t num_classes = 0;

    std::size_t size() const { return inputs.rows; }

    void validate() const {
        if (inputs.rows != labels.size())
            throw ShapeError("dataset: " + std::to_string(inputs.rows) + " rows vs " +
                             std::to_string(labels.size()) + " labels");
        if (num_classes < 2) throw ConfigError("dataset: need at least 2 classes");
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] < 0 || static_cast<std::uint32_t>(labels[i]) >= num_classes)
                throw ConfigError("dataset: label " + std::to_string(labels[i]) +
                                  " out of range at row " + std::to_string(i));
    }
};

struct SyntheticSpec {
    std::uint32_t classes = 10;
    std::size_t dim = 32;
    std::size_t train_per_class = 500;
    std::size_t test_per_class = 100;
    double separation = 2.5;   // cluster center scale relative to unit noise
    double label_noise = 0.0;  // probability a label is resampled uniformly
    std::uint64_t seed = 1;

    std::size_t num_train() const { return classes * train_per_class; }
    std::size_t num_test() const { return classes * test_per_class; }
};

/// Gaussian cluster classification task. Class centers are drawn once at
/// scale `separation`; train and test are disjoint stratified draws around
/// the same centers, class-major order. Fully determined by the seed.
inline std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec) {
    if (spec.classes < 2) throw ConfigError("synthetic: need at least 2 classes");
    if (spec.dim < 1) throw ConfigError("synthetic: dim must be >= 1");
    if (spec.train_per_class < 1 || spec.test_per_class < 1)
        throw ConfigError("synthetic: per-class sample counts must be >= 1");
    if (spec.label_noise < 0.0 || spec.label_noise > 1.0)
        throw ConfigError("synthetic: label_noise must lie in [0,1]");

    RngStream centers_rng(spec.seed, streams::kWeightInit ^ 0xC0FFEEULL);
    std::vector<Vector> centers(spec.classes);
    for (auto& c : centers) c = draw_gaussian(centers_rng, spec.dim, 0.0, spec.separation);

    auto draw_split = [&](std::size_t per_class, std::uint64_t stream_id) {
        Dataset d;
        d.num_classes = spec.classes;
        d.inputs = Matrix(per_class * spec.classes, spec.dim);
        d.labels.resize(per_class * spec.classes);
        RngStream rng(spec.seed, stream_id);
        std::size_t row = 0;
        for (std::uint32_t cls = 0; cls < spec.classes; ++cls) {
            for (std::size_t i = 0; i < per_class; ++i, ++row) {
                for (std::size_t j = 0; j < spec.dim; ++j)
                    d.inputs.at(row, j) = centers[cls][j] + rng.next_gaussian();
                int label = static_cast<int>(cls);
                if (spec.label_noise > 0.0 && rng.next_double() < spec.label_noise)
                    label = static_cast<int>(rng.next_below(spec.classes));
                d.labels[row] = label;
            }
        }
        return d;
    };

    auto train = draw_split(spec.train_per_class, streams::kDatasetTrain);
    auto test = draw_split(spec.test_per_class, streams::kDatasetTest);
    return {std::move(train), std::move(test)};
}

/// Loads "f1,...,fk,label" rows. Blank lines and lines starting with '#'
/// are skipped. Errors carry 1-based line numbers.
inline Dataset load_csv_dataset(const std::string& path, std::uint32_t num_classes) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    std::vector<Vector> rows;
    std::vector<int> labels;
    std::size_t expect_cols = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) fields.push_back(cell);
        if (fields.size() < 2)
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": need at least one feature and a label");
        if (expect_cols == 0) expect_cols = fields.size();
        if (fields.size() != expect_cols)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(expect_cols) + " fields, got " +
                             std::to_string(fields.size()));
        Vector feats(fields.size() - 1);
        for (std::size_t j = 0; j + 1 < fields.size(); ++j) {
            try {
                std::size_t used = 0;
                feats[j] = std::stod(fields[j], &used);
                if (used != fields[j].size()) throw std::invalid_argument("trailing junk");
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" +
                                 fields[j] + "'");
            }
        }
        int label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(fields.back(), &used);
            if (used != fields.back().size()) throw std::invalid_argument("trailing junk");
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad label '" +
                             fields.back() + "'");
        }
        rows.push_back(std::move(feats));
        labels.push_back(label);
    }
    if (rows.empty()) throw ParseError(path + ": no data rows");
    Dataset d;
    d.num_classes = num_classes;
    d.labels = std::move(labels);
    d.inputs = Matrix(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) d.inputs.at(i, j) = rows[i][j];
    d.validate();
    return d;
}

/// Per-feature means of the training inputs.
inline Vector feature_means(const Dataset& train) {
    if (train.size() == 0) throw PreconditionError("feature_means: empty dataset");
    Vector mean(train.inputs.cols, 0.0);
    for (std::size_t i = 0; i < train.inputs.rows; ++i)
        for (std::size_t j = 0; j < train.inputs.cols; ++j) mean[j] += train.inputs.at(i, j);
    for (auto& m : mean) m /= static_cast<double>(train.inputs.rows);
    return mean;
}

/// Subtracts training-set feature means in place. Test data is centered
/// with the training statistics, never its own.
inline void center_features(Dataset& d, const Vector& train_means) {
    if (train_means.size() != d.inputs.cols)
        throw ShapeError("center_features: mean length mismatch");
    for (std::size_t i = 0; i < d.inputs.rows; ++i)
        for (std::size_t j = 0; j < d.inputs.cols; ++j) d.inputs.at(i, j) -= train_means[j];
}

enum class SamplingMode {
    Independent,   // per-learner stream, with replacement
    SharedStream,  // one global index stream dealt to learners in id order
};

/// Serves size-mu minibatches to learners. Independent mode gives every
/// learner its own with-replacement stream. SharedStream mode deals one
/// global stream in windows of mu*lambda: learner l's w-th batch is slots
/// [w*mu*lambda + l*mu, w*mu*lambda + (l+1)*mu), so the union of all
/// learners' window-w batches equals one mu*lambda batch of a single
/// learner consuming the same stream.
class DataServer {
public:
    DataServer(const Dataset& data, std::uint32_t mu, std::uint32_t lambda,
               SamplingMode mode, std::uint64_t seed)
        : data_(data), mu_(mu), lambda_(lambda), mode_(mode), seed_(seed),
          shared_rng_(seed, streams::kSharedSampler) {
        if (mu_ < 1) throw ConfigError("DataServer: mu must be >= 1");
        if (lambda_ < 1) throw ConfigError("DataServer: lambda must be >= 1");
        if (data_.size() == 0) throw PreconditionError("DataServer: empty dataset");
        data_.validate();
        if (mode_ == SamplingMode::Independent) {
            learner_rngs_.reserve(lambda_);
            for (std::uint32_t l = 0; l < lambda_; ++l)
                learner_rngs_.emplace_back(seed_, streams::learner_data(l));
        } else {
            next_window_.assign(lambda_, 0);
        }
    }

    std::uint32_t mu() const { return mu_; }
    const Dataset& dataset() const { return data_; }

    MiniBatch get_minibatch(LearnerId learner) {
        if (learner >= lambda_)
            throw PreconditionError("get_minibatch: learner id " + std::to_string(learner) +
                                    " out of range");
        std::vector<std::size_t> idx(mu_);
        if (mode_ == SamplingMode::Independent) {
            // Per-learner streams; learner threads never share one.
            auto& rng = learner_rngs_[learner];
            for (auto& i : idx) i = rng.next_below(data_.size());
        } else {
            std::lock_guard lk(shared_mu_);
            const std::uint64_t w = next_window_[learner]++;
            const std::uint64_t base =
                w * static_cast<std::uint64_t>(mu_) * lambda_ + static_cast<std::uint64_t>(learner) * mu_;
            ensure_shared(base + mu_);
            for (std::uint32_t k = 0; k < mu_; ++k) idx[k] = shared_indices_[base + k];
        }
        return assemble(idx);
    }

private:
    void ensure_shared(std::uint64_t upto) {
        while (shared_indices_.size() < upto)
            shared_indices_.push_back(shared_rng_.next_below(data_.size()));
    }

    MiniBatch assemble(const std::vector<std::size_t>& idx) const {
        MiniBatch mb;
        mb.inputs = Matrix(idx.size(), data_.inputs.cols);
        mb.labels.resize(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t j = 0; j < data_.inputs.cols; ++j)
                mb.inputs.at(r, j) = data_.inputs.at(idx[r], j);
            mb.labels[r] = data_.labels[idx[r]];
        }
        return mb;
    }

    const Dataset& data_;
    std::uint32_t mu_;
    std::uint32_t lambda_;
    SamplingMode mode_;
    std::uint64_t seed_;
    RngStream shared_rng_;
    std::vector<RngStream> learner_rngs_;
    std::mutex shared_mu_;
    std::vector<std::size_t> shared_indices_;
    std::vector<std::uint64_t> next_window_;
};

/// Misclassification fraction over a whole dataset.
inline double evaluate(const Weights& w, const Dataset& d) {
    return evaluate(w, d.inputs, d.labels);
}

}  // namespace rudra
