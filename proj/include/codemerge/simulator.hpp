// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "codemerge/codebook.hpp"
#include "codemerge/errors.hpp"
#include "codemerge/fingerprint.hpp"
#include "codemerge/merging.hpp"
#include "codemerge/rng.hpp"
#include "codemerge/scoring.hpp"
#include "codemerge/tensor.hpp"

namespace codemerge {

// ---------------------------------------------------------------------------
// Synthetic shifting regression stream
// ---------------------------------------------------------------------------

enum class ShiftKind { MeanShift, CovarianceRotation, LabelNoiseBurst, FeatureDropout };

/// A shift becomes active at start_step and stays active until the next
/// scheduled event (segments are relative to the base distribution, so a
/// noise burst ends when the following segment begins).
struct ShiftEvent {
    std::uint64_t start_step = 0;
    ShiftKind kind = ShiftKind::MeanShift;
    double magnitude = 0.0;
};

struct StreamConfig {
    std::size_t d = 32;  // raw input dimension
    std::size_t batch_size = 16;
    std::size_t n_steps = 40;
    std::vector<ShiftEvent> schedule;
    double label_noise_sigma = 0.05;
    std::uint64_t seed = 1;

    void validate() const {
        if (d == 0 || batch_size == 0 || n_steps == 0) {
            throw ConfigError("stream dims, batch size, and step count must be positive");
        }
        if (!(label_noise_sigma >= 0.0) || !std::isfinite(label_noise_sigma)) {
            throw ConfigError("label_noise_sigma must be a finite non-negative value");
        }
        for (std::size_t i = 0; i < schedule.size(); ++i) {
            if (!std::isfinite(schedule[i].magnitude)) {
                throw ConfigError("shift magnitudes must be finite");
            }
            if (schedule[i].start_step >= n_steps) {
                throw ConfigError("shift at step " + std::to_string(schedule[i].start_step) +
                                  " lies outside [0, " + std::to_string(n_steps) + ")");
            }
            if (i > 0 && schedule[i].start_step <= schedule[i - 1].start_step) {
                throw ConfigError("shift schedule steps must strictly increase");
            }
        }
    }
};

/// One test batch: inputs (batch_size x d) and scalar labels (batch_size).
struct StreamBatch {
    Tensor inputs;
    Tensor labels;
};

/// Ground-truth labeler shared by the stream and the pretraining stage:
/// y(x) = w_lin . x / sqrt(d) + tanh(w_nl . x / sqrt(d)). The tanh term makes
/// a linear head on random features misspecified, so local refitting under
/// covariate shift genuinely helps.
struct LabelModel {
    Eigen::VectorXd w_lin;
    Eigen::VectorXd w_nl;

    double clean_label(const Eigen::VectorXd& x) const {
        const double scale = 1.0 / std::sqrt(static_cast<double>(x.size()));
        return w_lin.dot(x) * scale + std::tanh(w_nl.dot(x) * scale);
    }
};

namespace detail {
constexpr std::uint64_t kLabelSeedSalt = 0xA5B35705F1E2D3C4ull;

/// Base per-coordinate scales alternate 0.5 / 1.5 so covariance rotations in
/// the (2j, 2j+1) planes are measurable.
inline double base_scale(std::size_t j) { return (j % 2 == 0) ? 0.5 : 1.5; }
}  // namespace detail

inline LabelModel make_label_model(const StreamConfig& cfg) {
    GaussianSampler sampler(cfg.seed ^ detail::kLabelSeedSalt);
    LabelModel model;
    model.w_lin.resize(static_cast<Eigen::Index>(cfg.d));
    model.w_nl.resize(static_cast<Eigen::Index>(cfg.d));
    for (Eigen::Index j = 0; j < model.w_lin.size(); ++j) model.w_lin(j) = sampler.next();
    for (Eigen::Index j = 0; j < model.w_nl.size(); ++j) model.w_nl(j) = sampler.next();
    return model;
}

/// Deterministic synthetic stream. Per sample the draw order is fixed: d
/// unit Gaussians for the input, d uniforms when dropout is active, one
/// Gaussian for label noise. Labels come from the pre-dropout input (dropout
/// corrupts what the model sees, not what the world did).
inline std::vector<StreamBatch> generate_stream(const StreamConfig& cfg) {
    cfg.validate();
    const LabelModel labeler = make_label_model(cfg);
    GaussianSampler sampler(cfg.seed);

    std::vector<StreamBatch> batches;
    batches.reserve(cfg.n_steps);
    Eigen::VectorXd x(static_cast<Eigen::Index>(cfg.d));
    for (std::uint64_t t = 0; t < cfg.n_steps; ++t) {
        const ShiftEvent* active = nullptr;
        for (const auto& event : cfg.schedule) {
            if (event.start_step <= t) active = &event;
        }
        double mean_shift = 0.0;
        double rotation = 0.0;
        double noise_sigma = cfg.label_noise_sigma;
        double dropout = 0.0;
        if (active != nullptr) {
            switch (active->kind) {
                case ShiftKind::MeanShift: mean_shift = active->magnitude; break;
                case ShiftKind::CovarianceRotation: rotation = active->magnitude; break;
                case ShiftKind::LabelNoiseBurst: noise_sigma += active->magnitude; break;
                case ShiftKind::FeatureDropout:
                    dropout = std::clamp(active->magnitude, 0.0, 1.0);
                    break;
            }
        }
        const double c = std::cos(rotation);
        const double s = std::sin(rotation);

        std::vector<float> inputs(cfg.batch_size * cfg.d);
        std::vector<float> labels(cfg.batch_size);
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            for (std::size_t j = 0; j < cfg.d; ++j) {
                x(static_cast<Eigen::Index>(j)) = detail::base_scale(j) * sampler.next();
            }
            if (rotation != 0.0) {
                for (std::size_t j = 0; j + 1 < cfg.d; j += 2) {
                    const double v0 = x(static_cast<Eigen::Index>(j));
                    const double v1 = x(static_cast<Eigen::Index>(j + 1));
                    x(static_cast<Eigen::Index>(j)) = c * v0 - s * v1;
                    x(static_cast<Eigen::Index>(j + 1)) = s * v0 + c * v1;
                }
            }
            x.array() += mean_shift;
            const double y = labeler.clean_label(x);
            if (dropout > 0.0) {
                for (std::size_t j = 0; j < cfg.d; ++j) {
                    if (sampler.next_unit() < dropout) x(static_cast<Eigen::Index>(j)) = 0.0;
                }
            }
            for (std::size_t j = 0; j < cfg.d; ++j) {
                inputs[i * cfg.d + j] = static_cast<float>(x(static_cast<Eigen::Index>(j)));
            }
            labels[i] = static_cast<float>(y + noise_sigma * sampler.next());
        }
        batches.push_back(StreamBatch{Tensor({cfg.batch_size, cfg.d}, std::move(inputs)),
                                      Tensor({cfg.batch_size}, std::move(labels))});
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Toy model: frozen random feature extractor + linear regression head
// ---------------------------------------------------------------------------

/// phi(x) = tanh(A x + b) with A, b fixed at construction and never updated
/// during adaptation. A has entries N(0, 1/raw_dim), b entries N(0, 0.25);
/// both are filled row-major from GaussianSampler(seed).
class FeatureExtractor {
public:
    FeatureExtractor(std::size_t raw_dim, std::size_t feature_dim, std::uint64_t seed)
        : a_(static_cast<Eigen::Index>(feature_dim), static_cast<Eigen::Index>(raw_dim)),
          b_(static_cast<Eigen::Index>(feature_dim)) {
        if (raw_dim == 0 || feature_dim == 0) {
            throw ParameterError("extractor dims must be positive");
        }
        GaussianSampler sampler(seed);
        const double scale = 1.0 / std::sqrt(static_cast<double>(raw_dim));
        for (Eigen::Index i = 0; i < a_.rows(); ++i) {
            for (Eigen::Index j = 0; j < a_.cols(); ++j) {
                a_(i, j) = sampler.next() * scale;
            }
        }
        for (Eigen::Index i = 0; i < b_.size(); ++i) b_(i) = sampler.next() * 0.5;
    }

    std::size_t raw_dim() const { return static_cast<std::size_t>(a_.cols()); }
    std::size_t feature_dim() const { return static_cast<std::size_t>(a_.rows()); }

    /// Feature matrix (batch x feature_dim) for rank-2 inputs (batch x raw_dim).
    Eigen::MatrixXd features(const Tensor& inputs) const {
        if (inputs.rank() != 2 || inputs.dims()[1] != raw_dim()) {
            throw ParameterError("extractor expects inputs of shape (batch, " +
                                 std::to_string(raw_dim()) + ")");
        }
        const auto data = inputs.data();
        const std::size_t batch = inputs.dims()[0];
        Eigen::MatrixXd phi(static_cast<Eigen::Index>(batch),
                            static_cast<Eigen::Index>(feature_dim()));
        Eigen::VectorXd x(static_cast<Eigen::Index>(raw_dim()));
        for (std::size_t i = 0; i < batch; ++i) {
            for (std::size_t j = 0; j < raw_dim(); ++j) {
                x(static_cast<Eigen::Index>(j)) = static_cast<double>(data[i * raw_dim() + j]);
            }
            phi.row(static_cast<Eigen::Index>(i)) =
                ((a_ * x + b_).array().tanh()).matrix().transpose();
        }
        return phi;
    }

    /// Feature tensor (batch x feature_dim, f32) for the fingerprint path.
    Tensor feature_tensor(const Tensor& inputs) const {
        const Eigen::MatrixXd phi = features(inputs);
        std::vector<float> values(static_cast<std::size_t>(phi.rows() * phi.cols()));
        for (Eigen::Index i = 0; i < phi.rows(); ++i) {
            for (Eigen::Index j = 0; j < phi.cols(); ++j) {
                values[static_cast<std::size_t>(i) * feature_dim() +
                       static_cast<std::size_t>(j)] = static_cast<float>(phi(i, j));
            }
        }
        return Tensor({static_cast<std::uint64_t>(phi.rows()), feature_dim()},
                      std::move(values));
    }

private:
    Eigen::MatrixXd a_;
    Eigen::VectorXd b_;
};

/// Frozen extractor plus the only trainable part, the regression head.
struct ToyModel {
    const FeatureExtractor* extractor = nullptr;
    Eigen::VectorXd head;
};

inline constexpr const char* kHeadParameterName = "head/weight";

inline Checkpoint head_to_checkpoint(const Eigen::VectorXd& head, std::uint64_t step) {
    std::vector<float> values(static_cast<std::size_t>(head.size()));
    for (Eigen::Index i = 0; i < head.size(); ++i) {
        values[static_cast<std::size_t>(i)] = static_cast<float>(head(i));
    }
    Checkpoint c(step);
    c.add(kHeadParameterName, Tensor({static_cast<std::uint64_t>(head.size())}, values));
    return c;
}

inline Eigen::VectorXd head_from_checkpoint(const Checkpoint& c) {
    const Tensor& t = c.at(kHeadParameterName);
    const auto data = t.data();
    Eigen::VectorXd head(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        head(static_cast<Eigen::Index>(i)) = static_cast<double>(data[i]);
    }
    return head;
}

// ---------------------------------------------------------------------------
// Ridge adaptation
// ---------------------------------------------------------------------------

struct AdaptOptions {
    int n_grad_steps = 1;
    // Stable for tanh features up to dim ~90: the Hessian spectral radius is
    // at most 2(feature_dim + lambda), so lr must stay below 1/that.
    double lr = 0.01;
    double ridge_lambda = 1e-2;

    void validate() const {
        if (n_grad_steps < 0) {
            throw ParameterError("n_grad_steps must be >= 0");
        }
        if (!(lr > 0.0) || !std::isfinite(lr)) {
            throw ParameterError("learning rate must be positive and finite");
        }
        if (!(ridge_lambda >= 0.0) || !std::isfinite(ridge_lambda)) {
            throw ParameterError("ridge_lambda must be finite and non-negative");
        }
    }
};

/// Gradient of (1/N) ||phi w - y||^2 + lambda ||w||^2.
inline Eigen::VectorXd ridge_gradient(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& w, double lambda) {
    const double n = static_cast<double>(phi.rows());
    return (2.0 / n) * (phi.transpose() * (phi * w - y)) + 2.0 * lambda * w;
}

inline double ridge_objective(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& w, double lambda) {
    const double n = static_cast<double>(phi.rows());
    return (phi * w - y).squaredNorm() / n + lambda * w.squaredNorm();
}

/// Minimizer (phi^T phi / N + lambda I)^{-1} phi^T y / N of the ridge
/// objective.
inline Eigen::VectorXd ridge_closed_form(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y,
                                         double lambda) {
    const double n = static_cast<double>(phi.rows());
    Eigen::MatrixXd m = (phi.transpose() * phi) / n;
    m.diagonal().array() += lambda;
    return m.ldlt().solve(phi.transpose() * y / n);
}

/// Plain gradient descent on the ridge objective from `w0`.
inline Eigen::VectorXd adapt_head(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& w0, const AdaptOptions& opts) {
    opts.validate();
    Eigen::VectorXd w = w0;
    for (int step = 0; step < opts.n_grad_steps; ++step) {
        w -= opts.lr * ridge_gradient(phi, y, w, opts.ridge_lambda);
        const double loss = ridge_objective(phi, y, w, opts.ridge_lambda);
        // The 1e30 guard trips before the f32 checkpoint range does.
        if (!w.allFinite() || !std::isfinite(loss) || loss > 1e30) {
            throw NumericalError("adaptation diverged after " + std::to_string(step + 1) +
                                 " gradient steps; reduce the learning rate");
        }
    }
    return w;
}

/// Runs n_grad_steps of gradient descent on this batch starting from the
/// model's current head; the extractor is untouched. Returns the updated
/// head as a checkpoint at `step_id`.
inline Checkpoint adapt_step(const ToyModel& model, const StreamBatch& batch,
                             const AdaptOptions& opts, std::uint64_t step_id) {
    if (model.extractor == nullptr) {
        throw ParameterError("toy model has no extractor");
    }
    const Eigen::MatrixXd phi = model.extractor->features(batch.inputs);
    const auto label_data = batch.labels.data();
    Eigen::VectorXd y(static_cast<Eigen::Index>(label_data.size()));
    for (std::size_t i = 0; i < label_data.size(); ++i) {
        y(static_cast<Eigen::Index>(i)) = static_cast<double>(label_data[i]);
    }
    return head_to_checkpoint(adapt_head(phi, y, model.head, opts), step_id);
}

/// Mean squared prediction error of `head` on the batch (no regularizer, so
/// methods with different head norms compare fairly).
inline double evaluate_mse(const FeatureExtractor& extractor, const Eigen::VectorXd& head,
                           const StreamBatch& batch) {
    const Eigen::MatrixXd phi = extractor.features(batch.inputs);
    const auto label_data = batch.labels.data();
    Eigen::VectorXd y(static_cast<Eigen::Index>(label_data.size()));
    for (std::size_t i = 0; i < label_data.size(); ++i) {
        y(static_cast<Eigen::Index>(i)) = static_cast<double>(label_data[i]);
    }
    return (phi * head - y).squaredNorm() / static_cast<double>(phi.rows());
}

// ---------------------------------------------------------------------------
// Online adaptation loop
// ---------------------------------------------------------------------------

enum class MergeMethod { CodeMerge, NoAdapt, Ema, Mos, NaiveSequential };

/// Which model the per-step loss is reported for: the merged model (it is
/// the one producing pseudo-labels) or the freshly adapted one.
enum class EvalModel { Merged, Adapted };

struct SimConfig {
    StreamConfig stream;
    std::size_t feature_dim = 64;
    std::size_t d_prime = 16;
    std::uint64_t extractor_seed = 101;
    std::uint64_t projection_seed = 202;
    std::uint64_t pretrain_seed = 303;
    std::size_t pretrain_samples = 256;
    AdaptOptions adapt;
    ScoringConfig scoring;
    SignPolicy policy;
    /// Number of most recent codebook entries visible to scoring; 0 = all.
    std::size_t scoring_window = 0;
    std::size_t max_entries = 0;
    bool pseudo_labels = false;
    double pseudo_label_sigma = 0.0;
    std::uint64_t pseudo_label_seed = 404;
    EvalModel eval_model = EvalModel::Merged;

    void validate() const {
        stream.validate();
        scoring.validate();
        adapt.validate();
        if (feature_dim == 0 || d_prime == 0 || d_prime > feature_dim) {
            throw ConfigError("need 0 < d_prime <= feature_dim");
        }
        if (pretrain_samples == 0) {
            throw ConfigError("pretrain_samples must be positive");
        }
        if (pseudo_label_sigma < 0.0 || !std::isfinite(pseudo_label_sigma)) {
            throw ConfigError("pseudo_label_sigma must be finite and non-negative");
        }
    }
};

struct StepRecord {
    std::uint64_t step = 0;
    double pre_merge_loss = 0.0;
    double post_merge_loss = 0.0;
    std::vector<std::uint64_t> selected_steps;
    std::vector<double> weights;
    Fingerprint fingerprint;
    /// The model post_merge_loss was measured on (in-memory only; the trace
    /// file holds the scalar fields).
    Checkpoint evaluated;
};

struct AdaptationTrace {
    std::vector<StepRecord> records;
    Codebook codebook;
};

/// Source model: closed-form ridge fit on pretrain_samples base-distribution
/// samples (no shifts), using the same labeler as the stream.
inline Checkpoint pretrain_source_model(const SimConfig& cfg, const FeatureExtractor& extractor) {
    const LabelModel labeler = make_label_model(cfg.stream);
    GaussianSampler sampler(cfg.pretrain_seed);
    const std::size_t n = cfg.pretrain_samples;
    const std::size_t d = cfg.stream.d;
    std::vector<float> inputs(n * d);
    std::vector<float> labels(n);
    Eigen::VectorXd x(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            x(static_cast<Eigen::Index>(j)) = detail::base_scale(j) * sampler.next();
            inputs[i * d + j] = static_cast<float>(x(static_cast<Eigen::Index>(j)));
        }
        labels[i] = static_cast<float>(labeler.clean_label(x) +
                                       cfg.stream.label_noise_sigma * sampler.next());
    }
    const Tensor input_tensor({n, d}, std::move(inputs));
    const Eigen::MatrixXd phi = extractor.features(input_tensor);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) y(static_cast<Eigen::Index>(i)) = labels[i];
    return head_to_checkpoint(ridge_closed_form(phi, y, cfg.adapt.ridge_lambda), 0);
}

namespace detail {

inline Eigen::MatrixXd entries_matrix(const std::vector<CodebookEntry>& entries,
                                      std::size_t d_prime) {
    Eigen::MatrixXd z(static_cast<Eigen::Index>(entries.size()),
                      static_cast<Eigen::Index>(d_prime));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        for (std::size_t j = 0; j < d_prime; ++j) {
            z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                static_cast<double>(entries[i].fingerprint.values[j]);
        }
    }
    return z;
}

inline AdaptationTrace run_adaptation(const SimConfig& cfg, MergeMethod method) {
    cfg.validate();
    const auto stream = generate_stream(cfg.stream);
    const FeatureExtractor extractor(cfg.stream.d, cfg.feature_dim, cfg.extractor_seed);
    const ProjectionMatrix projection =
        make_projection(cfg.feature_dim, cfg.d_prime, cfg.projection_seed);
    const auto theta0 =
        std::make_shared<const Checkpoint>(pretrain_source_model(cfg, extractor));

    Codebook codebook(cfg.d_prime, cfg.max_entries);
    auto latest = theta0;
    Eigen::VectorXd teacher = head_from_checkpoint(*theta0);
    GaussianSampler pseudo_rng(cfg.pseudo_label_seed);

    std::vector<StepRecord> records;
    records.reserve(cfg.stream.n_steps);
    for (std::uint64_t t = 1; t <= cfg.stream.n_steps; ++t) {
        const StreamBatch& batch = stream[static_cast<std::size_t>(t - 1)];
        const Tensor features = extractor.feature_tensor(batch.inputs);
        const Fingerprint fp = compute_fingerprint(pool_features(features), projection, t);
        if (codebook.empty()) {
            // Source anchor: theta0 keyed by the first observed batch.
            codebook.append(Fingerprint{0, fp.values}, theta0);
        }

        StepRecord record;
        record.step = t;
        record.fingerprint = fp;
        record.pre_merge_loss = evaluate_mse(extractor, head_from_checkpoint(*latest), batch);

        Checkpoint merged(0);
        switch (method) {
            case MergeMethod::CodeMerge: {
                auto entries = codebook.snapshot();
                if (cfg.scoring_window > 0 && entries.size() > cfg.scoring_window) {
                    entries.erase(entries.begin(),
                                  entries.end() - static_cast<std::ptrdiff_t>(cfg.scoring_window));
                }
                const Eigen::MatrixXd z = entries_matrix(entries, cfg.d_prime);
                const auto scores = ridge_leverage_scores(z, cfg.scoring);
                std::vector<std::uint64_t> steps;
                steps.reserve(entries.size());
                for (const auto& e : entries) steps.push_back(e.step);
                const MergePlan plan = make_merge_plan(scores, steps, cfg.scoring.top_k);
                std::vector<Checkpoint> selected;
                selected.reserve(plan.selected_steps.size());
                for (std::uint64_t step : plan.selected_steps) {
                    for (const auto& e : entries) {
                        if (e.step == step) {
                            selected.push_back(codebook.resolve(e));
                            break;
                        }
                    }
                }
                merged = sign_consistent_merge(selected, plan.weights, cfg.policy);
                record.selected_steps = plan.selected_steps;
                record.weights = plan.weights;
                break;
            }
            case MergeMethod::NaiveSequential: {
                merged = *latest;
                record.selected_steps = {latest->step()};
                record.weights = {1.0};
                break;
            }
            case MergeMethod::NoAdapt: {
                merged = *theta0;
                record.selected_steps = {0};
                record.weights = {1.0};
                break;
            }
            case MergeMethod::Mos: {
                const auto entries = codebook.snapshot();
                const std::size_t take =
                    std::min(entries.size(), static_cast<std::size_t>(cfg.scoring.top_k));
                std::vector<Checkpoint> recent;
                recent.reserve(take);
                for (std::size_t i = entries.size() - take; i < entries.size(); ++i) {
                    recent.push_back(codebook.resolve(entries[i]));
                }
                const Eigen::MatrixXd phi = extractor.features(batch.inputs);
                const Eigen::VectorXd pooled_features =
                    phi.colwise().mean().transpose();
                std::vector<Eigen::VectorXd> outputs;
                std::vector<Eigen::VectorXd> model_features;
                outputs.reserve(take);
                model_features.reserve(take);
                for (const Checkpoint& c : recent) {
                    outputs.push_back(phi * head_from_checkpoint(c));  // K forward passes
                    model_features.push_back(pooled_features);  // extractor frozen: identical
                }
                const auto weights = mos_weights(outputs, model_features,
                                                 cfg.scoring.kernel_jitter,
                                                 cfg.scoring.clamp_negative_synergy);
                merged = weighted_average_merge(recent, weights);
                record.weights = weights;
                for (const Checkpoint& c : recent) record.selected_steps.push_back(c.step());
                break;
            }
            case MergeMethod::Ema:
                break;  // handled after adaptation
        }

        if (method == MergeMethod::Ema) {
            ToyModel student{&extractor, head_from_checkpoint(*latest)};
            auto adapted = std::make_shared<const Checkpoint>(
                adapt_step(student, batch, cfg.adapt, t));
            teacher = cfg.scoring.ema_beta * teacher +
                      (1.0 - cfg.scoring.ema_beta) * head_from_checkpoint(*adapted);
            codebook.append(fp, adapted);
            latest = adapted;
            record.evaluated = head_to_checkpoint(teacher, t);
            record.selected_steps.resize(static_cast<std::size_t>(t) + 1);
            for (std::uint64_t i = 0; i <= t; ++i) record.selected_steps[i] = i;
            record.weights = ema_weights(static_cast<int>(t), cfg.scoring.ema_beta);
        } else if (method == MergeMethod::NoAdapt) {
            record.evaluated = merged;
        } else {
            StreamBatch adapt_batch = batch;
            if (cfg.pseudo_labels) {
                const Eigen::MatrixXd phi = extractor.features(batch.inputs);
                const Eigen::VectorXd preds = phi * head_from_checkpoint(merged);
                const std::uint64_t n_labels = static_cast<std::uint64_t>(preds.size());
                std::vector<float> labels(static_cast<std::size_t>(n_labels));
                for (Eigen::Index i = 0; i < preds.size(); ++i) {
                    labels[static_cast<std::size_t>(i)] = static_cast<float>(
                        preds(i) + cfg.pseudo_label_sigma * pseudo_rng.next());
                }
                adapt_batch.labels = Tensor({n_labels}, std::move(labels));
            }
            ToyModel model{&extractor, head_from_checkpoint(merged)};
            auto adapted = std::make_shared<const Checkpoint>(
                adapt_step(model, adapt_batch, cfg.adapt, t));
            codebook.append(fp, adapted);
            latest = adapted;
            record.evaluated = cfg.eval_model == EvalModel::Merged ? merged : *adapted;
        }
        record.post_merge_loss =
            evaluate_mse(extractor, head_from_checkpoint(record.evaluated), batch);
        records.push_back(std::move(record));
    }
    return AdaptationTrace{std::move(records), std::move(codebook)};
}

}  // namespace detail

/// The full pipeline: fingerprint the batch, rank the codebook by ridge
/// leverage, sign-consistently merge the top-k, adapt from the merged model,
/// append the new (fingerprint, checkpoint) pair.
inline AdaptationTrace run_codemerge(const SimConfig& cfg) {
    return detail::run_adaptation(cfg, MergeMethod::CodeMerge);
}

/// Same loop with a baseline merging rule.
inline AdaptationTrace run_baseline(const SimConfig& cfg, MergeMethod method) {
    if (method == MergeMethod::CodeMerge) {
        throw ParameterError("use run_codemerge for the codemerge method");
    }
    return detail::run_adaptation(cfg, method);
}

// ---------------------------------------------------------------------------
// Trace export
// ---------------------------------------------------------------------------

namespace detail {
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

/// Line-delimited trace: one record per step, documented header line, stable
/// field order. Byte-identical across runs with equal configs.
inline void write_trace(const AdaptationTrace& trace, std::ostream& out) {
    out << "# codemerge-trace v1: step pre_merge_loss post_merge_loss selected_steps weights\n";
    for (const auto& r : trace.records) {
        out << r.step << ' ' << detail::format_double(r.pre_merge_loss) << ' '
            << detail::format_double(r.post_merge_loss) << ' ';
        for (std::size_t i = 0; i < r.selected_steps.size(); ++i) {
            if (i > 0) out << ',';
            out << r.selected_steps[i];
        }
        out << ' ';
        for (std::size_t i = 0; i < r.weights.size(); ++i) {
            if (i > 0) out << ',';
            out << detail::format_double(r.weights[i]);
        }
        out << '\n';
    }
}

inline void write_trace(const AdaptationTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw StorageError("cannot open '" + path.string() + "' for writing");
    }
    write_trace(trace, out);
    out.flush();
    if (!out) {
        throw StorageError("write failure on '" + path.string() + "'");
    }
}

/// Earliest scheduled shift step (n_steps when the schedule is empty).
inline std::uint64_t first_shift_step(const StreamConfig& cfg) {
    std::uint64_t first = cfg.n_steps;
    for (const auto& event : cfg.schedule) first = std::min(first, event.start_step);
    return first;
}

/// Mean post-merge loss over records with step > from_step (1-based steps).
inline double mean_post_loss(const AdaptationTrace& trace, std::uint64_t from_step) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : trace.records) {
        if (r.step > from_step) {
            sum += r.post_merge_loss;
            ++count;
        }
    }
    if (count == 0) {
        throw ParameterError("no trace records after step " + std::to_string(from_step));
    }
    return sum / static_cast<double>(count);
}

/// Default desk-scale scenario: raw dim 32, features 64, fingerprints 16,
/// 40 steps with three scheduled shifts.
inline SimConfig default_sim_config() {
    SimConfig cfg;
    cfg.stream.d = 32;
    cfg.stream.batch_size = 16;
    cfg.stream.n_steps = 40;
    cfg.stream.label_noise_sigma = 0.05;
    cfg.stream.seed = 1;
    cfg.stream.schedule = {{10, ShiftKind::MeanShift, 3.0},
                           {20, ShiftKind::CovarianceRotation, 0.9},
                           {30, ShiftKind::LabelNoiseBurst, 0.4}};
    cfg.feature_dim = 64;
    cfg.d_prime = 16;
    cfg.adapt.n_grad_steps = 10;
    cfg.adapt.lr = 0.01;
    cfg.adapt.ridge_lambda = 1e-2;
    cfg.scoring.lambda = 0.1;
    cfg.scoring.top_k = 5;
    cfg.scoring.ema_beta = 0.99;
    cfg.scoring.kernel_jitter = 1e-6;
    return cfg;
}

}  // namespace codemerge
