// Copyright 2026 The uvos Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "uvos/autodiff.hpp"
#include "uvos/checkpoint.hpp"
#include "uvos/common.hpp"
#include "uvos/core.hpp"
#include "uvos/dataio.hpp"
#include "uvos/imageops.hpp"
#include "uvos/inference.hpp"
#include "uvos/loss_frame_short.hpp"
#include "uvos/loss_long_video.hpp"
#include "uvos/network.hpp"
#include "uvos/priors.hpp"

// Batch assembly, joint optimization of the four granularity losses, and the
// iterative bootstrapping loop.
namespace uvos {

// All knobs of a training run. The on-disk config format is a flat
// `key = value` file whose keys are exactly these field names.
struct TrainConfig {
    int batch_videos = 16;        // videos per step (N)
    int frame_size = 256;         // square resize applied to every frame
    int clip_len = 6;             // consecutive frames per tracking clip
    int tracked_frames = 3;       // frames kept from the clip (fixed schedule)
    int patch_size = 64;          // square tracking patch, pixels
    int min_pair_gap = 6;         // minimum |i-j| for the disordered pair
    int segments = 8;             // video-abstract segments (K)
    double beta1 = 0.1;           // short-term weight
    double beta2 = 0.02;          // long-term weight
    double beta3 = 0.5;           // video-granularity weight
    double alpha = 0.05;          // prior weight in the bootstrapped target
    int bootstrap_iterations = 2; // outer re-labeling iterations
    double momentum = 0.9;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;   // applied to convolution/linear weights only
    int steps_per_iteration = 300;
    std::uint64_t seed = 0;
    int channels = 64;            // backbone width
    double temperature = 0.1;     // instance-discrimination softmax temperature
    double readout_weight = 1.0;  // auxiliary readout-head loss weight
    double kappa_weight = 0.02;   // auxiliary alignment-regressor loss weight

    void validate() const {
        if (batch_videos < 1) throw config_error("TrainConfig: batch_videos must be >= 1");
        if (frame_size < 32 || frame_size % 4 != 0)
            throw config_error("TrainConfig: frame_size must be >= 32 and divisible by 4");
        if (tracked_frames != 3)
            throw config_error("TrainConfig: the tracking schedule is three frames");
        if (clip_len < tracked_frames)
            throw config_error("TrainConfig: clip_len must be >= tracked_frames");
        if (patch_size < 8 || patch_size % 4 != 0 || patch_size >= frame_size)
            throw config_error(
                "TrainConfig: patch_size must be >= 8, divisible by 4, and smaller than "
                "frame_size");
        if (min_pair_gap < 1) throw config_error("TrainConfig: min_pair_gap must be >= 1");
        if (segments < 2) throw config_error("TrainConfig: segments must be >= 2");
        if (beta1 <= 0.0 || beta2 <= 0.0 || beta3 <= 0.0)
            throw config_error("TrainConfig: loss weights must be positive");
        if (alpha <= 0.0 || alpha > 1.0) throw config_error("TrainConfig: alpha outside (0,1]");
        if (bootstrap_iterations < 1)
            throw config_error("TrainConfig: bootstrap_iterations must be >= 1");
        if (momentum < 0.0 || momentum >= 1.0)
            throw config_error("TrainConfig: momentum outside [0,1)");
        if (learning_rate <= 0.0) throw config_error("TrainConfig: learning_rate must be > 0");
        if (weight_decay < 0.0) throw config_error("TrainConfig: weight_decay must be >= 0");
        if (steps_per_iteration < 1)
            throw config_error("TrainConfig: steps_per_iteration must be >= 1");
        if (channels < 4) throw config_error("TrainConfig: channels must be >= 4");
        if (temperature <= 0.0) throw config_error("TrainConfig: temperature must be > 0");
        if (readout_weight < 0.0 || kappa_weight < 0.0)
            throw config_error("TrainConfig: auxiliary weights must be >= 0");
    }
};

inline TrainConfig parse_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("parse_train_config: cannot open: " + path);
    TrainConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("parse_train_config: missing '=' on line " +
                               std::to_string(line_no));
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "batch_videos") cfg.batch_videos = std::stoi(val);
            else if (key == "frame_size") cfg.frame_size = std::stoi(val);
            else if (key == "clip_len") cfg.clip_len = std::stoi(val);
            else if (key == "tracked_frames") cfg.tracked_frames = std::stoi(val);
            else if (key == "patch_size") cfg.patch_size = std::stoi(val);
            else if (key == "min_pair_gap") cfg.min_pair_gap = std::stoi(val);
            else if (key == "segments") cfg.segments = std::stoi(val);
            else if (key == "beta1") cfg.beta1 = std::stod(val);
            else if (key == "beta2") cfg.beta2 = std::stod(val);
            else if (key == "beta3") cfg.beta3 = std::stod(val);
            else if (key == "alpha") cfg.alpha = std::stod(val);
            else if (key == "bootstrap_iterations") cfg.bootstrap_iterations = std::stoi(val);
            else if (key == "momentum") cfg.momentum = std::stod(val);
            else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
            else if (key == "weight_decay") cfg.weight_decay = std::stod(val);
            else if (key == "steps_per_iteration") cfg.steps_per_iteration = std::stoi(val);
            else if (key == "seed") cfg.seed = std::stoull(val);
            else if (key == "channels") cfg.channels = std::stoi(val);
            else if (key == "temperature") cfg.temperature = std::stod(val);
            else if (key == "readout_weight") cfg.readout_weight = std::stod(val);
            else if (key == "kappa_weight") cfg.kappa_weight = std::stod(val);
            else throw config_error("parse_train_config: unknown key '" + key + "'");
        } catch (const config_error&) {
            throw;
        } catch (const std::invalid_argument&) {
            throw config_error("parse_train_config: bad value for '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

namespace detail {
// Shortest decimal that parses back to the same double.
inline std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}
}  // namespace detail

inline void save_train_config(const std::string& path, const TrainConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw io_error("save_train_config: cannot open: " + path);
    os << "batch_videos = " << cfg.batch_videos << '\n'
       << "frame_size = " << cfg.frame_size << '\n'
       << "clip_len = " << cfg.clip_len << '\n'
       << "tracked_frames = " << cfg.tracked_frames << '\n'
       << "patch_size = " << cfg.patch_size << '\n'
       << "min_pair_gap = " << cfg.min_pair_gap << '\n'
       << "segments = " << cfg.segments << '\n'
       << "beta1 = " << detail::fmt_double(cfg.beta1) << '\n'
       << "beta2 = " << detail::fmt_double(cfg.beta2) << '\n'
       << "beta3 = " << detail::fmt_double(cfg.beta3) << '\n'
       << "alpha = " << detail::fmt_double(cfg.alpha) << '\n'
       << "bootstrap_iterations = " << cfg.bootstrap_iterations << '\n'
       << "momentum = " << detail::fmt_double(cfg.momentum) << '\n'
       << "learning_rate = " << detail::fmt_double(cfg.learning_rate) << '\n'
       << "weight_decay = " << detail::fmt_double(cfg.weight_decay) << '\n'
       << "steps_per_iteration = " << cfg.steps_per_iteration << '\n'
       << "seed = " << cfg.seed << '\n'
       << "channels = " << cfg.channels << '\n'
       << "temperature = " << detail::fmt_double(cfg.temperature) << '\n'
       << "readout_weight = " << detail::fmt_double(cfg.readout_weight) << '\n'
       << "kappa_weight = " << detail::fmt_double(cfg.kappa_weight) << '\n';
    if (!os) throw io_error("save_train_config: write failed: " + path);
}

// Everything sampled for one video within a batch.
struct VideoSample {
    int video = 0;                    // dataset index
    std::vector<int> clip;            // clip_len consecutive frame indices
    std::vector<int> tracked;         // 3 ascending members of the clip
    Rect patch;                       // pixel patch on the first tracked frame
    int pair_i = 0, pair_j = 0;       // disordered pair, |i-j| >= min_pair_gap
    std::vector<int> abstract_frames; // one frame per segment, ascending bins
    int query_segment = 0;            // segment whose readout is supervised
    int instance_frame = 0;           // frame embedded for discrimination
};

struct TrainBatch {
    std::vector<VideoSample> videos;
};

// A video is usable when every sampling rule has room: the clip, the
// disordered pair, and one frame per abstract segment.
inline int min_usable_frames(const TrainConfig& cfg) {
    return std::max(cfg.clip_len, std::max(cfg.min_pair_gap + 1, cfg.segments));
}

// Indices of usable videos; ineligible ones are reported to `warnings` when
// given (the trainer passes a stream once at startup, sampling stays silent).
inline std::vector<int> eligible_videos(const VideoDataset& ds, const TrainConfig& cfg,
                                        std::ostream* warnings = nullptr) {
    const int need = min_usable_frames(cfg);
    std::vector<int> out;
    for (int v = 0; v < ds.video_count(); ++v) {
        if (ds.videos[v].frame_count() >= need) {
            out.push_back(v);
        } else if (warnings) {
            *warnings << "warning: skipping video '" << ds.videos[v].id << "' ("
                      << ds.videos[v].frame_count() << " frames, need " << need << ")\n";
        }
    }
    return out;
}

namespace detail {
// k distinct draws from pool, order randomized by a partial Fisher-Yates pass.
inline std::vector<int> sample_distinct(std::vector<int> pool, int k, Rng& rng) {
    const int n = static_cast<int>(pool.size());
    for (int i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.uniform_int(0, n - 1 - i)]);
    pool.resize(k);
    return pool;
}
}  // namespace detail

inline TrainBatch sample_batch(const VideoDataset& ds, const TrainConfig& cfg, Rng& rng) {
    const std::vector<int> pool = eligible_videos(ds, cfg);
    if (static_cast<int>(pool.size()) < cfg.batch_videos)
        throw config_error("sample_batch: only " + std::to_string(pool.size()) +
                           " eligible videos, need " + std::to_string(cfg.batch_videos));
    TrainBatch batch;
    for (int v : detail::sample_distinct(pool, cfg.batch_videos, rng)) {
        const int T = ds.videos[v].frame_count();
        VideoSample s;
        s.video = v;

        const int clip_start = rng.uniform_int(0, T - cfg.clip_len);
        for (int f = 0; f < cfg.clip_len; ++f) s.clip.push_back(clip_start + f);

        std::vector<int> offsets(cfg.clip_len);
        for (int i = 0; i < cfg.clip_len; ++i) offsets[i] = i;
        std::vector<int> keep = detail::sample_distinct(offsets, cfg.tracked_frames, rng);
        std::sort(keep.begin(), keep.end());
        for (int o : keep) s.tracked.push_back(clip_start + o);

        s.patch.w = s.patch.h = cfg.patch_size;
        s.patch.x = rng.uniform_int(0, cfg.frame_size - cfg.patch_size);
        s.patch.y = rng.uniform_int(0, cfg.frame_size - cfg.patch_size);

        // i is drawn from the positions that admit at least one partner.
        std::vector<int> valid_i;
        for (int i = 0; i < T; ++i)
            if (i >= cfg.min_pair_gap || i + cfg.min_pair_gap <= T - 1) valid_i.push_back(i);
        s.pair_i = valid_i[rng.uniform_int(0, static_cast<int>(valid_i.size()) - 1)];
        std::vector<int> valid_j;
        for (int j = 0; j < T; ++j)
            if (std::abs(j - s.pair_i) >= cfg.min_pair_gap) valid_j.push_back(j);
        s.pair_j = valid_j[rng.uniform_int(0, static_cast<int>(valid_j.size()) - 1)];

        // One frame per segment bin [kT/K, (k+1)T/K).
        for (int k = 0; k < cfg.segments; ++k) {
            const int lo = k * T / cfg.segments;
            const int hi = (k + 1) * T / cfg.segments;
            s.abstract_frames.push_back(rng.uniform_int(lo, hi - 1));
        }
        s.query_segment = rng.uniform_int(0, cfg.segments - 1);
        s.instance_frame = rng.uniform_int(0, T - 1);
        batch.videos.push_back(std::move(s));
    }
    return batch;
}

// Lazily computed saliency priors, stored binarized at feature resolution.
class PriorStore {
public:
    explicit PriorStore(FrameCache& cache) : cache_(&cache) {}

    const Tensor& grid_prior(int v, int f) {
        const std::int64_t key = static_cast<std::int64_t>(v) << 32 | static_cast<unsigned>(f);
        auto it = store_.find(key);
        if (it == store_.end()) {
            const Tensor& frame = cache_->frame(v, f);
            PriorMask pm = prior_from_frame(frame);
            it = store_.emplace(key, resize_nearest(pm.data, frame.dim(1) / 4, frame.dim(2) / 4))
                     .first;
        }
        return it->second;
    }

private:
    FrameCache* cache_;
    std::map<std::int64_t, Tensor> store_;
};

// One optimization step's loss values. `total` is the weighted sum of the
// four granularity terms only; the auxiliary readout and alignment losses are
// optimized alongside but reported separately.
struct LossBreakdown {
    double frame = 0.0;
    double short_term = 0.0;
    double long_term = 0.0;
    double global = 0.0;
    double readout = 0.0;
    double kappa = 0.0;
    double total = 0.0;
    ad::Var objective;  // scalar the optimizer minimizes
};

namespace detail {
// Frame-granularity target loss: the plain binary cross-entropy against the
// saliency prior in iteration 1, the bootstrapped convex blend afterwards.
inline ad::Var frame_target_loss(const ad::Var& P, const Tensor& Q, const BootstrapState& boot,
                                 const std::string& video_id, int frame) {
    if (boot.iteration >= 2 && boot.has(video_id, frame))
        return bootstrap_frame_loss(P, Q, boot.prediction(video_id, frame), boot.alpha);
    return frame_loss(P, Q);
}
}  // namespace detail

// Assembles the full objective for one batch. Each granularity term is the
// mean over the batch's videos; the affinity fed to the alignment regressor
// is detached so the regressor trains against the backbone rather than
// steering it.
inline LossBreakdown total_loss(Network& net, FrameCache& cache, PriorStore& priors,
                                const BootstrapState& boot, const VideoDataset& ds,
                                const TrainBatch& batch, const TrainConfig& cfg) {
    if (batch.videos.empty()) throw config_error("total_loss: empty batch");
    const int N = static_cast<int>(batch.videos.size());
    const double inv_n = 1.0 / N;

    ad::Var frame_sum, short_sum, long_sum, readout_sum, kappa_sum;
    auto accumulate = [](ad::Var& acc, const ad::Var& term) {
        acc = acc.defined() ? ad::add(acc, term) : term;
    };

    std::vector<ad::Var> query_embs;
    InstanceBank bank;

    for (const VideoSample& s : batch.videos) {
        const std::string& vid = ds.videos[s.video].id;

        // Features are shared between terms that touch the same frame; the
        // first use fixes the batch-norm statistics update for the step.
        std::map<int, ad::Var> feats;
        auto feat = [&](int f) {
            auto it = feats.find(f);
            if (it == feats.end())
                it = feats.emplace(f, net.phi(ad::constant(cache.frame(s.video, f)), true)).first;
            return it->second;
        };

        // Frame granularity: mean over the tracked frames.
        ad::Var frame_v;
        for (int tf : s.tracked) {
            ad::Var P = net.rho(feat(tf));
            accumulate(frame_v, detail::frame_target_loss(P, priors.grid_prior(s.video, tf),
                                                          boot, vid, tf));
        }
        accumulate(frame_sum, ad::scale(frame_v, 1.0 / static_cast<int>(s.tracked.size())));

        // Short-term granularity: forward-backward patch tracking.
        PatchTrack track = forward_backward(net, cache.frame(s.video, s.tracked[0]),
                                            cache.frame(s.video, s.tracked[1]),
                                            cache.frame(s.video, s.tracked[2]), s.patch, true,
                                            feat(s.tracked[0]), feat(s.tracked[1]),
                                            feat(s.tracked[2]));
        accumulate(short_sum, short_term_loss(track));

        // Long-term granularity: geometrically gated affinity mass, plus the
        // soft-gate auxiliary that actually trains the alignment regressor.
        ad::Var xi = feat(s.pair_i), xj = feat(s.pair_j);
        const int gh = xi.value().dim(1), gw = xi.value().dim(2);
        MatchPair pair;
        pair.frame_i = s.pair_i;
        pair.frame_j = s.pair_j;
        pair.affinity_ij = pairwise_affinity(xi, xj);
        pair.affinity_ji = pairwise_affinity(xj, xi);
        ad::Var raw_ij = net.kappa_raw(ad::constant(pair.affinity_ij.value()));
        ad::Var raw_ji = net.kappa_raw(ad::constant(pair.affinity_ji.value()));
        pair.tau_ij = TransformParams::from_raw(raw_ij.value().data());
        pair.tau_ji = TransformParams::from_raw(raw_ji.value().data());
        pair.gate_ij = consistency_gate(pair.tau_ij, gw, gh);
        pair.gate_ji = consistency_gate(pair.tau_ji, gw, gh);
        accumulate(long_sum, long_term_loss(pair));
        accumulate(kappa_sum,
                   ad::scale(ad::add(kappa_soft_alignment(raw_ij, pair.affinity_ij.value(), gw, gh),
                                     kappa_soft_alignment(raw_ji, pair.affinity_ji.value(), gw, gh)),
                             0.5));

        // Video granularity: aggregate the abstract at the query segment,
        // supervise the readout head, and keep the pooled embedding for the
        // batch-level discrimination loss.
        std::vector<ad::Var> abstract;
        abstract.reserve(s.abstract_frames.size());
        for (int f : s.abstract_frames) abstract.push_back(feat(f));
        AggregateResult agg = aggregate_global(abstract, s.query_segment);
        const int qf = s.abstract_frames[s.query_segment];
        ad::Var P_r = net.upsilon(agg.r);
        accumulate(readout_sum, detail::frame_target_loss(P_r, priors.grid_prior(s.video, qf),
                                                          boot, vid, qf));
        query_embs.push_back(embed_global(agg.r));
        bank.embeddings.push_back(instance_embedding(feat(s.instance_frame)));
    }

    ad::Var frame_mean = ad::scale(frame_sum, inv_n);
    ad::Var short_mean = ad::scale(short_sum, inv_n);
    ad::Var long_mean = ad::scale(long_sum, inv_n);
    ad::Var readout_mean = ad::scale(readout_sum, inv_n);
    ad::Var kappa_mean = ad::scale(kappa_sum, inv_n);
    ad::Var global = global_loss(query_embs, bank, cfg.temperature);

    LossBreakdown out;
    out.frame = frame_mean.value()[0];
    out.short_term = short_mean.value()[0];
    out.long_term = long_mean.value()[0];
    out.global = global.value()[0];
    out.readout = readout_mean.value()[0];
    out.kappa = kappa_mean.value()[0];
    out.total = out.frame + cfg.beta1 * out.short_term + cfg.beta2 * out.long_term +
                cfg.beta3 * out.global;
    out.objective = ad::add(
        ad::add(ad::add(frame_mean, ad::scale(short_mean, cfg.beta1)),
                ad::add(ad::scale(long_mean, cfg.beta2), ad::scale(global, cfg.beta3))),
        ad::add(ad::scale(readout_mean, cfg.readout_weight),
                ad::scale(kappa_mean, cfg.kappa_weight)));
    return out;
}

// Plain SGD with momentum. Weight decay is folded into the gradient and
// applied only to parameters named `*.weight`; parameters that received no
// gradient are left untouched.
class SGD {
public:
    SGD(double learning_rate, double momentum, double weight_decay)
        : lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {}

    void step(std::vector<std::pair<std::string, ad::Var>>& params) {
        for (auto& [name, var] : params) {
            const Tensor& g = var.grad();
            if (g.empty()) continue;
            Tensor& w = var.value_mut();
            Tensor& v = velocity_[name];
            if (v.empty()) v = Tensor(w.shape());
            const bool decay = weight_decay_ != 0.0 && name.ends_with(".weight");
            for (int i = 0; i < w.size(); ++i) {
                const double gi = decay ? g[i] + weight_decay_ * w[i] : g[i];
                v[i] = momentum_ * v[i] + gi;
                w[i] -= lr_ * v[i];
            }
            var.zero_grad();
        }
    }

private:
    double lr_, momentum_, weight_decay_;
    std::map<std::string, Tensor> velocity_;
};

// Re-labels every frame of every video with the current readout, binarized at
// 0.5 and stored at feature resolution. Re-running without a parameter change
// reproduces the same store.
inline void bootstrap_relabel(Network& net, const VideoDataset& ds, FrameCache& cache,
                              const TrainConfig& cfg, BootstrapState& state) {
    for (int v = 0; v < ds.video_count(); ++v) {
        const int T = ds.videos[v].frame_count();
        if (T < cfg.segments) continue;  // too short for an abstract; never sampled either
        std::vector<Tensor> frames;
        frames.reserve(T);
        for (int f = 0; f < T; ++f) frames.push_back(cache.frame(v, f));
        const std::vector<Tensor> feats = detail::eval_features(net, frames);
        std::vector<Tensor> preds(T);
        for (int t = 0; t < T; ++t) {
            Tensor p = readout_probability(net, feats, t, cfg.segments);
            Tensor m(p.shape());
            for (int i = 0; i < p.size(); ++i) m[i] = p[i] > 0.5 ? 1.0 : 0.0;
            preds[t] = std::move(m);
        }
        state.previous[ds.videos[v].id] = std::move(preds);
    }
}

struct LogRow {
    int step = 0;  // 1-based global step
    int iter = 0;
    double frame = 0.0, short_term = 0.0, long_term = 0.0, global = 0.0, readout = 0.0;
    double total = 0.0;
};

struct TrainResult {
    std::vector<LogRow> log;
    std::vector<std::string> iteration_checkpoints;
    std::string final_checkpoint;
    std::string log_path;
};

namespace detail {
inline std::string describe_sample(const VideoDataset& ds, const VideoSample& s) {
    std::ostringstream os;
    os << "video=" << ds.videos[s.video].id << " clip=[" << s.clip.front() << ".."
       << s.clip.back() << "] tracked=(" << s.tracked[0] << "," << s.tracked[1] << ","
       << s.tracked[2] << ") patch=(" << s.patch.x << "," << s.patch.y << "," << s.patch.w
       << ") pair=(" << s.pair_i << "," << s.pair_j << ") abstract=[";
    for (std::size_t k = 0; k < s.abstract_frames.size(); ++k)
        os << (k ? "," : "") << s.abstract_frames[k];
    os << "] query_segment=" << s.query_segment << " instance=" << s.instance_frame;
    return os.str();
}

inline std::string describe_batch(const VideoDataset& ds, const TrainBatch& batch) {
    std::ostringstream os;
    for (const auto& s : batch.videos) os << "  " << describe_sample(ds, s) << '\n';
    return os.str();
}
}  // namespace detail

// Full training loop: bootstrap_iterations outer iterations of
// steps_per_iteration SGD steps each, with a re-labeling pass between
// iterations. Writes an append-only tab-delimited loss log and a checkpoint
// per iteration plus `final.ckpt` under out_dir. Deterministic for a fixed
// config and dataset.
inline TrainResult train(const TrainConfig& cfg, const VideoDataset& ds,
                         const std::string& out_dir, std::ostream* progress = nullptr) {
    cfg.validate();
    fs::create_directories(out_dir);

    BackboneConfig bc;
    bc.channels = cfg.channels;
    bc.seed = cfg.seed;
    Network net(bc, cfg.frame_size / 4);

    FrameCache cache(ds);
    PriorStore priors(cache);
    const std::vector<int> usable =
        eligible_videos(ds, cfg, progress ? progress : &std::cerr);
    if (static_cast<int>(usable.size()) < cfg.batch_videos)
        throw config_error("train: only " + std::to_string(usable.size()) +
                           " eligible videos, need " + std::to_string(cfg.batch_videos));

    SGD opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    auto params = net.named_params();
    BootstrapState boot;
    boot.alpha = cfg.alpha;
    Rng rng(cfg.seed);

    TrainResult result;
    result.log_path = out_dir + "/loss_log.txt";
    std::ofstream log_os(result.log_path);
    if (!log_os) throw io_error("train: cannot open log: " + result.log_path);
    log_os << "step\titer\tL_frame\tL_short\tL_long\tL_global\tL_readout\ttotal\n";

    int global_step = 0;
    for (int h = 1; h <= cfg.bootstrap_iterations; ++h) {
        boot.iteration = h;
        for (int s = 0; s < cfg.steps_per_iteration; ++s) {
            ++global_step;
            TrainBatch batch = sample_batch(ds, cfg, rng);
            LossBreakdown lb = total_loss(net, cache, priors, boot, ds, batch, cfg);
            if (!std::isfinite(lb.objective.value()[0]))
                throw numeric_error("train: non-finite loss at step " +
                                    std::to_string(global_step) + "; batch:\n" +
                                    detail::describe_batch(ds, batch));
            ad::backward(lb.objective);
            opt.step(params);

            LogRow row{global_step, h,          lb.frame,   lb.short_term,
                       lb.long_term, lb.global, lb.readout, lb.total};
            result.log.push_back(row);
            log_os << row.step << '\t' << row.iter << '\t' << detail::fmt_double(row.frame)
                   << '\t' << detail::fmt_double(row.short_term) << '\t'
                   << detail::fmt_double(row.long_term) << '\t'
                   << detail::fmt_double(row.global) << '\t'
                   << detail::fmt_double(row.readout) << '\t' << detail::fmt_double(row.total)
                   << '\n';
            log_os.flush();
            if (progress && (global_step == 1 || global_step % 10 == 0))
                *progress << "step " << global_step << " iter " << h << " total " << row.total
                          << '\n';
        }
        const std::string ckpt = out_dir + "/iter_" + std::to_string(h) + ".ckpt";
        save_checkpoint(ckpt, net);
        result.iteration_checkpoints.push_back(ckpt);
        if (h < cfg.bootstrap_iterations) bootstrap_relabel(net, ds, cache, cfg, boot);
    }

    result.final_checkpoint = out_dir + "/final.ckpt";
    save_checkpoint(result.final_checkpoint, net);
    return result;
}

}  // namespace uvos
