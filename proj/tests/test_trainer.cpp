#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "uvos/trainer.hpp"

namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;

namespace {

// Fresh scratch directory under the system temp root, removed on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() /
               ("uvos_trainer_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

uvos::VideoDataset tiny_dataset(const TempDir& dir, int videos = 4, std::uint64_t seed = 9) {
    uvos::SynthSpec spec;
    spec.num_videos = videos;
    spec.frames_per_video = 24;
    spec.frame_size = 64;
    spec.objects_min = 1;
    spec.objects_max = 1;
    spec.object_size_min = 20;
    spec.object_size_max = 28;
    spec.seed = seed;
    return uvos::generate_synthetic(spec, dir.str());
}

uvos::TrainConfig desk_config() {
    uvos::TrainConfig cfg;
    cfg.batch_videos = 2;
    cfg.frame_size = 64;
    cfg.clip_len = 6;
    cfg.patch_size = 32;
    cfg.min_pair_gap = 6;
    cfg.segments = 8;
    cfg.channels = 8;
    cfg.steps_per_iteration = 2;
    cfg.bootstrap_iterations = 1;
    cfg.seed = 5;
    return cfg;
}

// A dataset stub is enough for sampling rules: only frame counts are read.
uvos::VideoDataset stub_dataset(const std::vector<std::pair<std::string, int>>& videos) {
    uvos::VideoDataset ds;
    ds.frame_size = 64;
    for (const auto& [id, frames] : videos) {
        uvos::VideoInfo v;
        v.id = id;
        for (int f = 0; f < frames; ++f) v.frame_paths.push_back(id + "/" + std::to_string(f));
        ds.videos.push_back(std::move(v));
    }
    return ds;
}

}  // namespace

TEST_CASE("train config round-trips through its file format") {
    TempDir dir("cfg");
    uvos::TrainConfig cfg;
    cfg.batch_videos = 3;
    cfg.frame_size = 128;
    cfg.clip_len = 7;
    cfg.patch_size = 36;
    cfg.min_pair_gap = 4;
    cfg.segments = 5;
    cfg.beta1 = 0.25;
    cfg.beta2 = 0.03125;
    cfg.beta3 = 0.75;
    cfg.alpha = 0.1;
    cfg.bootstrap_iterations = 3;
    cfg.momentum = 0.875;
    cfg.learning_rate = 0.0005;
    cfg.weight_decay = 0.00025;
    cfg.steps_per_iteration = 42;
    cfg.seed = 123456789012345ULL;
    cfg.channels = 24;
    cfg.temperature = 0.2;
    cfg.readout_weight = 0.5;
    cfg.kappa_weight = 0.01;

    const std::string path = dir.str() + "/cfg.txt";
    uvos::save_train_config(path, cfg);
    const uvos::TrainConfig back = uvos::parse_train_config(path);

    CHECK(back.batch_videos == cfg.batch_videos);
    CHECK(back.frame_size == cfg.frame_size);
    CHECK(back.clip_len == cfg.clip_len);
    CHECK(back.tracked_frames == cfg.tracked_frames);
    CHECK(back.patch_size == cfg.patch_size);
    CHECK(back.min_pair_gap == cfg.min_pair_gap);
    CHECK(back.segments == cfg.segments);
    CHECK(back.beta1 == cfg.beta1);
    CHECK(back.beta2 == cfg.beta2);
    CHECK(back.beta3 == cfg.beta3);
    CHECK(back.alpha == cfg.alpha);
    CHECK(back.bootstrap_iterations == cfg.bootstrap_iterations);
    CHECK(back.momentum == cfg.momentum);
    CHECK(back.learning_rate == cfg.learning_rate);
    CHECK(back.weight_decay == cfg.weight_decay);
    CHECK(back.steps_per_iteration == cfg.steps_per_iteration);
    CHECK(back.seed == cfg.seed);
    CHECK(back.channels == cfg.channels);
    CHECK(back.temperature == cfg.temperature);
    CHECK(back.readout_weight == cfg.readout_weight);
    CHECK(back.kappa_weight == cfg.kappa_weight);

    SECTION("comments, blank lines, and partial files are tolerated") {
        const std::string partial = dir.str() + "/partial.txt";
        std::ofstream os(partial);
        os << "# training knobs\n\n"
           << "batch_videos = 2   # inline comment\n"
           << "  frame_size=128\n";
        os.close();
        const uvos::TrainConfig p = uvos::parse_train_config(partial);
        CHECK(p.batch_videos == 2);
        CHECK(p.frame_size == 128);
        CHECK(p.learning_rate == uvos::TrainConfig{}.learning_rate);
    }
}

TEST_CASE("config files reject unknown keys, bad values, and malformed lines") {
    TempDir dir("cfgerr");
    auto write = [&](const std::string& name, const std::string& body) {
        const std::string p = dir.str() + "/" + name;
        std::ofstream os(p);
        os << body;
        return p;
    };

    CHECK_THROWS_AS(uvos::parse_train_config(dir.str() + "/absent.txt"), uvos::io_error);
    CHECK_THROWS_WITH(uvos::parse_train_config(write("unk.txt", "bogus_key = 3\n")),
                      ContainsSubstring("unknown key 'bogus_key'"));
    CHECK_THROWS_AS(uvos::parse_train_config(write("unk2.txt", "bogus_key = 3\n")),
                    uvos::config_error);
    CHECK_THROWS_WITH(uvos::parse_train_config(write("bad.txt", "batch_videos = banana\n")),
                      ContainsSubstring("bad value for 'batch_videos'"));
    CHECK_THROWS_WITH(uvos::parse_train_config(write("noeq.txt", "batch_videos 4\n")),
                      ContainsSubstring("missing '='"));
}

TEST_CASE("invalid training configurations are rejected") {
    auto broken = [](auto mutate) {
        uvos::TrainConfig cfg;
        mutate(cfg);
        return cfg;
    };
    auto check = [&](auto mutate, const std::string& needle) {
        const uvos::TrainConfig cfg = broken(mutate);
        CHECK_THROWS_AS(cfg.validate(), uvos::config_error);
        CHECK_THROWS_WITH(cfg.validate(), ContainsSubstring(needle));
    };

    check([](auto& c) { c.batch_videos = 0; }, "batch_videos");
    check([](auto& c) { c.frame_size = 30; }, "frame_size");
    check([](auto& c) { c.frame_size = 250; }, "frame_size");  // not divisible by 4
    check([](auto& c) { c.tracked_frames = 4; }, "three frames");
    check([](auto& c) { c.clip_len = 2; }, "clip_len");
    check([](auto& c) { c.patch_size = c.frame_size; }, "patch_size");
    check([](auto& c) { c.patch_size = 6; }, "patch_size");
    check([](auto& c) { c.patch_size = 34; }, "patch_size");  // not divisible by 4
    check([](auto& c) { c.min_pair_gap = 0; }, "min_pair_gap");
    check([](auto& c) { c.segments = 1; }, "segments");
    check([](auto& c) { c.beta2 = -0.1; }, "loss weights");
    check([](auto& c) { c.alpha = 0.0; }, "alpha");
    check([](auto& c) { c.alpha = 1.5; }, "alpha");
    check([](auto& c) { c.bootstrap_iterations = 0; }, "bootstrap_iterations");
    check([](auto& c) { c.momentum = 1.0; }, "momentum");
    check([](auto& c) { c.learning_rate = 0.0; }, "learning_rate");
    check([](auto& c) { c.weight_decay = -1.0; }, "weight_decay");
    check([](auto& c) { c.steps_per_iteration = 0; }, "steps_per_iteration");
    check([](auto& c) { c.channels = 2; }, "channels");
    check([](auto& c) { c.temperature = 0.0; }, "temperature");
    check([](auto& c) { c.readout_weight = -0.5; }, "auxiliary weights");
}

TEST_CASE("batch sampling is deterministic and respects every constraint") {
    const uvos::VideoDataset ds =
        stub_dataset({{"a", 24}, {"b", 24}, {"c", 24}, {"d", 24}});
    uvos::TrainConfig cfg = desk_config();
    cfg.batch_videos = 3;

    SECTION("same seed, same batch") {
        uvos::Rng r1(42), r2(42);
        const uvos::TrainBatch b1 = uvos::sample_batch(ds, cfg, r1);
        const uvos::TrainBatch b2 = uvos::sample_batch(ds, cfg, r2);
        REQUIRE(b1.videos.size() == b2.videos.size());
        for (std::size_t i = 0; i < b1.videos.size(); ++i) {
            const auto& x = b1.videos[i];
            const auto& y = b2.videos[i];
            CHECK(x.video == y.video);
            CHECK(x.clip == y.clip);
            CHECK(x.tracked == y.tracked);
            CHECK(x.patch.x == y.patch.x);
            CHECK(x.patch.y == y.patch.y);
            CHECK(x.pair_i == y.pair_i);
            CHECK(x.pair_j == y.pair_j);
            CHECK(x.abstract_frames == y.abstract_frames);
            CHECK(x.query_segment == y.query_segment);
            CHECK(x.instance_frame == y.instance_frame);
        }
    }

    SECTION("two hundred draws satisfy the sampling rules") {
        uvos::Rng rng(7);
        const int T = 24;
        for (int draw = 0; draw < 200; ++draw) {
            const uvos::TrainBatch batch = uvos::sample_batch(ds, cfg, rng);
            REQUIRE(static_cast<int>(batch.videos.size()) == cfg.batch_videos);
            std::set<int> picked;
            for (const auto& s : batch.videos) {
                picked.insert(s.video);

                REQUIRE(static_cast<int>(s.clip.size()) == cfg.clip_len);
                CHECK(s.clip.front() >= 0);
                CHECK(s.clip.back() < T);
                for (std::size_t f = 1; f < s.clip.size(); ++f)
                    CHECK(s.clip[f] == s.clip[f - 1] + 1);

                REQUIRE(s.tracked.size() == 3);
                CHECK(s.tracked[0] < s.tracked[1]);
                CHECK(s.tracked[1] < s.tracked[2]);
                for (int t : s.tracked) {
                    CHECK(t >= s.clip.front());
                    CHECK(t <= s.clip.back());
                }

                CHECK(s.patch.w == cfg.patch_size);
                CHECK(s.patch.h == cfg.patch_size);
                CHECK(s.patch.x >= 0);
                CHECK(s.patch.y >= 0);
                CHECK(s.patch.x + s.patch.w <= cfg.frame_size);
                CHECK(s.patch.y + s.patch.h <= cfg.frame_size);

                CHECK(std::abs(s.pair_i - s.pair_j) >= cfg.min_pair_gap);
                CHECK(s.pair_i >= 0);
                CHECK(s.pair_i < T);
                CHECK(s.pair_j >= 0);
                CHECK(s.pair_j < T);

                REQUIRE(static_cast<int>(s.abstract_frames.size()) == cfg.segments);
                for (int k = 0; k < cfg.segments; ++k) {
                    CHECK(s.abstract_frames[k] >= k * T / cfg.segments);
                    CHECK(s.abstract_frames[k] < (k + 1) * T / cfg.segments);
                }
                CHECK(s.query_segment >= 0);
                CHECK(s.query_segment < cfg.segments);
                CHECK(s.instance_frame >= 0);
                CHECK(s.instance_frame < T);
            }
            CHECK(static_cast<int>(picked.size()) == cfg.batch_videos);
        }
    }
}

TEST_CASE("ineligible videos are reported and excluded") {
    const uvos::VideoDataset ds = stub_dataset({{"long_a", 24}, {"short_b", 4}});
    uvos::TrainConfig cfg = desk_config();  // needs max(6, 7, 8) = 8 frames

    REQUIRE(uvos::min_usable_frames(cfg) == 8);

    std::ostringstream warnings;
    const std::vector<int> with_stream = uvos::eligible_videos(ds, cfg, &warnings);
    REQUIRE(with_stream == std::vector<int>{0});
    CHECK_THAT(warnings.str(),
               ContainsSubstring("skipping video 'short_b' (4 frames, need 8)"));

    const std::vector<int> silent = uvos::eligible_videos(ds, cfg);
    CHECK(silent == with_stream);

    uvos::Rng rng(1);
    CHECK_THROWS_AS(uvos::sample_batch(ds, cfg, rng), uvos::config_error);
    CHECK_THROWS_WITH(uvos::sample_batch(ds, cfg, rng),
                      ContainsSubstring("only 1 eligible videos, need 2"));
}

TEST_CASE("the optimizer decays only weight-named parameters") {
    const double lr = 0.1, wd = 0.01;

    auto run_steps = [&](double momentum, int steps) {
        uvos::ad::Var w = uvos::ad::param(uvos::Tensor::full({2}, 1.0));
        uvos::ad::Var b = uvos::ad::param(uvos::Tensor::full({2}, 1.0));
        std::vector<std::pair<std::string, uvos::ad::Var>> params = {{"a.weight", w},
                                                                     {"a.bias", b}};
        uvos::SGD opt(lr, momentum, wd);
        const uvos::Tensor g = uvos::Tensor::full({2}, 0.5);
        for (int s = 0; s < steps; ++s) {
            uvos::ad::Var loss = uvos::ad::sum_all(
                uvos::ad::add(uvos::ad::mul(w, uvos::ad::constant(g)),
                              uvos::ad::mul(b, uvos::ad::constant(g))));
            uvos::ad::backward(loss);
            opt.step(params);
        }
        return std::make_pair(w.value()[0], b.value()[0]);
    };

    SECTION("one plain step") {
        const auto [wv, bv] = run_steps(0.0, 1);
        // gradient is 0.5 everywhere; the weight also feels wd * value
        CHECK(wv == Catch::Approx(1.0 - lr * (0.5 + wd * 1.0)).margin(1e-12));
        CHECK(bv == Catch::Approx(1.0 - lr * 0.5).margin(1e-12));
    }

    SECTION("momentum accumulates velocity across steps") {
        const double m = 0.5;
        // bias sees a constant gradient g = 0.5:
        //   v1 = g, v2 = m v1 + g; b = 1 - lr (v1 + v2)
        const double v1 = 0.5, v2 = m * v1 + 0.5;
        const auto [wv, bv] = run_steps(m, 2);
        CHECK(bv == Catch::Approx(1.0 - lr * (v1 + v2)).margin(1e-12));
        // weight: decay term tracks the shrinking value
        const double uw1 = 0.5 + wd * 1.0;
        const double w1 = 1.0 - lr * uw1;
        const double uw2 = m * uw1 + 0.5 + wd * w1;
        CHECK(wv == Catch::Approx(w1 - lr * uw2).margin(1e-12));
    }

    SECTION("parameters that never received a gradient stay put") {
        uvos::ad::Var used = uvos::ad::param(uvos::Tensor::full({2}, 1.0));
        uvos::ad::Var idle = uvos::ad::param(uvos::Tensor::full({2}, 3.0));
        std::vector<std::pair<std::string, uvos::ad::Var>> params = {{"u.weight", used},
                                                                     {"i.weight", idle}};
        uvos::SGD opt(lr, 0.0, 0.0);
        uvos::ad::Var loss = uvos::ad::sum_all(used);
        uvos::ad::backward(loss);
        opt.step(params);
        CHECK(used.value()[0] != 1.0);
        CHECK(idle.value()[0] == 3.0);
        CHECK(idle.grad().empty());
    }
}

TEST_CASE("the objective is the recorded weighted blend of the granularity terms") {
    TempDir dir("loss");
    const uvos::VideoDataset ds = tiny_dataset(dir);
    const uvos::TrainConfig cfg = desk_config();

    uvos::BackboneConfig bc;
    bc.channels = cfg.channels;
    bc.seed = cfg.seed;

    auto breakdown_for = [&](uvos::Network& net) {
        uvos::FrameCache cache(ds);
        uvos::PriorStore priors(cache);
        uvos::BootstrapState boot;
        boot.alpha = cfg.alpha;
        uvos::Rng rng(3);
        const uvos::TrainBatch batch = uvos::sample_batch(ds, cfg, rng);
        return uvos::total_loss(net, cache, priors, boot, ds, batch, cfg);
    };

    uvos::Network net(bc, cfg.frame_size / 4);
    const uvos::LossBreakdown lb = breakdown_for(net);

    CHECK(std::isfinite(lb.frame));
    CHECK(std::isfinite(lb.short_term));
    CHECK(std::isfinite(lb.long_term));
    CHECK(std::isfinite(lb.global));
    CHECK(std::isfinite(lb.readout));
    CHECK(std::isfinite(lb.kappa));
    CHECK(lb.frame >= 0.0);
    CHECK(lb.short_term >= 0.0);
    CHECK(lb.long_term <= 1e-12);  // negative gated affinity mass
    CHECK(lb.global >= 0.0);
    CHECK(lb.readout >= 0.0);

    const double reconstructed =
        lb.frame + cfg.beta1 * lb.short_term + cfg.beta2 * lb.long_term + cfg.beta3 * lb.global;
    CHECK(std::abs(lb.total - reconstructed) <= 1e-12);

    REQUIRE(lb.objective.defined());
    const double obj = lb.objective.value()[0];
    CHECK(std::isfinite(obj));
    const double expected_obj =
        lb.total + cfg.readout_weight * lb.readout + cfg.kappa_weight * lb.kappa;
    CHECK(obj == Catch::Approx(expected_obj).margin(1e-9));

    SECTION("a fresh identically seeded network reproduces the value") {
        uvos::Network net2(bc, cfg.frame_size / 4);
        const uvos::LossBreakdown lb2 = breakdown_for(net2);
        CHECK(lb2.total == Catch::Approx(lb.total).margin(1e-12));
        CHECK(lb2.objective.value()[0] == Catch::Approx(obj).margin(1e-12));
    }

    SECTION("an empty batch is rejected") {
        uvos::FrameCache cache(ds);
        uvos::PriorStore priors(cache);
        uvos::BootstrapState boot;
        uvos::TrainBatch empty;
        CHECK_THROWS_AS(uvos::total_loss(net, cache, priors, boot, ds, empty, cfg),
                        uvos::config_error);
    }
}

TEST_CASE("re-labeling stores binary feature-resolution masks and is idempotent") {
    TempDir dir("boot");
    const uvos::VideoDataset ds = tiny_dataset(dir, 3);
    const uvos::TrainConfig cfg = desk_config();

    uvos::BackboneConfig bc;
    bc.channels = cfg.channels;
    bc.seed = cfg.seed;
    uvos::Network net(bc, cfg.frame_size / 4);
    uvos::FrameCache cache(ds);

    uvos::BootstrapState st;
    uvos::bootstrap_relabel(net, ds, cache, cfg, st);

    REQUIRE(static_cast<int>(st.previous.size()) == ds.video_count());
    const int grid = cfg.frame_size / 4;
    for (int v = 0; v < ds.video_count(); ++v) {
        const auto& id = ds.videos[v].id;
        REQUIRE(st.previous.count(id) == 1);
        const auto& preds = st.previous.at(id);
        REQUIRE(static_cast<int>(preds.size()) == ds.videos[v].frame_count());
        for (int f = 0; f < static_cast<int>(preds.size()); ++f) {
            REQUIRE(st.has(id, f));
            const uvos::Tensor& m = preds[f];
            REQUIRE(m.ndim() == 2);
            REQUIRE(m.dim(0) == grid);
            REQUIRE(m.dim(1) == grid);
            for (int i = 0; i < m.size(); ++i)
                REQUIRE((m[i] == 0.0 || m[i] == 1.0));
        }
    }

    uvos::BootstrapState st2;
    uvos::bootstrap_relabel(net, ds, cache, cfg, st2);
    for (const auto& [id, preds] : st.previous) {
        REQUIRE(st2.previous.count(id) == 1);
        const auto& other = st2.previous.at(id);
        REQUIRE(other.size() == preds.size());
        for (std::size_t f = 0; f < preds.size(); ++f)
            for (int i = 0; i < preds[f].size(); ++i)
                REQUIRE(other[f][i] == preds[f][i]);
    }
}

TEST_CASE("a short training run logs every step and writes checkpoints") {
    TempDir data("traindata");
    const uvos::VideoDataset ds = tiny_dataset(data);
    uvos::TrainConfig cfg = desk_config();
    cfg.steps_per_iteration = 2;
    cfg.bootstrap_iterations = 2;

    TempDir out("trainout");
    std::ostringstream progress;
    const uvos::TrainResult result = uvos::train(cfg, ds, out.str(), &progress);

    REQUIRE(result.log.size() == 4);
    for (std::size_t i = 0; i < result.log.size(); ++i) {
        const uvos::LogRow& row = result.log[i];
        CHECK(row.step == static_cast<int>(i) + 1);
        CHECK(row.iter == (i < 2 ? 1 : 2));
        const double reconstructed = row.frame + cfg.beta1 * row.short_term +
                                     cfg.beta2 * row.long_term + cfg.beta3 * row.global;
        CHECK(std::abs(row.total - reconstructed) <= 1e-12);
    }

    REQUIRE(result.iteration_checkpoints.size() == 2);
    CHECK(fs::exists(result.iteration_checkpoints[0]));
    CHECK(fs::exists(result.iteration_checkpoints[1]));
    CHECK(fs::exists(result.final_checkpoint));
    REQUIRE(fs::exists(result.log_path));

    // The on-disk log reproduces the in-memory rows bit for bit.
    std::ifstream is(result.log_path);
    std::string header;
    REQUIRE(std::getline(is, header));
    CHECK(header == "step\titer\tL_frame\tL_short\tL_long\tL_global\tL_readout\ttotal");
    for (const uvos::LogRow& row : result.log) {
        std::string line;
        REQUIRE(std::getline(is, line));
        std::istringstream ls(line);
        int step = 0, iter = 0;
        double f = 0, s = 0, l = 0, g = 0, r = 0, t = 0;
        REQUIRE((ls >> step >> iter >> f >> s >> l >> g >> r >> t));
        CHECK(step == row.step);
        CHECK(iter == row.iter);
        CHECK(f == row.frame);
        CHECK(s == row.short_term);
        CHECK(l == row.long_term);
        CHECK(g == row.global);
        CHECK(r == row.readout);
        CHECK(t == row.total);
    }

    CHECK_THAT(progress.str(), ContainsSubstring("step 1 iter 1"));

    SECTION("the final checkpoint restores a working network") {
        uvos::Network net = uvos::load_checkpoint(result.final_checkpoint);
        const uvos::Tensor feat = net.phi_eval(uvos::Tensor({3, 64, 64}));
        CHECK(feat.dim(0) == cfg.channels);
        CHECK(feat.dim(1) == cfg.frame_size / 4);
    }
}

TEST_CASE("training refuses a dataset with too few usable videos") {
    const uvos::VideoDataset ds = stub_dataset({{"only", 24}});
    uvos::TrainConfig cfg = desk_config();  // wants 2 videos
    TempDir out("trainfail");
    std::ostringstream progress;
    CHECK_THROWS_AS(uvos::train(cfg, ds, out.str(), &progress), uvos::config_error);
}
