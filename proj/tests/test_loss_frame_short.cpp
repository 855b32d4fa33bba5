#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "uvos/gradcheck.hpp"
#include "uvos/loss_frame_short.hpp"

using uvos::Network;
using uvos::PointI;
using uvos::Rect;
using uvos::Rng;
using uvos::Tensor;
namespace ad = uvos::ad;

namespace {

Network small_net(std::uint64_t seed = 5) {
    uvos::BackboneConfig cfg;
    cfg.channels = 8;
    cfg.seed = seed;
    return Network(cfg, 4);
}

Tensor random_binary(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return t;
}

// Frame with a textured square at (x0, y0); the rest is flat gray. The square
// is the only feature in the scene, so its patch is globally unique.
Tensor square_scene(int x0, int y0, int side, int frame = 64) {
    Tensor f = Tensor::full({3, frame, frame}, 0.3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                f.at(c, y0 + y, x0 + x) = ((x + y + c) % 3) * 0.3 + 0.2;
    return f;
}

}  // namespace

TEST_CASE("frame_loss hand values", "[loss_frame]") {
    SECTION("perfect saturated prediction costs only the clamp") {
        Rng rng(61);
        const Tensor q = random_binary({4, 4}, rng);
        REQUIRE(uvos::frame_loss(ad::constant(q), q).value()[0] <= 1.5e-5);
    }

    SECTION("uniform predictor costs ln 2 regardless of the target") {
        Rng rng(62);
        const Tensor q = random_binary({5, 5}, rng);
        const double v =
            uvos::frame_loss(ad::constant(Tensor::full({5, 5}, 0.5)), q).value()[0];
        REQUIRE(v == Catch::Approx(std::log(2.0)).margin(1e-6));
    }

    SECTION("two-cell hand example") {
        Tensor p({2});
        p[0] = 0.9;
        p[1] = 0.2;
        Tensor q({2});
        q[0] = 1.0;
        q[1] = 0.0;
        const double want = -(std::log(0.9) + std::log(0.8)) / 2.0;
        REQUIRE(uvos::frame_loss(ad::constant(p), q).value()[0] ==
                Catch::Approx(want).epsilon(1e-10));
        REQUIRE(want == Catch::Approx(0.16425).margin(5e-6));
    }

    SECTION("matches the oracle and stays nonnegative on random inputs") {
        Rng rng(63);
        Tensor p({6, 6});
        for (int i = 0; i < p.size(); ++i) p[i] = rng.uniform();
        const Tensor q = random_binary({6, 6}, rng);
        const double got = uvos::frame_loss(ad::constant(p), q).value()[0];
        REQUIRE(got == Catch::Approx(oracle::bce(p, q)).epsilon(1e-10));
        REQUIRE(got >= 0.0);
    }

    SECTION("shape mismatch") {
        REQUIRE_THROWS_AS(uvos::frame_loss(ad::constant(Tensor({2, 2})), Tensor({2, 3})),
                          uvos::dimension_error);
    }
}

TEST_CASE("bootstrap_frame_loss", "[loss_frame]") {
    Rng rng(64);
    const Tensor q = random_binary({4, 4}, rng);
    const Tensor prev = random_binary({4, 4}, rng);
    Tensor p({4, 4});
    for (int i = 0; i < p.size(); ++i) p[i] = 0.1 + 0.8 * rng.uniform();

    SECTION("alpha = 1 degenerates to the plain frame loss") {
        const double a = uvos::bootstrap_frame_loss(ad::constant(p), q, prev, 1.0).value()[0];
        const double b = uvos::frame_loss(ad::constant(p), q).value()[0];
        REQUIRE(a == Catch::Approx(b).epsilon(1e-12));
    }

    SECTION("alpha = 0 self-consistency") {
        // P_new saturated at its own binarization: only the clamp remains
        Tensor sat({4, 4});
        Tensor bin({4, 4});
        for (int i = 0; i < p.size(); ++i) {
            bin[i] = p[i] > 0.5 ? 1.0 : 0.0;
            sat[i] = bin[i];
        }
        REQUIRE(uvos::bootstrap_frame_loss(ad::constant(sat), q, bin, 0.0).value()[0] <=
                1.5e-5);
    }

    SECTION("single-cell hand example gives ln 2") {
        // alpha 0.05, Q = 1, prev = 0, P = 0.5: both target parts hit ln 0.5
        Tensor p1({1});
        p1[0] = 0.5;
        Tensor q1 = Tensor::full({1}, 1.0);
        Tensor prev1({1});
        REQUIRE(uvos::bootstrap_frame_loss(ad::constant(p1), q1, prev1, 0.05).value()[0] ==
                Catch::Approx(std::log(2.0)).margin(1e-9));
    }

    SECTION("loss is affine in alpha") {
        const double l0 = uvos::bootstrap_frame_loss(ad::constant(p), q, prev, 0.2).value()[0];
        const double l1 = uvos::bootstrap_frame_loss(ad::constant(p), q, prev, 0.5).value()[0];
        const double l2 = uvos::bootstrap_frame_loss(ad::constant(p), q, prev, 0.8).value()[0];
        REQUIRE(l1 == Catch::Approx((l0 + l2) / 2.0).margin(1e-9));
    }

    SECTION("contract violations") {
        REQUIRE_THROWS_AS(uvos::bootstrap_frame_loss(ad::constant(p), q, prev, 1.5),
                          uvos::config_error);
        REQUIRE_THROWS_AS(
            uvos::bootstrap_frame_loss(ad::constant(p), q, Tensor({2, 2}), 0.5),
            uvos::dimension_error);
    }
}

TEST_CASE("bootstrap state bookkeeping", "[loss_frame]") {
    uvos::BootstrapState state;
    REQUIRE_FALSE(state.has("v000", 0));
    REQUIRE_THROWS_AS(state.prediction("v000", 0), uvos::state_error);
    state.previous["v000"] = {Tensor({4, 4}), Tensor()};
    REQUIRE(state.has("v000", 0));
    REQUIRE_FALSE(state.has("v000", 1));  // empty slot
    REQUIRE_FALSE(state.has("v000", 2));  // out of range
}

TEST_CASE("track_step", "[loss_frame]") {
    Rng rng(65);

    SECTION("ties break to the first row-major cell") {
        const Tensor patch = Tensor::full({4, 2, 2}, 0.7);
        const Tensor frame({4, 6, 6});  // all zeros: every window scores identically
        auto [resp, peak] = uvos::track_step(ad::constant(patch), ad::constant(frame));
        REQUIRE(peak.x == 0);
        REQUIRE(peak.y == 0);
        for (int i = 0; i < resp.value().size(); ++i) {
            REQUIRE(resp.value()[i] > 0.0);
            REQUIRE(resp.value()[i] < 1.0);
        }
    }

    SECTION("featureless frame peaks at the first fully-covered cell") {
        const Tensor patch = Tensor::full({4, 2, 2}, 0.7);
        const Tensor frame = Tensor::full({4, 6, 6}, 0.7);
        auto [resp, peak] = uvos::track_step(ad::constant(patch), ad::constant(frame));
        // Zero padding attenuates border windows, so the interior ties win.
        REQUIRE(peak.x == 1);
        REQUIRE(peak.y == 1);
        REQUIRE(resp.value().at(0, 0) < resp.value().at(1, 1));
    }

    SECTION("planted unit patch beats 0.01-amplitude noise") {
        Tensor patch({4, 3, 3});
        for (int i = 0; i < patch.size(); ++i) patch[i] = rng.normal();
        double norm = 0.0;
        for (int i = 0; i < patch.size(); ++i) norm += patch[i] * patch[i];
        norm = std::sqrt(norm);
        for (int i = 0; i < patch.size(); ++i) patch[i] /= norm;

        Tensor frame({4, 8, 8});
        for (int i = 0; i < frame.size(); ++i) frame[i] = rng.normal() * 0.01;
        const int px = 5, py = 2;
        for (int c = 0; c < 4; ++c)
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 3; ++x)
                    frame.at(c, py - 1 + y, px - 1 + x) = patch.at(c, y, x);

        auto [resp, peak] = uvos::track_step(ad::constant(patch), ad::constant(frame));
        const Tensor want = oracle::brute_correlation(patch, frame);
        REQUIRE(resp.value().argmax() == want.argmax());
        REQUIRE(peak.x == px);
        REQUIRE(peak.y == py);
    }
}

TEST_CASE("forward_backward runs the three-frame schedule", "[loss_frame]") {
    Network net = small_net();
    const Tensor f = square_scene(20, 24, 16);
    const Rect patch{16, 20, 24, 24};

    uvos::PatchTrack track = uvos::forward_backward(net, f, f, f, patch, false);
    REQUIRE(track.forward_path.size() == 2);
    REQUIRE(track.backward_path.size() == 2);
    for (const PointI& p : track.forward_path) {
        REQUIRE(p.x >= 0);
        REQUIRE(p.x < 16);
        REQUIRE(p.y >= 0);
        REQUIRE(p.y < 16);
    }
    REQUIRE(track.backward_response.value().dim(0) == 16);
    REQUIRE(track.backward_response.value().dim(1) == 16);
    REQUIRE(track.start_patch.x == 16);

    // target is centered on the original patch center, in feature cells
    REQUIRE(track.target.center.x == Catch::Approx((16 + 12) / 4.0));
    REQUIRE(track.target.center.y == Catch::Approx((20 + 12) / 4.0));
}

TEST_CASE("static unique scene tracks back to its origin", "[loss_frame]") {
    Network net = small_net(11);
    const Tensor f = square_scene(24, 28, 20);
    // patch square centered on the object center (34, 38)
    const Rect patch{22, 26, 24, 24};
    uvos::PatchTrack track = uvos::forward_backward(net, f, f, f, patch, false);

    const PointI back = track.backward_path.back();
    const double cx = (patch.x + patch.w / 2.0) / 4.0;
    const double cy = (patch.y + patch.h / 2.0) / 4.0;
    REQUIRE(std::abs(back.x - cx) <= 1.0);
    REQUIRE(std::abs(back.y - cy) <= 1.0);
}

TEST_CASE("re-crops near the edge stay inside the frame", "[loss_frame]") {
    // A bright object at the far right pulls the track toward the edge; the
    // re-crop clamp keeps every crop in bounds (an out-of-bounds crop would
    // throw inside uvos::crop).
    Network net = small_net(12);
    Tensor f1 = square_scene(44, 24, 16);
    Tensor f2 = square_scene(47, 24, 16);  // object drifting right
    Tensor f3 = square_scene(47, 24, 16);
    const Rect patch{40, 20, 24, 24};
    REQUIRE_NOTHROW(uvos::forward_backward(net, f1, f2, f3, patch, false));

    // and the clamp itself
    const Rect r = uvos::detail::recrop_rect(PointI{15, 15}, 24, 64, 64, 4);
    REQUIRE(r.x + r.w <= 64);
    REQUIRE(r.y + r.h <= 64);
    REQUIRE(r.x >= 0);
    const Rect r0 = uvos::detail::recrop_rect(PointI{0, 0}, 24, 64, 64, 4);
    REQUIRE(r0.x == 0);
    REQUIRE(r0.y == 0);
}

TEST_CASE("forward_backward preconditions", "[loss_frame]") {
    Network net = small_net();
    const Tensor f = square_scene(20, 20, 16);
    REQUIRE_THROWS_AS(uvos::forward_backward(net, f, f, f, Rect{50, 50, 24, 24}, false),
                      uvos::numeric_error);
    REQUIRE_THROWS_AS(uvos::forward_backward(net, f, f, f, Rect{8, 8, 24, 20}, false),
                      uvos::numeric_error);
    REQUIRE_THROWS_AS(uvos::forward_backward(net, f, f, f, Rect{8, 8, 6, 6}, false),
                      uvos::numeric_error);
    const Tensor small = square_scene(4, 4, 8, 32);
    REQUIRE_THROWS_AS(uvos::forward_backward(net, f, small, f, Rect{8, 8, 24, 24}, false),
                      uvos::dimension_error);
}

TEST_CASE("short_term_loss", "[loss_frame]") {
    SECTION("response equal to the target scores zero") {
        uvos::PatchTrack track;
        track.target = uvos::gaussian_target(uvos::Point{8.0, 8.0}, 6.0, 16, 16);
        track.backward_response = ad::constant(track.target.data);
        REQUIRE(uvos::short_term_loss(track).value()[0] == 0.0);
    }

    SECTION("zero response scores sum-of-squares over cell count") {
        uvos::PatchTrack track;
        track.target = uvos::gaussian_target(uvos::Point{8.0, 8.0}, 6.0, 16, 16);
        track.backward_response = ad::constant(Tensor({16, 16}));
        double ss = 0.0;
        for (int i = 0; i < track.target.data.size(); ++i)
            ss += track.target.data[i] * track.target.data[i];
        REQUIRE(uvos::short_term_loss(track).value()[0] ==
                Catch::Approx(ss / 256.0).epsilon(1e-12));
    }

    SECTION("random pair matches the oracle") {
        Rng rng(66);
        uvos::PatchTrack track;
        track.target = uvos::gaussian_target(uvos::Point{5.0, 7.0}, 8.0, 12, 12);
        Tensor resp({12, 12});
        for (int i = 0; i < resp.size(); ++i) resp[i] = rng.uniform();
        track.backward_response = ad::constant(resp);
        REQUIRE(uvos::short_term_loss(track).value()[0] ==
                Catch::Approx(oracle::mse(resp, track.target.data)).epsilon(1e-12));
    }

    SECTION("incomplete track is rejected") {
        uvos::PatchTrack track;
        REQUIRE_THROWS_AS(uvos::short_term_loss(track), uvos::state_error);
    }
}

TEST_CASE("a centered target beats a deliberately mis-centered one", "[loss_frame]") {
    Network net = small_net(13);
    const Tensor f = square_scene(24, 24, 20);
    const Rect patch{20, 20, 24, 24};
    uvos::PatchTrack track = uvos::forward_backward(net, f, f, f, patch, false);
    const double centered = uvos::short_term_loss(track).value()[0];

    uvos::PatchTrack shifted = track;
    shifted.target = uvos::gaussian_target(
        uvos::Point{track.target.center.x - 8.0, track.target.center.y}, 24.0 / 4.0, 16, 16);
    const double offset = uvos::short_term_loss(shifted).value()[0];
    REQUIRE(centered < offset);
}

TEST_CASE("short-term gradient w.r.t. patch features", "[loss_frame]") {
    // Finite differences through correlate + Gaussian-target MSE on toy shapes.
    Rng rng(67);
    Tensor kernel({4, 2, 2});
    Tensor search({4, 4, 4});
    for (int i = 0; i < kernel.size(); ++i) kernel[i] = rng.normal();
    for (int i = 0; i < search.size(); ++i) search[i] = rng.normal();
    const Tensor target = uvos::gaussian_target(uvos::Point{2.0, 2.0}, 4.0, 4, 4).data;
    const auto r = uvos::check_gradients(
        "short_term_pathway",
        [&target](const std::vector<ad::Var>& l) {
            return ad::mse_mean(uvos::cross_correlate(l[0], l[1]), target);
        },
        {kernel, search});
    INFO(r.detail);
    REQUIRE(r.passed);
}
