#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "uvos/dataio.hpp"

namespace fs = std::filesystem;
using uvos::Tensor;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() /
               ("uvos_dataio_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

Tensor random_image(int h, int w, uvos::Rng& rng) {
    Tensor img({3, h, w});
    for (int i = 0; i < img.size(); ++i) img[i] = rng.uniform();
    return img;
}

// Image whose values sit exactly on the 8-bit quantization grid.
Tensor quantized_image(int h, int w, int offset) {
    Tensor img({3, h, w});
    for (int i = 0; i < img.size(); ++i) img[i] = ((i * 7 + offset) % 256) / 255.0;
    return img;
}

void write_png(const fs::path& p, int h, int w, int offset) {
    uvos::save_image(p.string(), quantized_image(h, w, offset));
}

std::pair<double, double> centroid(const Tensor& mask, double id) {
    double sx = 0.0, sy = 0.0, n = 0.0;
    for (int y = 0; y < mask.dim(0); ++y)
        for (int x = 0; x < mask.dim(1); ++x)
            if (mask.at(y, x) == id) {
                sx += x;
                sy += y;
                n += 1.0;
            }
    return {sx / n, sy / n};
}

}  // namespace

TEST_CASE("images survive a save/load round trip within quantization") {
    TempDir dir("img");
    uvos::Rng rng(31);
    const Tensor img = random_image(16, 20, rng);
    const std::string path = dir.str() + "/x.png";
    uvos::save_image(path, img);
    const Tensor back = uvos::load_image(path);
    REQUIRE(back.ndim() == 3);
    REQUIRE(back.dim(0) == 3);
    REQUIRE(back.dim(1) == 16);
    REQUIRE(back.dim(2) == 20);
    for (int i = 0; i < img.size(); ++i)
        REQUIRE(std::abs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-12);

    SECTION("values already on the 8-bit grid round-trip exactly") {
        const Tensor q = quantized_image(8, 8, 3);
        uvos::save_image(path, q);
        const Tensor qb = uvos::load_image(path);
        for (int i = 0; i < q.size(); ++i) REQUIRE(qb[i] == q[i]);
    }

    SECTION("out-of-range values are clipped, not wrapped") {
        Tensor wild({3, 2, 2});
        wild.fill(1.7);
        wild[0] = -0.4;
        uvos::save_image(path, wild);
        const Tensor back2 = uvos::load_image(path);
        CHECK(back2[0] == 0.0);
        CHECK(back2[1] == 1.0);
    }

    SECTION("shape and path errors") {
        CHECK_THROWS_AS(uvos::save_image(path, Tensor({1, 4, 4})), uvos::dimension_error);
        CHECK_THROWS_AS(uvos::load_image(dir.str() + "/absent.png"), uvos::io_error);
    }
}

TEST_CASE("masks round-trip exactly as integer id grids") {
    TempDir dir("mask");
    Tensor ids({10, 12});
    for (int i = 0; i < ids.size(); ++i) ids[i] = i % 6;
    const std::string path = dir.str() + "/m.png";
    uvos::save_mask(path, ids);
    const Tensor back = uvos::load_mask(path);
    REQUIRE(back.same_shape(ids));
    for (int i = 0; i < ids.size(); ++i) REQUIRE(back[i] == ids[i]);

    SECTION("invalid ids are rejected") {
        Tensor bad({2, 2});
        bad[0] = 256.0;
        CHECK_THROWS_AS(uvos::save_mask(path, bad), uvos::numeric_error);
        bad[0] = 1.5;
        CHECK_THROWS_AS(uvos::save_mask(path, bad), uvos::numeric_error);
        bad[0] = -1.0;
        CHECK_THROWS_AS(uvos::save_mask(path, bad), uvos::numeric_error);
        CHECK_THROWS_AS(uvos::save_mask(path, Tensor({2, 2, 2})), uvos::dimension_error);
        CHECK_THROWS_AS(uvos::load_mask(dir.str() + "/absent.png"), uvos::io_error);
    }
}

TEST_CASE("overlays place the colorized mask beside the frame") {
    TempDir dir("overlay");
    uvos::Rng rng(5);
    const Tensor frame = random_image(12, 12, rng);
    Tensor ids({12, 12});
    ids.at(4, 4) = 1.0;
    const std::string path = dir.str() + "/o.png";
    uvos::save_overlay(path, frame, ids);
    const Tensor canvas = uvos::load_image(path);
    REQUIRE(canvas.dim(1) == 12);
    REQUIRE(canvas.dim(2) == 24);

    CHECK_THROWS_AS(uvos::save_overlay(path, frame, Tensor({6, 6})), uvos::dimension_error);
}

TEST_CASE("datasets load sorted videos and frames") {
    TempDir dir("ds");

    // Deliberately unsorted creation order; ids must come back sorted.
    fs::create_directories(dir.path / "zeta/frames");
    fs::create_directories(dir.path / "alpha/frames");
    fs::create_directories(dir.path / "mid");  // flat layout, no frames/ subdir
    fs::create_directories(dir.path / "empty_video");

    write_png(dir.path / "zeta/frames/00001.png", 16, 16, 1);
    write_png(dir.path / "zeta/frames/00000.png", 16, 16, 2);
    write_png(dir.path / "alpha/frames/00000.png", 24, 24, 3);
    write_png(dir.path / "mid/a.png", 16, 16, 4);
    write_png(dir.path / "mid/b.png", 16, 16, 5);

    const uvos::VideoDataset ds = uvos::load_dataset(dir.str(), 16);
    REQUIRE(ds.video_count() == 3);  // empty_video skipped
    CHECK(ds.videos[0].id == "alpha");
    CHECK(ds.videos[1].id == "mid");
    CHECK(ds.videos[2].id == "zeta");
    CHECK(ds.videos[2].frame_count() == 2);
    CHECK(fs::path(ds.videos[2].frame_paths[0]).filename() == "00000.png");
    CHECK(fs::path(ds.videos[2].frame_paths[1]).filename() == "00001.png");

    SECTION("frames are resized to the dataset resolution") {
        const Tensor f = ds.load_frame(0, 0);  // alpha is 24x24 on disk
        REQUIRE(f.dim(0) == 3);
        CHECK(f.dim(1) == 16);
        CHECK(f.dim(2) == 16);
    }

    SECTION("native resolution is kept when frame_size is 0") {
        const uvos::VideoDataset native = uvos::load_dataset(dir.str(), 0);
        const Tensor f = native.load_frame(0, 0);
        CHECK(f.dim(1) == 24);
    }

    SECTION("ground-truth masks are optional") {
        CHECK(ds.videos[0].mask_paths.empty());
        CHECK_THROWS_AS(ds.load_gt_mask(0, 0), uvos::io_error);
    }

    SECTION("a missing root is refused") {
        CHECK_THROWS_AS(uvos::load_dataset(dir.str() + "/nowhere", 16), uvos::io_error);
    }
}

TEST_CASE("hand-built frames load back pixel for pixel") {
    TempDir dir("exact");
    fs::create_directories(dir.path / "v/frames");
    const Tensor f0 = quantized_image(8, 8, 0);
    const Tensor f1 = quantized_image(8, 8, 11);
    uvos::save_image((dir.path / "v/frames/00000.png").string(), f0);
    uvos::save_image((dir.path / "v/frames/00001.png").string(), f1);

    const uvos::VideoDataset ds = uvos::load_dataset(dir.str(), 0);
    REQUIRE(ds.video_count() == 1);
    REQUIRE(ds.videos[0].frame_count() == 2);
    const Tensor a = ds.load_frame(0, 0);
    const Tensor b = ds.load_frame(0, 1);
    for (int i = 0; i < f0.size(); ++i) {
        REQUIRE(a[i] == f0[i]);
        REQUIRE(b[i] == f1[i]);
    }
}

TEST_CASE("the synthetic generator is deterministic and physically consistent") {
    uvos::SynthSpec spec;
    spec.num_videos = 3;
    spec.frames_per_video = 12;
    spec.frame_size = 48;
    spec.objects_min = 1;
    spec.objects_max = 1;  // a single object keeps centroids well defined
    spec.shapes = {uvos::Shape::square};
    spec.object_size_min = 12;
    spec.object_size_max = 20;
    spec.seed = 77;

    TempDir d1("gen1"), d2("gen2");
    const uvos::VideoDataset ds1 = uvos::generate_synthetic(spec, d1.str());
    const uvos::VideoDataset ds2 = uvos::generate_synthetic(spec, d2.str());

    SECTION("layout and counts") {
        REQUIRE(ds1.video_count() == 3);
        CHECK(ds1.videos[0].id == "v000");
        CHECK(ds1.videos[2].id == "v002");
        for (int v = 0; v < 3; ++v) {
            CHECK(ds1.videos[v].frame_count() == 12);
            CHECK(ds1.videos[v].mask_paths.size() == 12);
        }
    }

    SECTION("two runs produce bit-identical data") {
        for (int v = 0; v < 3; ++v)
            for (int f = 0; f < 12; ++f) {
                const Tensor a = ds1.load_frame(v, f);
                const Tensor b = ds2.load_frame(v, f);
                for (int i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
                const Tensor ma = ds1.load_gt_mask(v, f);
                const Tensor mb = ds2.load_gt_mask(v, f);
                for (int i = 0; i < ma.size(); ++i) REQUIRE(ma[i] == mb[i]);
            }
    }

    SECTION("masks carry small integer ids only") {
        for (int v = 0; v < 3; ++v) {
            std::set<int> seen;
            for (int f = 0; f < 12; ++f) {
                const Tensor m = ds1.load_gt_mask(v, f);
                for (int i = 0; i < m.size(); ++i) {
                    REQUIRE(m[i] == std::floor(m[i]));
                    REQUIRE(m[i] >= 0.0);
                    REQUIRE(m[i] <= spec.objects_max);
                    if (m[i] > 0.0) seen.insert(static_cast<int>(m[i]));
                }
            }
            REQUIRE_FALSE(seen.empty());
            // ids are dense from 1
            CHECK(*seen.begin() == 1);
            CHECK(*seen.rbegin() == static_cast<int>(seen.size()));
        }
    }

    SECTION("objects persist and move smoothly") {
        for (int v = 0; v < 3; ++v) {
            double travel = 0.0;
            auto prev = centroid(ds1.load_gt_mask(v, 0), 1.0);
            for (int f = 1; f < 12; ++f) {
                const Tensor m = ds1.load_gt_mask(v, f);
                double area = 0.0;
                for (int i = 0; i < m.size(); ++i) area += m[i] == 1.0 ? 1.0 : 0.0;
                REQUIRE(area > 0.0);  // the object never vanishes
                const auto cur = centroid(m, 1.0);
                const double step = std::hypot(cur.first - prev.first,
                                               cur.second - prev.second);
                // bounded by the velocity cap plus rasterization jitter
                CHECK(step <= spec.velocity_max + 1.5);
                travel += step;
                prev = cur;
            }
            CHECK(travel > 2.0);  // it genuinely moves
        }
    }

    SECTION("different seeds give different data") {
        uvos::SynthSpec other = spec;
        other.seed = 78;
        TempDir d3("gen3");
        const uvos::VideoDataset ds3 = uvos::generate_synthetic(other, d3.str());
        bool any_diff = false;
        const Tensor a = ds1.load_frame(0, 0);
        const Tensor b = ds3.load_frame(0, 0);
        for (int i = 0; i < a.size() && !any_diff; ++i) any_diff = a[i] != b[i];
        CHECK(any_diff);
    }
}

TEST_CASE("synthetic specs parse from key = value files") {
    TempDir dir("spec");
    auto write = [&](const std::string& name, const std::string& body) {
        const std::string p = dir.str() + "/" + name;
        std::ofstream os(p);
        os << body;
        return p;
    };

    SECTION("full round trip") {
        const std::string p = write("full.spec",
                                    "# synthetic corpus\n"
                                    "num_videos = 5\n"
                                    "frames_per_video = 30\n"
                                    "frame_size = 96\n"
                                    "objects_min = 2\n"
                                    "objects_max = 3\n"
                                    "velocity_min = 0.75\n"
                                    "velocity_max = 2.5\n"
                                    "texture_amplitude = 0.05\n"
                                    "object_size_min = 16\n"
                                    "object_size_max = 40\n"
                                    "seed = 4242\n"
                                    "shapes = square, triangle\n");
        const uvos::SynthSpec s = uvos::parse_synth_spec(p);
        CHECK(s.num_videos == 5);
        CHECK(s.frames_per_video == 30);
        CHECK(s.frame_size == 96);
        CHECK(s.objects_min == 2);
        CHECK(s.objects_max == 3);
        CHECK(s.velocity_min == 0.75);
        CHECK(s.velocity_max == 2.5);
        CHECK(s.texture_amplitude == 0.05);
        CHECK(s.object_size_min == 16);
        CHECK(s.object_size_max == 40);
        CHECK(s.seed == 4242);
        REQUIRE(s.shapes.size() == 2);
        CHECK(s.shapes[0] == uvos::Shape::square);
        CHECK(s.shapes[1] == uvos::Shape::triangle);
    }

    SECTION("rejections") {
        using Catch::Matchers::ContainsSubstring;
        CHECK_THROWS_AS(uvos::parse_synth_spec(dir.str() + "/absent.spec"), uvos::io_error);
        CHECK_THROWS_WITH(uvos::parse_synth_spec(write("unk.spec", "wheels = 4\n")),
                          ContainsSubstring("unknown key 'wheels'"));
        CHECK_THROWS_WITH(uvos::parse_synth_spec(write("bad.spec", "num_videos = many\n")),
                          ContainsSubstring("bad value"));
        CHECK_THROWS_AS(uvos::parse_synth_spec(write("shape.spec", "shapes = rhombus\n")),
                        uvos::config_error);
        CHECK_THROWS_AS(uvos::parse_synth_spec(write("crowd.spec", "objects_max = 4\n")),
                        uvos::config_error);
        CHECK_THROWS_AS(
            uvos::parse_synth_spec(write("short.spec", "frames_per_video = 4\n")),
            uvos::config_error);
        CHECK_THROWS_AS(
            uvos::parse_synth_spec(write("big.spec",
                                         "frame_size = 32\nobject_size_max = 20\n")),
            uvos::config_error);
    }
}

TEST_CASE("the frame cache memoizes loads") {
    TempDir dir("cache");
    fs::create_directories(dir.path / "v/frames");
    write_png(dir.path / "v/frames/00000.png", 8, 8, 1);
    write_png(dir.path / "v/frames/00001.png", 8, 8, 2);

    const uvos::VideoDataset ds = uvos::load_dataset(dir.str(), 0);
    uvos::FrameCache cache(ds);
    const Tensor& first = cache.frame(0, 0);
    const Tensor& again = cache.frame(0, 0);
    CHECK(&first == &again);  // same storage, not a fresh load
    const Tensor& other = cache.frame(0, 1);
    CHECK(&first != &other);
    CHECK(first.dim(1) == 8);
}
