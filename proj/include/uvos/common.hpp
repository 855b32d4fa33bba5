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

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace uvos {

// Error taxonomy shared by all modules. Shape/channel mismatches raise
// dimension_error, invalid numeric input raises std::domain_error (alias
// numeric_error), bad configuration raises config_error.
struct dimension_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
using numeric_error = std::domain_error;
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct state_error : std::logic_error {
    using std::logic_error::logic_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct input_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct PointI {
    int x = 0;
    int y = 0;
};

struct Rect {
    int x = 0;  // top-left
    int y = 0;
    int w = 0;
    int h = 0;
};

inline int clamp_int(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Deterministic RNG. std::mt19937_64 for the stream, hand-rolled draws so the
// sequence does not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw config_error("uniform_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    double uniform_real(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; keeps the spare draw for the next call.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    // Derive an independent stream, e.g. one per video or per layer.
    Rng fork(std::uint64_t salt) {
        return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace uvos
