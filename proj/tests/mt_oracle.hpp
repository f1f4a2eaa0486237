#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

// Reference MT19937-64 (Matsumoto and Nishimura, 2004) and the documented
// uniform/Box-Muller construction, written without <random>.
class Mt64Oracle {
public:
    explicit Mt64Oracle(std::uint64_t seed) {
        mt_[0] = seed;
        for (int i = 1; i < kN; ++i) mt_[i] = 6364136223846793005ULL * (mt_[i - 1] ^ (mt_[i - 1] >> 62)) + std::uint64_t(i);
        idx_ = kN;
    }

    std::uint64_t next() {
        if (idx_ >= kN) twist();
        std::uint64_t x = mt_[idx_++];
        x ^= (x >> 29) & 0x5555555555555555ULL;
        x ^= (x << 17) & 0x71D67FFFEDA60000ULL;
        x ^= (x << 37) & 0xFFF7EEE000000000ULL;
        x ^= x >> 43;
        return x;
    }

    double uniform01() { return (double(next() >> 11) + 0.5) / 9007199254740992.0; }

    double normal() {
        if (have_) {
            have_ = false;
            return spare_;
        }
        const double u1 = uniform01(), u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1)), th = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(th);
        have_ = true;
        return r * std::cos(th);
    }

private:
    static constexpr int kN = 312, kM = 156;
    void twist() {
        constexpr std::uint64_t upper = 0xFFFFFFFF80000000ULL, lower = 0x7FFFFFFFULL, a = 0xB5026F5AA96619E9ULL;
        for (int i = 0; i < kN; ++i) {
            const std::uint64_t x = (mt_[i] & upper) | (mt_[(i + 1) % kN] & lower);
            mt_[i] = mt_[(i + kM) % kN] ^ (x >> 1) ^ ((x & 1) ? a : 0);
        }
        idx_ = 0;
    }
    std::uint64_t mt_[kN];
    int idx_;
    bool have_ = false;
    double spare_ = 0.0;
};
