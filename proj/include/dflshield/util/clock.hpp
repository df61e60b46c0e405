#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <thread>

namespace dflshield {

/// Microseconds since the federation's time origin. Virtual under the
/// simulated fabric, wall-clock under TCP.
using Micros = std::int64_t;

constexpr Micros ms_to_us(double ms) { return static_cast<Micros>(ms * 1000.0); }
constexpr double us_to_ms(Micros us) { return static_cast<double>(us) / 1000.0; }

class Clock {
public:
    virtual ~Clock() = default;
    virtual Micros now() const = 0;
    /// Account for local work taking `d`; a no-op for real time.
    virtual void spend(Micros d) = 0;
    /// Block (real) or jump (virtual) until `t`.
    virtual void wait_until(Micros t) = 0;
    virtual bool is_virtual() const = 0;
};

class ManualClock final : public Clock {
public:
    explicit ManualClock(Micros start = 0) : now_(start) {}
    Micros now() const override { return now_.load(); }
    void spend(Micros d) override { now_ += d; }
    void wait_until(Micros t) override {
        Micros cur = now_.load();
        while (cur < t && !now_.compare_exchange_weak(cur, t)) {
        }
    }
    void set(Micros t) { now_ = t; }
    bool is_virtual() const override { return true; }

private:
    std::atomic<Micros> now_;
};

class SteadyClock final : public Clock {
public:
    SteadyClock() : origin_(std::chrono::steady_clock::now()) {}
    explicit SteadyClock(std::chrono::steady_clock::time_point origin) : origin_(origin) {}

    Micros now() const override {
        return std::chrono::duration_cast<std::chrono::microseconds>(
                   std::chrono::steady_clock::now() - origin_)
            .count();
    }
    void spend(Micros) override {}
    void wait_until(Micros t) override {
        Micros d = t - now();
        if (d > 0) std::this_thread::sleep_for(std::chrono::microseconds(d));
    }
    bool is_virtual() const override { return false; }
    std::chrono::steady_clock::time_point origin() const { return origin_; }

private:
    std::chrono::steady_clock::time_point origin_;
};

}  // namespace dflshield
