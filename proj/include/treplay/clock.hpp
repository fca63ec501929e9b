#pragma once

#include <chrono>
#include <cstdint>
#include <thread>

namespace treplay {

// Time source for replay engines. Implementations must be monotonic and
// anchored to an absolute epoch in microseconds.
class Clock {
  public:
    virtual ~Clock() = default;
    virtual int64_t now_us() = 0;

    // Returns at a reading >= abs_us; immediately if already past.
    virtual void sleep_until(int64_t abs_us) = 0;
};

// Steady clock anchored to the system epoch once at construction, so
// reads never jump backwards even if wall time is adjusted.
class SystemClock final : public Clock {
  public:
    SystemClock() {
        anchor_epoch_us_ = std::chrono::duration_cast<std::chrono::microseconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count();
        anchor_ = std::chrono::steady_clock::now();
    }

    int64_t now_us() override {
        const auto elapsed = std::chrono::duration_cast<std::chrono::microseconds>(
                                 std::chrono::steady_clock::now() - anchor_)
                                 .count();
        return anchor_epoch_us_ + elapsed;
    }

    void sleep_until(int64_t abs_us) override {
        for (;;) {
            const int64_t now = now_us();
            if (now >= abs_us)
                return;
            std::this_thread::sleep_for(std::chrono::microseconds(abs_us - now));
        }
    }

    std::chrono::steady_clock::time_point steady_point(int64_t abs_us) const {
        return anchor_ + std::chrono::microseconds(abs_us - anchor_epoch_us_);
    }

  private:
    int64_t anchor_epoch_us_ = 0;
    std::chrono::steady_clock::time_point anchor_;
};

}  // namespace treplay
