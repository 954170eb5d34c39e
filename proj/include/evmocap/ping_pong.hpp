#pragma once

#include <atomic>
#include <cassert>
#include <cstdint>

namespace evmocap {

/// Two-slot handoff between one producer and one consumer stage. The
/// producer fills one slot while the consumer reads the other; slots change
/// hands only when a generation is published or released.
///
/// With drops allowed the producer never waits: if the consumer still holds
/// its slot and an older generation is waiting unread, that generation is
/// dropped and its slot reused. Without drops the producer waits instead.
template <class T>
class PingPong {
 public:
  explicit PingPong(bool allow_drops = true) : allow_drops_(allow_drops) {}

  /// Producer: slot for the next generation.
  T& begin_write() {
    for (;;) {
      std::uint32_t s = state_.load(std::memory_order_acquire);
      const int pub = published(s), hold = held(s);
      for (int slot = 0; slot < 2; ++slot)
        if (slot != pub && slot != hold) {
          write_ = slot;
          return slots_[slot].value;
        }
      if (!allow_drops_) {
        state_.wait(s, std::memory_order_acquire);
        continue;
      }
      // Both slots busy: reclaim the unread generation.
      if (state_.compare_exchange_weak(s, with_published(s, kNone), std::memory_order_acq_rel)) {
        dropped_.fetch_add(1, std::memory_order_relaxed);
        write_ = pub;
        return slots_[pub].value;
      }
    }
  }

  /// Producer: hand the slot from begin_write() to the consumer.
  void publish() {
    assert(write_ != kNone);
    slots_[write_].generation = ++generation_;
    for (;;) {
      std::uint32_t s = state_.load(std::memory_order_acquire);
      if (published(s) != kNone && !allow_drops_) {
        state_.wait(s, std::memory_order_acquire);
        continue;
      }
      if (state_.compare_exchange_weak(s, with_published(s, write_), std::memory_order_acq_rel)) {
        if (published(s) != kNone) dropped_.fetch_add(1, std::memory_order_relaxed);
        break;
      }
    }
    write_ = kNone;
    state_.notify_all();
  }

  /// Producer: no further generations.
  void close() {
    state_.fetch_or(kClosed, std::memory_order_acq_rel);
    state_.notify_all();
  }

  /// Consumer: waits for the next generation; nullptr once closed and drained.
  T* begin_read() {
    for (;;) {
      std::uint32_t s = state_.load(std::memory_order_acquire);
      const int pub = published(s);
      if (pub != kNone) {
        assert(held(s) == kNone);
        if (state_.compare_exchange_weak(s, with_held(with_published(s, kNone), pub), std::memory_order_acq_rel)) {
          assert(slots_[pub].generation > last_read_);
          last_read_ = slots_[pub].generation;
          state_.notify_all();
          return &slots_[pub].value;
        }
        continue;
      }
      if (s & kClosed) return nullptr;
      state_.wait(s, std::memory_order_acquire);
    }
  }

  /// Consumer: done with the slot from begin_read().
  void end_read() {
    std::uint32_t s = state_.load(std::memory_order_acquire);
    while (!state_.compare_exchange_weak(s, with_held(s, kNone), std::memory_order_acq_rel)) {
    }
    state_.notify_all();
  }

  std::uint64_t dropped() const { return dropped_.load(std::memory_order_relaxed); }
  std::uint64_t published_count() const { return generation_; }

 private:
  static constexpr int kNone = 3;
  static constexpr std::uint32_t kClosed = 1u << 4;

  // Bits 0-1: published slot, bits 2-3: slot held by the consumer, bit 4: closed.
  static int published(std::uint32_t s) { return int(s & 3u); }
  static int held(std::uint32_t s) { return int((s >> 2) & 3u); }
  static std::uint32_t with_published(std::uint32_t s, int slot) { return (s & ~3u) | std::uint32_t(slot); }
  static std::uint32_t with_held(std::uint32_t s, int slot) { return (s & ~12u) | (std::uint32_t(slot) << 2); }

  struct Slot {
    T value{};
    std::uint64_t generation = 0;
  };

  Slot slots_[2];
  std::atomic<std::uint32_t> state_{std::uint32_t(kNone) | (std::uint32_t(kNone) << 2)};
  std::atomic<std::uint64_t> dropped_{0};
  int write_ = kNone;             // producer only
  std::uint64_t generation_ = 0;  // producer only
  std::uint64_t last_read_ = 0;   // consumer only
  bool allow_drops_;
};

}  // namespace evmocap
