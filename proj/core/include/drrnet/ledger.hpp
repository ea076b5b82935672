#pragma once

#include <cstddef>
#include <utility>

#include "drrnet/tensor.hpp"

namespace drr {

class ActivationLedger;

/// Move-only claim on ledger bytes; gives them back on destruction.
class LedgerToken {
 public:
  LedgerToken() = default;
  LedgerToken(const LedgerToken&) = delete;
  LedgerToken& operator=(const LedgerToken&) = delete;
  LedgerToken(LedgerToken&& other) noexcept { swap(other); }
  LedgerToken& operator=(LedgerToken&& other) noexcept {
    LedgerToken tmp(std::move(other));
    swap(tmp);
    return *this;
  }
  ~LedgerToken() { reset(); }

  void reset();
  std::size_t bytes() const { return bytes_; }

 private:
  friend class ActivationLedger;
  LedgerToken(ActivationLedger* ledger, std::size_t bytes) : ledger_(ledger), bytes_(bytes) {}
  void swap(LedgerToken& other) noexcept {
    std::swap(ledger_, other.ledger_);
    std::swap(bytes_, other.bytes_);
  }

  ActivationLedger* ledger_ = nullptr;
  std::size_t bytes_ = 0;
};

struct LedgerReport {
  std::size_t live_bytes = 0;
  std::size_t peak_bytes = 0;
  std::size_t cached_tensor_count = 0;
};

/// Live and peak bytes of activation tensors held for backpropagation,
/// counted from tensor shapes times element width.
///
/// Tokens must not outlive the ledger that issued them.
class ActivationLedger {
 public:
  ActivationLedger() = default;
  ActivationLedger(const ActivationLedger&) = delete;
  ActivationLedger& operator=(const ActivationLedger&) = delete;

  /// Starts a new step: the peak restarts from the bytes still live.
  void begin_step();

  LedgerToken acquire(std::size_t bytes);

  template <Scalar T>
  LedgerToken acquire(const Tensor<T>& t) {
    return acquire(t.bytes());
  }

  std::size_t live_bytes() const { return live_; }
  std::size_t peak_bytes() const { return peak_; }
  std::size_t cached_tensor_count() const { return count_; }
  std::size_t steps() const { return steps_; }
  LedgerReport report() const { return {live_, peak_, count_}; }

 private:
  friend class LedgerToken;
  void release(std::size_t bytes);

  std::size_t live_ = 0;
  std::size_t peak_ = 0;
  std::size_t count_ = 0;
  std::size_t steps_ = 0;
};

/// A tensor together with its ledger claim.
template <Scalar T>
struct Tracked {
  Tensor<T> value;
  LedgerToken token;

  Tracked() = default;
  Tracked(ActivationLedger& ledger, Tensor<T> t) : value(std::move(t)), token(ledger.acquire(value)) {}
};

}  // namespace drr
