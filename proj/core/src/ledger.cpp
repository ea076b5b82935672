#include "drrnet/ledger.hpp"

#include <algorithm>

namespace drr {

void LedgerToken::reset() {
  if (ledger_) ledger_->release(bytes_);
  ledger_ = nullptr;
  bytes_ = 0;
}

void ActivationLedger::begin_step() {
  peak_ = live_;
  ++steps_;
}

LedgerToken ActivationLedger::acquire(std::size_t bytes) {
  live_ += bytes;
  ++count_;
  peak_ = std::max(peak_, live_);
  return LedgerToken(this, bytes);
}

// Tokens are only minted by acquire(), so live_ never underflows.
void ActivationLedger::release(std::size_t bytes) {
  live_ -= bytes;
  --count_;
}

}  // namespace drr
