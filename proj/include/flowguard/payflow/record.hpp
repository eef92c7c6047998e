#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace flowguard::payflow {

// Order fixes the one-hot position in the feature vector.
enum class TxType : std::uint8_t { cash_in, cash_out, debit, payment, transfer };
inline constexpr std::size_t kTxTypeCount = 5;

enum class PatternLabel : std::uint8_t { normal, fraud, laundering };
inline constexpr std::array<PatternLabel, 3> kAllLabels{PatternLabel::normal, PatternLabel::fraud,
                                                       PatternLabel::laundering};

inline std::string_view to_string(TxType t) {
  switch (t) {
    case TxType::cash_in: return "CASH_IN";
    case TxType::cash_out: return "CASH_OUT";
    case TxType::debit: return "DEBIT";
    case TxType::payment: return "PAYMENT";
    case TxType::transfer: return "TRANSFER";
  }
  return "?";
}

inline std::optional<TxType> parse_tx_type(std::string_view s) {
  for (std::uint8_t i = 0; i < kTxTypeCount; ++i) {
    auto t = static_cast<TxType>(i);
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

inline std::string_view to_string(PatternLabel l) {
  switch (l) {
    case PatternLabel::normal: return "NORMAL";
    case PatternLabel::fraud: return "FRAUD";
    case PatternLabel::laundering: return "LAUNDERING";
  }
  return "?";
}

inline std::optional<PatternLabel> parse_label(std::string_view s) {
  for (PatternLabel l : kAllLabels)
    if (to_string(l) == s) return l;
  return std::nullopt;
}

inline bool is_outgoing(TxType t) { return t != TxType::cash_in; }

// One PaySim-style payment event.
struct TransactionRecord {
  std::uint32_t step = 0;  // simulation hour
  TxType type = TxType::payment;
  double amount = 0.0;
  std::string orig_account;
  double orig_balance_before = 0.0;
  double orig_balance_after = 0.0;
  std::string dest_account;
  double dest_balance_before = 0.0;
  double dest_balance_after = 0.0;
  PatternLabel label = PatternLabel::normal;
  bool flagged_fraud = false;  // PaySim's isFlaggedFraud column

  // Fraud and laundering collapse to the positive class.
  bool suspicious() const { return label != PatternLabel::normal; }

  friend bool operator==(const TransactionRecord&, const TransactionRecord&) = default;
};

}  // namespace flowguard::payflow
