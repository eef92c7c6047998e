#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <string>
#include <vector>

#include "flowguard/diffcore/rng.hpp"
#include "flowguard/errors.hpp"
#include "flowguard/payflow/record.hpp"

namespace flowguard::payflow {

struct GeneratorConfig {
  std::size_t n_accounts = 2000;
  std::uint32_t n_steps = 200;
  double fraud_rate = 0.01;       // fraction of records labelled FRAUD
  double laundering_rate = 0.005;  // fraction of records labelled LAUNDERING
  std::uint64_t seed = 1;
  // Expected records per step, motifs included.
  double tx_per_step = 100.0;
  // Probability that a normal outgoing payment empties the account.
  double normal_drain_rate = 0.005;
};

inline void validate(const GeneratorConfig& c) {
  auto in_unit = [](double r) { return r >= 0.0 && r < 1.0; };
  if (!in_unit(c.fraud_rate) || !in_unit(c.laundering_rate))
    throw ConfigError("generator: rates must lie in [0, 1)");
  if (c.fraud_rate + c.laundering_rate >= 0.5)
    throw ConfigError("generator: fraud_rate + laundering_rate must stay below 0.5");
  if (c.n_accounts < 10) throw ConfigError("generator: need at least 10 accounts");
  if (c.n_steps == 0) throw ConfigError("generator: need at least one step");
  if (!(c.tx_per_step >= 1.0)) throw ConfigError("generator: tx_per_step must be at least 1");
  if (!(c.normal_drain_rate >= 0.0 && c.normal_drain_rate <= 1.0))
    throw ConfigError("generator: normal_drain_rate must lie in [0, 1]");
  // Each takeover drains one victim; the pool must be able to absorb them.
  const double takeovers = c.fraud_rate * c.tx_per_step * c.n_steps / 2.0;
  if (takeovers > 0.5 * static_cast<double>(c.n_accounts))
    throw ConfigError("generator: fraud_rate too high for the account pool (" + std::to_string(takeovers) +
                      " takeovers over " + std::to_string(c.n_accounts) + " accounts)");
}

namespace detail {

inline double cents(double v) { return std::round(v * 100.0) / 100.0; }

// Relative activity by hour of day: quiet nights, busy working hours.
inline double hourly_activity(std::uint32_t step) {
  static constexpr std::array<double, 24> profile{0.25, 0.2, 0.15, 0.15, 0.2, 0.3, 0.5, 0.8, 1.0, 1.1, 1.2, 1.2,
                                                  1.3,  1.2, 1.2,  1.1,  1.1, 1.2, 1.3, 1.2, 1.0, 0.8, 0.6, 0.4};
  static const double mean = [] {
    double s = 0.0;
    for (double v : profile) s += v;
    return s / 24.0;
  }();
  return profile[step % 24] / mean;
}

struct TypeModel {
  TxType type;
  double weight;
  double log_share;  // log of the amount relative to the account's scale
  double log_sigma;
};

inline constexpr std::array<TypeModel, 5> kNormalMix{{
    {TxType::payment, 0.40, -2.3, 0.7},   // ~10% of scale
    {TxType::cash_out, 0.22, -1.2, 0.6},  // ~30%
    {TxType::cash_in, 0.22, -1.0, 0.5},   // ~37%
    {TxType::transfer, 0.08, -0.9, 0.7},  // ~40%
    {TxType::debit, 0.08, -2.8, 0.6},     // ~6%
}};

// Count drawn as floor(mean) plus a Bernoulli on the remainder.
inline std::size_t draw_count(DeterministicRng& rng, double mean) {
  const double whole = std::floor(mean);
  return static_cast<std::size_t>(whole) + (rng.bernoulli(mean - whole) ? 1 : 0);
}

class FlowSimulator {
 public:
  explicit FlowSimulator(const GeneratorConfig& c) : config_(c), rng_(c.seed) {
    const std::size_t merchants = std::max<std::size_t>(2, c.n_accounts / 5);
    const std::size_t agents = std::max<std::size_t>(2, c.n_accounts / 20);
    for (std::size_t i = 0; i < c.n_accounts; ++i) {
      customers_.push_back(open_account('C'));
      scales_.push_back(std::exp(rng_.normal(10.0, 0.8)));
      balances_.push_back(cents(scales_.back() * rng_.uniform(0.5, 2.0)));
    }
    for (std::size_t i = 0; i < merchants; ++i) merchants_.push_back(open_account('M'));
    for (std::size_t i = 0; i < agents; ++i) {
      agents_.push_back(open_account('C'));
      agent_balances_.push_back(cents(std::exp(rng_.normal(13.0, 0.5))));
    }
  }

  std::vector<TransactionRecord> run() {
    const double suspicious_share = config_.fraud_rate + config_.laundering_rate;
    const double normal_per_step = config_.tx_per_step * (1.0 - suspicious_share);

    for (std::uint32_t step = 1; step <= config_.n_steps; ++step) {
      run_due_actions(step);
      const std::size_t n_normal = draw_count(rng_, normal_per_step * hourly_activity(step));
      for (std::size_t i = 0; i < n_normal; ++i) normal_transaction(step);
      // Motifs start whenever committed motif records fall behind the
      // requested share, which keeps label rates tight for any seed.
      while (fraud_committed_ + 1.0 < config_.fraud_rate * expected_total()) start_takeover(step);
      while (laundering_committed_ + 2.25 < config_.laundering_rate * expected_total()) start_layering(step);
    }
    run_due_actions(config_.n_steps + 1);
    return std::move(records_);
  }

 private:
  // Total record count implied by the normal records emitted so far.
  double expected_total() const {
    return static_cast<double>(normal_count_) / (1.0 - config_.fraud_rate - config_.laundering_rate);
  }

  // Pending second half of a motif, executed when its step comes up.
  struct Action {
    std::uint32_t step;
    enum class Kind { mule_cash_out, layering_hop } kind;
    std::size_t mule;            // index into mules_
    std::size_t hops_left = 0;   // for layering
    std::uint32_t window_end = 0;
  };

  struct Mule {
    std::string id;
    double balance = 0.0;
  };

  std::string open_account(char prefix) {
    // Distinct 9-digit ids in a scrambled order.
    const std::uint64_t n = next_id_++;
    const std::uint64_t scrambled = 100000000ULL + (n * 282475249ULL) % 900000000ULL;
    return prefix + std::to_string(scrambled);
  }

  std::uint32_t capped(std::uint32_t step) const { return std::min(step, config_.n_steps); }

  void emit(std::uint32_t step, TxType type, double amount, const std::string& orig, double ob, double nb,
            const std::string& dest, double odb, double ndb, PatternLabel label) {
    TransactionRecord r;
    r.step = std::min(step, config_.n_steps);
    r.type = type;
    r.amount = amount;
    r.orig_account = orig;
    r.orig_balance_before = ob;
    r.orig_balance_after = nb;
    r.dest_account = dest;
    r.dest_balance_before = odb;
    r.dest_balance_after = ndb;
    r.label = label;
    r.flagged_fraud = label == PatternLabel::fraud && type == TxType::transfer && amount > 200000.0;
    records_.push_back(std::move(r));
  }

  std::size_t pick_customer() { return rng_.uniform_below(customers_.size()); }

  std::size_t pick_other_customer(std::size_t not_this) {
    std::size_t j = pick_customer();
    if (j == not_this) j = (j + 1) % customers_.size();
    return j;
  }

  const TypeModel& pick_type() {
    double u = rng_.uniform();
    for (const auto& m : kNormalMix) {
      if (u < m.weight) return m;
      u -= m.weight;
    }
    return kNormalMix.front();
  }

  // Cash-in and cash-out counterparties come from a separate agent pool.
  std::size_t pick_agent() { return rng_.uniform_below(agents_.size()); }

  // Amounts scale with the account's income; spending that the balance
  // cannot cover turns into a top-up, so balances stay near their scale.
  void normal_transaction(std::uint32_t step) {
    ++normal_count_;
    const std::size_t a = pick_customer();
    const TypeModel* model = &pick_type();
    double& bal = balances_[a];
    const double base = std::max(scales_[a], bal / 4.0);
    double amount = cents(base * std::exp(rng_.normal(model->log_share, model->log_sigma)));

    if (is_outgoing(model->type)) {
      if (bal >= 1.0 && rng_.bernoulli(config_.normal_drain_rate)) {
        amount = bal;
      } else if (amount > bal) {
        model = &kNormalMix[2];
        amount = cents(scales_[a] * std::exp(rng_.normal(model->log_share, model->log_sigma)));
      }
    }
    amount = std::max(amount, 0.01);

    const double ob = bal;
    switch (model->type) {
      case TxType::payment:
      case TxType::debit: {
        bal = std::max(0.0, cents(ob - amount));
        const auto& m = merchants_[rng_.uniform_below(merchants_.size())];
        emit(step, model->type, amount, customers_[a], ob, bal, m, 0.0, 0.0, PatternLabel::normal);
        break;
      }
      case TxType::cash_in: {
        bal = cents(ob + amount);
        const std::size_t g = pick_agent();
        double& gb = agent_balances_[g];
        if (gb < amount) gb = cents(gb + std::exp(rng_.normal(13.0, 0.5)));  // agent restocks float
        const double db = gb;
        gb = cents(db - amount);
        emit(step, TxType::cash_in, amount, customers_[a], ob, bal, agents_[g], db, gb, PatternLabel::normal);
        break;
      }
      case TxType::cash_out: {
        bal = std::max(0.0, cents(ob - amount));
        const std::size_t g = pick_agent();
        const double db = agent_balances_[g];
        agent_balances_[g] = cents(db + amount);
        emit(step, TxType::cash_out, amount, customers_[a], ob, bal, agents_[g], db, agent_balances_[g],
             PatternLabel::normal);
        break;
      }
      default: {
        bal = std::max(0.0, cents(ob - amount));
        const std::size_t d = pick_other_customer(a);
        const double db = balances_[d];
        balances_[d] = cents(db + amount);
        emit(step, model->type, amount, customers_[a], ob, bal, customers_[d], db, balances_[d],
             PatternLabel::normal);
        break;
      }
    }
  }

  std::size_t new_mule() {
    mules_.push_back({open_account('C'), 0.0});
    return mules_.size() - 1;
  }

  // Account takeover: drain the victim into a fresh mule, cash out within
  // two steps.
  void start_takeover(std::uint32_t step) {
    std::size_t victim = pick_customer();
    for (int tries = 0; tries < 20 && balances_[victim] < 10000.0; ++tries) victim = pick_customer();
    double& bal = balances_[victim];
    if (bal < 1.0) bal = cents(scales_[victim] * rng_.uniform(0.5, 2.0));  // salary landed just before
    const double ob = bal;
    const double amount = std::min(ob, cents(ob * rng_.uniform(0.97, 1.0)));
    bal = std::max(0.0, cents(ob - amount));
    fraud_committed_ += 2;
    const std::size_t mule = new_mule();
    mules_[mule].balance = amount;
    emit(step, TxType::transfer, amount, customers_[victim], ob, bal, mules_[mule].id, 0.0, amount,
         PatternLabel::fraud);
    schedule({capped(step + static_cast<std::uint32_t>(rng_.uniform_below(3))), Action::Kind::mule_cash_out, mule});
  }

  // Layering: 3-6 transfers of near-equal amounts through fresh accounts
  // inside a six-step window.
  void start_layering(std::uint32_t step) {
    std::size_t source = pick_customer();
    for (int tries = 0; tries < 20 && balances_[source] < 20000.0; ++tries) source = pick_customer();
    double& bal = balances_[source];
    if (bal < 1.0) bal = cents(scales_[source] * rng_.uniform(0.5, 2.0));
    const double ob = bal;
    const double amount = cents(ob * rng_.uniform(0.3, 0.7));
    bal = std::max(0.0, cents(ob - amount));
    const std::size_t mule = new_mule();
    mules_[mule].balance = amount;
    emit(step, TxType::transfer, amount, customers_[source], ob, bal, mules_[mule].id, 0.0, amount,
         PatternLabel::laundering);
    const std::size_t total_hops = 3 + rng_.uniform_below(4);
    laundering_committed_ += total_hops;
    const std::uint32_t window_end = step + 5;
    schedule({capped(step + static_cast<std::uint32_t>(rng_.uniform_below(2))), Action::Kind::layering_hop, mule,
              total_hops - 1, window_end});
  }

  void schedule(Action a) {
    // Keep the queue ordered by step; ties stay in insertion order.
    auto pos = std::upper_bound(pending_.begin(), pending_.end(), a.step,
                                [](std::uint32_t s, const Action& x) { return s < x.step; });
    pending_.insert(pos, a);
  }

  void run_due_actions(std::uint32_t step) {
    while (!pending_.empty() && pending_.front().step <= step) {
      Action a = pending_.front();
      pending_.pop_front();
      execute(a);
    }
  }

  void execute(const Action& a) {
    const double ob = mules_[a.mule].balance;
    const std::string from = mules_[a.mule].id;
    if (a.kind == Action::Kind::mule_cash_out) {
      const std::size_t g = pick_agent();
      const double db = agent_balances_[g];
      agent_balances_[g] = cents(db + ob);
      mules_[a.mule].balance = 0.0;
      emit(a.step, TxType::cash_out, ob, from, ob, 0.0, agents_[g], db, agent_balances_[g], PatternLabel::fraud);
      return;
    }
    const double amount = std::min(ob, cents(ob * rng_.uniform(0.95, 1.0)));
    const double left = std::max(0.0, cents(ob - amount));
    mules_[a.mule].balance = left;
    const std::size_t next = new_mule();
    mules_[next].balance = amount;
    emit(a.step, TxType::transfer, amount, from, ob, left, mules_[next].id, 0.0, amount,
         PatternLabel::laundering);
    if (a.hops_left > 1) {
      const std::uint32_t next_step =
          std::min(a.window_end, a.step + static_cast<std::uint32_t>(rng_.uniform_below(2)));
      schedule({capped(next_step), Action::Kind::layering_hop, next, a.hops_left - 1, a.window_end});
    }
  }

  GeneratorConfig config_;
  DeterministicRng rng_;
  std::uint64_t next_id_ = 0;
  std::vector<std::string> customers_;
  std::vector<double> balances_;
  std::vector<double> scales_;
  std::vector<std::string> merchants_;
  std::vector<std::string> agents_;
  std::vector<double> agent_balances_;
  std::vector<Mule> mules_;
  std::deque<Action> pending_;
  std::size_t normal_count_ = 0;
  double fraud_committed_ = 0.0;
  double laundering_committed_ = 0.0;
  std::vector<TransactionRecord> records_;
};

}  // namespace detail

// Deterministic agent-based payment flow with three behaviour patterns:
// ordinary customer traffic, account-takeover fraud (TRANSFER of nearly the
// whole balance to a fresh account, then CASH_OUT within two steps) and
// layering chains (3-6 similar TRANSFERs through fresh accounts within six
// steps). Records come out in step order.
inline std::vector<TransactionRecord> generate_synthetic(const GeneratorConfig& config) {
  validate(config);
  return detail::FlowSimulator(config).run();
}

}  // namespace flowguard::payflow
