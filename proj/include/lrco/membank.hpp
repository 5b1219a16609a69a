#pragma once

#include <cstddef>
#include <deque>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "lrco/numerics.hpp"

namespace lrco {

// A stored key plus the teacher's view of the sample it came from. The
// pseudo label and confidence flag are only consulted by the sample-selection
// ablations.
struct BankEntry {
    Vector key;
    std::size_t pseudo_label = 0;
    bool confident = false;

    friend bool operator==(const BankEntry&, const BankEntry&) = default;
};

// Immutable copy of the bank contents, oldest first.
class BankSnapshot {
public:
    BankSnapshot() : entries_(std::make_shared<const std::vector<BankEntry>>()) {}
    explicit BankSnapshot(std::vector<BankEntry> entries)
        : entries_(std::make_shared<const std::vector<BankEntry>>(std::move(entries))) {}

    std::span<const BankEntry> entries() const { return *entries_; }
    std::size_t size() const { return entries_->size(); }
    bool empty() const { return entries_->empty(); }

    /// Keys only, in order.
    std::vector<Vector> keys() const;

private:
    std::shared_ptr<const std::vector<BankEntry>> entries_;
};

// Fixed-capacity FIFO of unit-norm teacher keys.
class MemoryBank {
public:
    explicit MemoryBank(std::size_t capacity = 512);

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    /// Appends in order, evicting oldest-first. Throws NumericError on a
    /// non-unit key and leaves the bank untouched.
    void push_batch(std::span<const BankEntry> batch);
    void push_batch(std::span<const Vector> keys);

    BankSnapshot snapshot() const;

    friend bool operator==(const MemoryBank& a, const MemoryBank& b) {
        return a.capacity_ == b.capacity_ && a.entries_ == b.entries_;
    }

private:
    std::size_t capacity_;
    std::deque<BankEntry> entries_;
};

nlohmann::json bank_to_json(const MemoryBank& bank);
MemoryBank bank_from_json(const nlohmann::json& j);

}  // namespace lrco
