#include "lrco/membank.hpp"

#include <cmath>

#include "lrco/losses.hpp"

namespace lrco {

std::vector<Vector> BankSnapshot::keys() const {
    std::vector<Vector> out;
    out.reserve(entries_->size());
    for (const BankEntry& e : *entries_) out.push_back(e.key);
    return out;
}

MemoryBank::MemoryBank(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("memory bank capacity must be >= 1");
}

void MemoryBank::push_batch(std::span<const BankEntry> batch) {
    for (const BankEntry& e : batch) {
        if (std::abs(norm(e.key) - 1.0) > kUnitTolerance) throw NumericError("memory bank: non-unit key");
    }
    for (const BankEntry& e : batch) {
        entries_.push_back(e);
        if (entries_.size() > capacity_) entries_.pop_front();
    }
}

void MemoryBank::push_batch(std::span<const Vector> keys) {
    std::vector<BankEntry> batch;
    batch.reserve(keys.size());
    for (const Vector& k : keys) batch.push_back({k, 0, false});
    push_batch(std::span<const BankEntry>(batch));
}

BankSnapshot MemoryBank::snapshot() const {
    return BankSnapshot(std::vector<BankEntry>(entries_.begin(), entries_.end()));
}

nlohmann::json bank_to_json(const MemoryBank& bank) {
    nlohmann::json entries = nlohmann::json::array();
    const BankSnapshot snap = bank.snapshot();
    for (const BankEntry& e : snap.entries()) {
        entries.push_back({{"key", e.key}, {"pseudo_label", e.pseudo_label}, {"confident", e.confident}});
    }
    return {{"capacity", bank.capacity()}, {"entries", entries}};
}

MemoryBank bank_from_json(const nlohmann::json& j) {
    MemoryBank bank(j.at("capacity").get<std::size_t>());
    std::vector<BankEntry> entries;
    for (const auto& e : j.at("entries")) {
        entries.push_back({e.at("key").get<Vector>(), e.at("pseudo_label").get<std::size_t>(),
                           e.at("confident").get<bool>()});
    }
    bank.push_batch(std::span<const BankEntry>(entries));
    return bank;
}

}  // namespace lrco
