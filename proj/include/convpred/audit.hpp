#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace convpred {

// One audit event: a tag plus key/value details. Serialized as one JSON
// object per line so logs can be appended and grepped.
struct AuditEntry {
    std::string event;
    std::map<std::string, std::string> fields;
};

class AuditLog {
public:
    void note(std::string event, std::map<std::string, std::string> fields = {}) {
        entries_.push_back({std::move(event), std::move(fields)});
    }
    void merge(const AuditLog& other) {
        entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
    }
    const std::vector<AuditEntry>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }
    size_t count(const std::string& event) const {
        size_t n = 0;
        for (const auto& e : entries_)
            if (e.event == event) ++n;
        return n;
    }

    std::string to_ndjson() const;
    void write_ndjson(const std::filesystem::path& path) const;

private:
    std::vector<AuditEntry> entries_;
};

}  // namespace convpred
